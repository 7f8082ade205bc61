use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccvfm::datasets::read_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ccvfm"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn ccvfm")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

/// A fitted ring model on a small builtin sample.
fn fitted(dir: &Path) -> PathBuf {
    ok(dir, &["fit", "--set", "n_data=1500", "--out", "m.json"]);
    dir.join("m.json")
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        fitted(dir);
        ok(dir, &["train", "--model", "m.json", "--iters", "50", "--set", "hidden=16,16", "--set", "n_data=1500", "--out", "net.json"]);
        ok(dir, &["generate", "--model", "m.json", "--net", "net.json", "-n", "500", "-L", "2", "--out", "g.csv"]);
        ok(dir, &["eval", "--gen", "g.csv", "--metrics", "sw2,mode_tv,knn", "--out", "e.json"]);
    }
    for f in ["m.json", "net.json", "net.json.loss.csv", "g.csv", "e.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs between reruns");
    }
}

#[test]
fn outputs_carry_provenance() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fitted(dir);
    ok(dir, &["generate", "--model", "m.json", "-L", "0", "-n", "10", "--out", "g.csv"]);
    let text = String::from_utf8(read(dir, "g.csv")).unwrap();
    assert!(text.contains("# version=ccvfm "));
    assert!(text.contains("# input.model=sha256:"));
    let m: serde_json::Value = serde_json::from_slice(&read(dir, "m.json")).unwrap();
    assert_eq!(m["provenance"]["command"], "fit");
    assert_eq!(m["provenance"]["seeds"]["fit_seed"], 0);
    assert!(m["provenance"]["inputs"]["data"].as_str().unwrap().starts_with("builtin:ring6"));
}

#[test]
fn nfe_header_matches_the_step_budget() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fitted(dir);
    ok(dir, &["train", "--model", "m.json", "--iters", "5", "--set", "hidden=8", "--set", "n_data=1500", "--out", "net.json"]);
    let nfe = |name: &str| {
        let text = String::from_utf8(read(dir, name)).unwrap();
        text.lines().find_map(|l| l.strip_prefix("# nfe=")).unwrap().parse::<usize>().unwrap()
    };
    ok(dir, &["sample-stage2", "--model", "m.json", "-n", "10", "--out", "s.csv"]);
    assert_eq!(nfe("s.csv"), 1);
    ok(dir, &["generate", "--model", "m.json", "--net", "net.json", "-n", "10", "-L", "8", "--out", "a.csv"]);
    assert_eq!(nfe("a.csv"), 9);
    ok(dir, &["generate", "--model", "m.json", "--net", "net.json", "-n", "10", "-J", "4", "-L", "2", "--out", "b.csv"]);
    assert_eq!(nfe("b.csv"), 8);
}

#[test]
fn one_outer_step_without_correction_is_the_surrogate_draw() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fitted(dir);
    ok(dir, &["sample-stage2", "--model", "m.json", "-n", "300", "--out", "s.csv"]);
    ok(dir, &["generate", "--model", "m.json", "-J", "1", "-L", "0", "-n", "300", "--out", "g.csv"]);
    let s = read_csv(&dir.join("s.csv")).unwrap();
    let g = read_csv(&dir.join("g.csv")).unwrap();
    assert_eq!(s.points, g.points);
}

#[test]
fn empty_sample_files_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fitted(dir);
    ok(dir, &["sample-stage2", "--model", "m.json", "-n", "0", "--out", "s.csv"]);
    let s = read_csv(&dir.join("s.csv")).unwrap();
    assert_eq!((s.n(), s.d()), (0, 2));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    std::fs::write(dir.join("run.cfg"), "k = 5\nn_data = 800\nfit_iters = 10\n").unwrap();
    ok(dir, &["fit", "--config", "run.cfg", "--out", "a.json"]);
    ok(dir, &["fit", "--config", "run.cfg", "--k", "7", "--out", "b.json"]);
    let k = |f: &str| serde_json::from_slice::<serde_json::Value>(&read(dir, f)).unwrap()["K"].as_u64().unwrap();
    assert_eq!((k("a.json"), k("b.json")), (5, 7));
}

#[test]
fn bad_requests_exit_with_code_two() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cases: [(&[&str], &str); 4] = [
        (&["verify", "nope", "--out", "x.json"], "unknown check"),
        (&["fit", "--set", "kk=1", "--out", "x.json"], "unknown config key `kk`"),
        (&["generate", "-L", "3", "--out", "x.csv"], "coreset model is required"),
        (&["sample-stage2", "--model", "missing.json", "--out", "x.csv"], "missing.json"),
    ];
    for (args, needle) in cases {
        let o = run(dir, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}

#[test]
fn mode_tv_on_a_modeless_dataset_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    ok(dir, &["fit", "--dataset", "moons", "--set", "n_data=800", "--set", "fit_iters=10", "--out", "m.json"]);
    ok(dir, &["sample-stage2", "--model", "m.json", "-n", "200", "--out", "s.csv"]);
    let o = run(dir, &["eval", "--gen", "s.csv", "--dataset", "moons", "--metrics", "mode_tv", "--out", "e.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("moons"));
}

#[test]
fn verify_writes_a_report_and_exits_by_gate() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    ok(dir, &["verify", "euler", "--out", "v.json"]);
    let v: serde_json::Value = serde_json::from_slice(&read(dir, "v.json")).unwrap();
    assert_eq!(v["result"]["check"], "euler");
    assert_eq!(v["result"]["passed"], true);
    assert_eq!(v["provenance"]["command"], "verify euler");
}
