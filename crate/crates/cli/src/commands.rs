//! Subcommand implementations. Each returns whether its gates passed; errors
//! propagate to a nonzero exit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use ccvfm::coreset::{fit_coreset, CoresetGmm, FitConfig, LambdaSpec};
use ccvfm::correction::{train_correction, Coupling, CorrectionNet, TrainConfig, TrainTime};
use ccvfm::datasets::{read_csv, sample_target, write_csv, Dataset, PointCloud};
use ccvfm::metrics::{evaluate, EvalOptions, Metric};
use ccvfm::repro::{run_table5, toy_preset, Table5};
use ccvfm::rng::derive_seed;
use ccvfm::sampler::{generate, GenConfig};
use ccvfm::theory::{
    decomposition_sweep, quantization_rate, verify_euler, verify_marginal_preservation, verify_second_moments,
    verify_transport_gap, RateConfig, SweepConfig, TheoryReport,
};

use crate::config::RunConfig;

pub const VERSION: &str = concat!("ccvfm ", env!("CARGO_PKG_VERSION"));

pub const CHECKS: [&str; 6] = ["thm1", "marginal", "moments", "rate", "decomposition", "euler"];

/// Where a run came from; embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Input role to `sha256:<hex>` of the file, or a builtin descriptor.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        let config: BTreeMap<String, String> = cfg.entries().map(|(k, v)| (k.clone(), v.clone())).collect();
        let seeds = config
            .iter()
            .filter(|(k, _)| k.as_str() == "seed" || k.ends_with("_seed"))
            .filter_map(|(k, v)| v.parse().ok().map(|s| (k.clone(), s)))
            .collect();
        Self {
            version: VERSION.into(),
            command: command.into(),
            config,
            seeds,
            inputs: BTreeMap::new(),
        }
    }

    fn input_file(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {role} file {}", path.display()))?;
        self.inputs.insert(role.into(), format!("sha256:{}", hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    fn input_builtin(&mut self, role: &str, desc: String) {
        self.inputs.insert(role.into(), desc);
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// `# key=value` header lines for CSV outputs.
    fn csv_lines(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("version".to_string(), self.version.clone()),
            ("command".to_string(), self.command.clone()),
        ];
        out.extend(self.inputs.iter().map(|(k, v)| (format!("input.{k}"), v.clone())));
        out.extend(self.config.iter().map(|(k, v)| (format!("config.{k}"), v.clone())));
        out
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

fn write_envelope<T: Serialize>(out: &Path, prov: &Provenance, result: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Envelope { provenance: prov, result })?;
    std::fs::write(out, text + "\n").with_context(|| format!("writing {}", out.display()))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Training data: the `data` CSV when set, else the builtin target.
fn load_data(cfg: &RunConfig, prov: &mut Provenance) -> Result<PointCloud> {
    match cfg.path("data") {
        Some(p) => {
            prov.input_file("data", p)?;
            read_csv(p).with_context(|| format!("loading data {}", p.display()))
        }
        None => {
            let name = cfg.str("dataset");
            let n: usize = cfg.get("n_data")?;
            let seed: u64 = cfg.get("data_seed")?;
            prov.input_builtin("data", format!("builtin:{name}:n={n}:seed={seed}"));
            Ok(sample_target(name, n, seed)?)
        }
    }
}

fn require<'a>(cfg: &'a RunConfig, key: &str, what: &str) -> Result<&'a Path> {
    cfg.path(key).ok_or_else(|| anyhow!("{what} is required: pass --{key} <path> or set `{key}`"))
}

fn load_model(cfg: &RunConfig, prov: &mut Provenance) -> Result<CoresetGmm> {
    let p = require(cfg, "model", "a coreset model")?;
    prov.input_file("model", p)?;
    CoresetGmm::load_json(p).with_context(|| format!("loading model {}", p.display()))
}

fn fit_config(cfg: &RunConfig) -> Result<FitConfig> {
    let lambda = match cfg.str("lambda_mode") {
        "fixed" => LambdaSpec::Fixed { lambda: cfg.get("lambda")? },
        "schedule" => LambdaSpec::Schedule { scale: cfg.get("lambda_scale")? },
        other => bail!("config key `lambda_mode` = `{other}`: expected fixed or schedule"),
    };
    Ok(FitConfig {
        k: cfg.get("k")?,
        rank: cfg.get("rank")?,
        lambda,
        iters: cfg.get("fit_iters")?,
        seed: cfg.get("fit_seed")?,
    })
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let train_t = match cfg.str("train_t") {
        "0" => TrainTime::Zero,
        s => match s.strip_prefix("grid:") {
            Some(j) => TrainTime::Grid {
                points: j.parse().map_err(|e| anyhow!("config key `train_t` = `{s}`: {e}"))?,
            },
            None => bail!("config key `train_t` = `{s}`: expected 0 or grid:J"),
        },
    };
    let t = TrainConfig {
        iters: cfg.get("iters")?,
        batch: cfg.get("batch")?,
        learning_rate: cfg.get("learning_rate")?,
        adam_beta1: cfg.get("adam_beta1")?,
        adam_beta2: cfg.get("adam_beta2")?,
        adam_eps: cfg.get("adam_eps")?,
        ema_decay: cfg.get("ema_decay")?,
        coupling: cfg.str("coupling").parse::<Coupling>()?,
        train_t,
        hidden: cfg.list("hidden")?,
        seed: cfg.get("train_seed")?,
    };
    t.validate()?;
    Ok(t)
}

fn gen_config(cfg: &RunConfig) -> Result<GenConfig> {
    let grid: Vec<f64> = cfg.list("outer_grid")?;
    let g = GenConfig {
        j: cfg.get("j")?,
        l: cfg.get("l")?,
        outer_grid: (!grid.is_empty()).then_some(grid),
        n: cfg.get("n")?,
        seed: cfg.get("gen_seed")?,
        use_ema: cfg.flag("use_ema")?,
    };
    g.validate()?;
    Ok(g)
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut prov = Provenance::new("fit", cfg);
    let data = load_data(cfg, &mut prov)?;
    let fc = fit_config(cfg)?;
    let (mut model, fit) = fit_coreset(&data, &fc)?;
    model.provenance = Some(prov.to_value());
    model.save_json(out).with_context(|| format!("writing {}", out.display()))?;
    let tr = &fit.objective_trace;
    println!(
        "fit: K={} r={} lambda={} iters={} objective {:.6} -> {:.6}, reseeds {}, sigma^2 {:.6}",
        model.k(),
        model.r(),
        model.lambda(),
        tr.len(),
        tr.first().copied().unwrap_or(f64::NAN),
        tr.last().copied().unwrap_or(f64::NAN),
        fit.reseeds,
        model.shared_noise()
    );
    Ok(true)
}

fn write_samples(pc: &PointCloud, out: &Path, prov: &Provenance, nfe: usize) -> Result<()> {
    let mut extra = vec![("nfe".to_string(), nfe.to_string())];
    extra.extend(prov.csv_lines());
    write_csv(pc, out, &extra).with_context(|| format!("writing {}", out.display()))
}

pub fn cmd_sample_stage2(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut prov = Provenance::new("sample-stage2", cfg);
    let model = load_model(cfg, &mut prov)?;
    let g = GenConfig { j: 1, l: 0, outer_grid: None, n: cfg.get("n")?, seed: cfg.get("gen_seed")?, use_ema: true };
    let pc = generate(&model, None, &g)?;
    write_samples(&pc, out, &prov, g.nfe())?;
    println!("sample-stage2: {} samples, NFE {}", pc.n(), g.nfe());
    Ok(true)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut prov = Provenance::new("train", cfg);
    let model = load_model(cfg, &mut prov)?;
    let data = load_data(cfg, &mut prov)?;
    let tc = train_config(cfg)?;
    let outcome = train_correction(&model, &data, &tc)?;
    let mut net = outcome.net.clone();
    net.provenance = Some(prov.to_value());
    net.save_json(out).with_context(|| format!("writing {}", out.display()))?;
    let loss_path = sibling(out, ".loss.csv");
    std::fs::write(&loss_path, outcome.loss_csv()).with_context(|| format!("writing {}", loss_path.display()))?;
    let last = outcome.loss_trace.last().copied();
    println!(
        "train: {} iterations, coupling {}, final loss {}",
        outcome.loss_trace.len(),
        tc.coupling,
        last.map_or("-".into(), |l| format!("{l:.6}"))
    );
    Ok(true)
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut prov = Provenance::new("generate", cfg);
    let model = load_model(cfg, &mut prov)?;
    let g = gen_config(cfg)?;
    let net = match cfg.path("net") {
        Some(p) => {
            prov.input_file("net", p)?;
            Some(CorrectionNet::load_json(p).with_context(|| format!("loading net {}", p.display()))?)
        }
        None if g.l == 0 => None,
        None => bail!("L = {} needs a correction net: pass --net <path> or set l = 0", g.l),
    };
    let pc = generate(&model, net.as_ref(), &g)?;
    write_samples(&pc, out, &prov, g.nfe())?;
    println!("generate: {} samples, J={} L={} NFE {}", pc.n(), g.j, g.l, g.nfe());
    Ok(true)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut prov = Provenance::new("eval", cfg);
    let gp = require(cfg, "gen", "a generated sample file")?;
    prov.input_file("gen", gp)?;
    let gen = read_csv(gp).with_context(|| format!("loading {}", gp.display()))?;
    let reference = match cfg.path("ref") {
        Some(p) => {
            prov.input_file("ref", p)?;
            read_csv(p).with_context(|| format!("loading {}", p.display()))?
        }
        None => {
            let n = match cfg.str("ref_n") {
                "" => gen.n(),
                _ => cfg.get("ref_n")?,
            };
            let (name, seed): (&str, u64) = (cfg.str("dataset"), cfg.get("ref_seed")?);
            prov.input_builtin("ref", format!("builtin:{name}:n={n}:seed={seed}"));
            sample_target(name, n, seed)?
        }
    };
    let metrics: Vec<Metric> = cfg.list("metrics")?;
    let opts = EvalOptions {
        n_proj: cfg.get("n_proj")?,
        seed: cfg.get("eval_seed")?,
        pr_k: cfg.get("pr_k")?,
        dataset: Some(cfg.str("dataset").to_string()),
        keep_distances: cfg.flag("keep_distances")?,
    };
    let report = evaluate(&gen, &reference, &metrics, &opts)?;
    write_envelope(out, &prov, &report)?;
    if let (Some(g), Some(r)) = (&report.gen_nn_distances, &report.ref_nn_distances) {
        let mut csv = String::from("gen_nn,ref_nn\n");
        for (a, b) in g.iter().zip(r) {
            csv.push_str(&format!("{a},{b}\n"));
        }
        std::fs::write(sibling(out, ".nn.csv"), csv)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(true)
}

/// The model under test: the `model` file when set, else a fresh fit.
fn model_for_check(cfg: &RunConfig, prov: &mut Provenance, data: &PointCloud) -> Result<CoresetGmm> {
    if cfg.path("model").is_some() {
        return load_model(cfg, prov);
    }
    Ok(fit_coreset(data, &fit_config(cfg)?)?.0)
}

pub fn run_check(check: &str, cfg: &RunConfig, prov: &mut Provenance) -> Result<TheoryReport> {
    let seed: u64 = cfg.get("seed")?;
    Ok(match check {
        "thm1" => {
            let data = load_data(cfg, prov)?;
            let model = model_for_check(cfg, prov, &data)?;
            let name = cfg.str("dataset");
            let target = sample_target(name, cfg.get("target_n")?, derive_seed(seed, &[0x7A]))?;
            verify_transport_gap(&model, &target, cfg.get("budget")?, cfg.get("pairs")?, seed)?
        }
        "marginal" => {
            let data = load_data(cfg, prov)?;
            let model = model_for_check(cfg, prov, &data)?;
            verify_marginal_preservation(&model, &data, cfg.get("marginal_draws")?, seed)?
        }
        "moments" => {
            let data = load_data(cfg, prov)?;
            let model = model_for_check(cfg, prov, &data)?;
            verify_second_moments(&model, &data, cfg.get("moment_draws")?, cfg.get("moment_sources")?, seed)?
        }
        "rate" => quantization_rate(&RateConfig {
            k_grid: cfg.list("rate_k_grid")?,
            n: cfg.get("rate_n")?,
            budget: cfg.get("budget")?,
            lambda_scale: cfg.get("rate_lambda_scale")?,
            iters: cfg.get("fit_iters")?,
            seed,
        })?,
        "decomposition" => {
            let ds: Dataset = cfg.str("dataset").parse()?;
            let fc = fit_config(cfg)?;
            decomposition_sweep(
                ds,
                &Default::default(),
                &SweepConfig {
                    n_grid: cfg.list("sweep_n_grid")?,
                    k_grid: cfg.list("sweep_k_grid")?,
                    rank: fc.rank,
                    lambda: fc.lambda,
                    iters: fc.iters,
                    budget: cfg.get("budget")?,
                    seed,
                },
            )?
        }
        "euler" => verify_euler(),
        other => bail!("unknown check `{other}`; valid checks: {}", CHECKS.join(", ")),
    })
}

pub fn cmd_verify(check: &str, cfg: &RunConfig, out: &Path) -> Result<bool> {
    if !CHECKS.contains(&check) {
        bail!("unknown check `{check}`; valid checks: {}", CHECKS.join(", "));
    }
    let mut prov = Provenance::new(&format!("verify {check}"), cfg);
    let report = run_check(check, cfg, &mut prov)?;
    write_envelope(out, &prov, &report)?;
    if !report.sweep.is_empty() {
        std::fs::write(sibling(out, ".csv"), report.sweep_csv())?;
    }
    for r in &report.results {
        println!(
            "{} {}: measured {:.6} vs {:.6} ({:?})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.reference,
            r.relation
        );
    }
    Ok(report.passed)
}

pub fn cmd_repro(what: &str, cfg: &RunConfig, out: &Path) -> Result<bool> {
    if what != "table5" {
        bail!("unknown repro target `{what}`; valid targets: table5");
    }
    let prov = Provenance::new("repro table5", cfg);
    let seed: u64 = cfg.get("repro_seed")?;
    let iters: Option<usize> = match cfg.str("repro_iters") {
        "" => None,
        _ => Some(cfg.get("repro_iters")?),
    };
    let presets: Vec<_> = cfg
        .list::<Dataset>("datasets")?
        .into_iter()
        .map(|ds| {
            let mut p = toy_preset(ds);
            p.seed = seed;
            if let Some(it) = iters {
                p.correction.iters = it;
                p.meanfield.iters = it;
            }
            p
        })
        .collect();
    let table: Table5 = run_table5(&presets)?;
    for b in &table.blocks {
        info!("{}: {:.1} s", b.dataset.name(), b.seconds);
    }
    let md = table.to_markdown();
    std::fs::write(out, &md).with_context(|| format!("writing {}", out.display()))?;
    write_envelope(&sibling(out, ".json"), &prov, &table)?;
    print!("{md}");
    Ok(true)
}
