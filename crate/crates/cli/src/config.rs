//! Flat `key = value` run configuration.
//!
//! Resolution order is defaults, then the config file, then command-line
//! overrides. Unknown keys are rejected at every layer.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dataset", "ring6", "builtin target when `data` is empty"),
    ("data", "", "point-cloud CSV; overrides the builtin target"),
    ("n_data", "5000", "builtin training sample size"),
    ("data_seed", "0", "builtin training sample seed"),
    ("k", "12", "coreset size K"),
    ("rank", "1", "low-rank factor width r"),
    ("lambda", "0.05", "Sinkhorn bandwidth (fixed mode)"),
    ("lambda_mode", "fixed", "fixed | schedule"),
    ("lambda_scale", "1.0", "scale in lambda = scale * K^(-2/d) (schedule mode)"),
    ("fit_iters", "100", "EMS outer iterations"),
    ("fit_seed", "0", "EMS initialization seed"),
    ("iters", "5000", "training iterations"),
    ("batch", "256", "training batch size"),
    ("learning_rate", "0.0002", "Adam step size"),
    ("adam_beta1", "0.9", "Adam beta1"),
    ("adam_beta2", "0.999", "Adam beta2"),
    ("adam_eps", "1e-8", "Adam epsilon"),
    ("ema_decay", "0.9999", "EMA decay of the weights"),
    ("coupling", "sinkhorn_anchored", "direct_prior | sinkhorn_anchored | is_tilted | independent_gaussian"),
    ("train_t", "0", "0, or grid:J for t uniform on {0, 1/J, ...} (experimental)"),
    ("hidden", "128,128,128", "hidden layer widths"),
    ("train_seed", "0", "training seed"),
    ("j", "1", "outer steps J"),
    ("l", "8", "inner Euler steps L"),
    ("outer_grid", "", "explicit outer grid, comma separated; uniform when empty"),
    ("n", "5000", "number of generated samples"),
    ("gen_seed", "0", "generation seed"),
    ("use_ema", "true", "generate with EMA weights"),
    ("metrics", "sw2", "comma list of sw2, mode_tv, helix_dist, knn, pr"),
    ("n_proj", "200", "sliced-W2 projections"),
    ("eval_seed", "0", "projection seed"),
    ("pr_k", "5", "k of the k-NN radii for precision/recall"),
    ("keep_distances", "false", "attach nearest-neighbour distance arrays"),
    ("ref_n", "", "builtin reference pool size; the generated pool size when empty"),
    ("ref_seed", "1", "builtin reference pool seed"),
    ("model", "", "coreset model JSON"),
    ("net", "", "correction net JSON"),
    ("gen", "", "generated samples CSV to evaluate"),
    ("ref", "", "reference samples CSV; builtin target when empty"),
    ("seed", "0", "seed of the verification checks"),
    ("target_n", "20000", "fresh target pool for the surrogate gap"),
    ("budget", "512", "exact-W2 pool size (at most 1024)"),
    ("pairs", "8", "resampled pool pairs for the surrogate gap"),
    ("marginal_draws", "100000", "label draws for the marginal check"),
    ("moment_draws", "1000000", "pair draws per coupling for the moment check"),
    ("moment_sources", "10", "fixed source points for the moment check"),
    ("rate_k_grid", "4,16,64,256", "K values of the quantization-rate sweep"),
    ("rate_n", "10000", "uniform-square sample size"),
    ("rate_lambda_scale", "0.1", "bandwidth scale of the rate sweep"),
    ("sweep_n_grid", "500,2000,10000", "n values of the decomposition sweep"),
    ("sweep_k_grid", "2,5,10,25,50,100", "K values of the decomposition sweep"),
    ("datasets", "ring6,moons,pinwheel,helix3d", "datasets of the toy grid"),
    ("repro_seed", "0", "seed of the toy grid"),
    ("repro_iters", "", "training iterations of the toy grid; preset value when empty"),
];

/// Fully resolved configuration: every known key has a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn unknown(key: &str, origin: &str) -> anyhow::Error {
    let valid: Vec<&str> = KEYS.iter().map(|(k, _, _)| *k).collect();
    anyhow!("unknown config key `{key}` ({origin}); valid keys: {}", valid.join(", "))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("override `{s}` is not key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config_text(&text).with_context(|| format!("in config {}", path.display()))? {
                if !is_known(&k) {
                    return Err(unknown(&k, &format!("config file {}", path.display())));
                }
                cfg.values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            if !is_known(k) {
                return Err(unknown(k, "command line"));
            }
            cfg.values.insert(k.clone(), v.clone());
        }
        Ok(cfg)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no config key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse::<T>().map_err(|e| anyhow!("config key `{key}` = `{raw}`: {e}"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| anyhow!("config key `{key}` item `{}`: {e}", p.trim())))
            .collect()
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => bail!("config key `{key}` = `{other}`: expected true or false"),
        }
    }

    pub fn path(&self, key: &str) -> Option<&Path> {
        let v = self.str(key);
        (!v.is_empty()).then(|| Path::new(v))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    /// The config as `key = value` text that parses back to itself.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = parse_config_text("# header\nk = 16  # inline\n\n lambda=0.1\n").unwrap();
        assert_eq!(kv, vec![("k".into(), "16".into()), ("lambda".into(), "0.1".into())]);
        assert!(parse_config_text("k 16").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "k = 16\nrank = 0\n").unwrap();
        let cfg = RunConfig::resolve(Some(&p), &[("k".into(), "20".into())]).unwrap();
        assert_eq!(cfg.get::<usize>("k").unwrap(), 20);
        assert_eq!(cfg.get::<usize>("rank").unwrap(), 0);
        assert_eq!(cfg.get::<usize>("batch").unwrap(), 256);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cfg");
        std::fs::write(&p, "kk = 3\n").unwrap();
        let e = RunConfig::resolve(Some(&p), &[]).unwrap_err();
        assert!(format!("{e:#}").contains("kk"));
        assert!(RunConfig::resolve(None, &[("nope".into(), "1".into())]).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let cfg = RunConfig::resolve(None, &[("hidden".into(), "8,8".into())]).unwrap();
        let back = RunConfig::resolve(None, &parse_config_text(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.list::<usize>("hidden").unwrap(), vec![8, 8]);
    }

    #[test]
    fn typed_getters_report_the_key() {
        let cfg = RunConfig::resolve(None, &[("k".into(), "many".into())]).unwrap();
        assert!(cfg.get::<usize>("k").unwrap_err().to_string().contains("`k`"));
    }
}
