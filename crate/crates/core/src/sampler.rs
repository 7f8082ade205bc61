//! Generation: the one-outer-step sampler, the nested sampler over an outer
//! time grid, the mean-field baseline integrator and an Euler convergence
//! harness.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coreset::CoresetGmm;
use crate::correction::{CorrectionNet, NetMode};
use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::rng;
use crate::velocity::sample_surrogate_into;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Outer steps.
    pub j: usize,
    /// Inner Euler steps per outer node.
    pub l: usize,
    /// Explicit outer grid `0 = t_0 < ... < t_J = 1`; uniform when absent.
    pub outer_grid: Option<Vec<f64>>,
    pub n: usize,
    pub seed: u64,
    pub use_ema: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            j: 1,
            l: 8,
            outer_grid: None,
            n: 5000,
            seed: 0,
            use_ema: true,
        }
    }
}

impl GenConfig {
    pub fn grid(&self) -> Vec<f64> {
        match &self.outer_grid {
            Some(g) => g.clone(),
            None => (0..=self.j).map(|i| i as f64 / self.j as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::InvalidArgument("J must be >= 1".into()));
        }
        if self.l == 0 && self.j > 1 {
            return Err(Error::InvalidArgument("L = 0 is only allowed with J = 1".into()));
        }
        let g = self.grid();
        if g.len() != self.j + 1 || g[0] != 0.0 || g[self.j] != 1.0 || g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "outer grid must be strictly increasing from 0 to 1 with J + 1 = {} points, got {g:?}",
                self.j + 1
            )));
        }
        Ok(())
    }

    /// `L + 1` for one outer step (the surrogate draw counts once), `J L`
    /// otherwise.
    pub fn nfe(&self) -> usize {
        if self.j == 1 {
            self.l + 1
        } else {
            self.j * self.l
        }
    }
}

fn check_net(model: &CoresetGmm, net: Option<&CorrectionNet>, l: usize) -> Result<()> {
    match net {
        Some(net) => {
            if net.mode() != NetMode::Correction {
                return Err(Error::InvalidArgument("generation needs a correction net".into()));
            }
            if net.d() != model.d() {
                return Err(Error::DimensionMismatch { expected: model.d(), got: net.d() });
            }
            Ok(())
        }
        None if l == 0 => Ok(()),
        None => Err(Error::InvalidArgument("L > 0 needs a correction net".into())),
    }
}

fn sample_stream(seed: u64, i: usize) -> rng::Rng {
    rng::stream(seed, &[0x6E4, i as u64])
}

fn draw_sources(d: usize, n: usize, seed: u64) -> (Array2<f64>, Vec<rng::Rng>) {
    let mut x0 = Array2::zeros((n, d));
    let mut rngs = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = sample_stream(seed, i);
        for j in 0..d {
            x0[[i, j]] = r.sample(StandardNormal);
        }
        rngs.push(r);
    }
    (x0, rngs)
}

fn draw_velocities(model: &CoresetGmm, z: &Array2<f64>, t: f64, rngs: &mut [rng::Rng]) -> Result<Array2<f64>> {
    let mut v = Array2::zeros(z.dim());
    for (i, r) in rngs.iter_mut().enumerate() {
        let mut row = v.row_mut(i);
        sample_surrogate_into(model, z.row(i), t, r, row.as_slice_mut().expect("contiguous"))?;
    }
    Ok(v)
}

fn euler_inner(net: Option<&CorrectionNet>, v: &mut Array2<f64>, x: &Array2<f64>, t: f64, l: usize, use_ema: bool) {
    if let Some(net) = net {
        let h = 1.0 / l as f64;
        for step in 0..l {
            let f = net.correction_batch(v.view(), step as f64 * h, x.view(), t, use_ema);
            v.scaled_add(h, &f);
        }
    }
}

/// One outer step: `X0 ~ N(0, I)`, `V ~ pi(. | X0, 0)`, `L` Euler steps of the
/// correction field, output `X0 + V`. `net` may be absent when `L = 0`.
pub fn generate_one_step(model: &CoresetGmm, net: Option<&CorrectionNet>, cfg: &GenConfig) -> Result<PointCloud> {
    cfg.validate()?;
    if cfg.j != 1 {
        return Err(Error::InvalidArgument(format!("one-step generation needs J = 1, got {}", cfg.j)));
    }
    check_net(model, net, cfg.l)?;
    let (x0, mut rngs) = draw_sources(model.d(), cfg.n, cfg.seed);
    let mut v = draw_velocities(model, &x0, 0.0, &mut rngs)?;
    euler_inner(net, &mut v, &x0, 0.0, cfg.l, cfg.use_ema);
    Ok(PointCloud::new(&x0 + &v, "generated", cfg.seed))
}

/// Nested sampler: at each outer node draw `V ~ pi(. | Z, t_j)`, correct it
/// with `L` inner steps, then `Z += (t_{j+1} - t_j) V`.
pub fn generate_nested(model: &CoresetGmm, net: Option<&CorrectionNet>, cfg: &GenConfig) -> Result<PointCloud> {
    cfg.validate()?;
    check_net(model, net, cfg.l)?;
    let grid = cfg.grid();
    let (mut z, mut rngs) = draw_sources(model.d(), cfg.n, cfg.seed);
    for j in 0..cfg.j {
        let t = grid[j];
        let mut v = draw_velocities(model, &z, t, &mut rngs)?;
        euler_inner(net, &mut v, &z, t, cfg.l, cfg.use_ema);
        z.scaled_add(grid[j + 1] - t, &v);
    }
    Ok(PointCloud::new(z, "generated", cfg.seed))
}

/// Dispatches on `J`.
pub fn generate(model: &CoresetGmm, net: Option<&CorrectionNet>, cfg: &GenConfig) -> Result<PointCloud> {
    if cfg.j == 1 {
        generate_one_step(model, net, cfg)
    } else {
        generate_nested(model, net, cfg)
    }
}

/// Euler integration of a mean-field net from `N(0, I)` over `steps` steps.
pub fn generate_meanfield(net: &CorrectionNet, n: usize, steps: usize, seed: u64, use_ema: bool) -> Result<PointCloud> {
    if net.mode() != NetMode::MeanField {
        return Err(Error::InvalidArgument("needs a mean-field net".into()));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let (mut x, _) = draw_sources(net.d(), n, seed);
    let h = 1.0 / steps as f64;
    for s in 0..steps {
        let f = net.meanfield_batch(x.view(), s as f64 * h, use_ema);
        x.scaled_add(h, &f);
    }
    Ok(PointCloud::new(x, "meanfield", seed))
}

/// Scalar test fields with known exact flows on `tau in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticField {
    /// `v' = -v`.
    Linear,
    /// `v' = 0`.
    Zero,
    /// `v' = -v/2 + 3 tau^2`.
    QuadraticTime,
}

impl AnalyticField {
    pub fn eval(self, v: f64, tau: f64) -> f64 {
        match self {
            AnalyticField::Linear => -v,
            AnalyticField::Zero => 0.0,
            AnalyticField::QuadraticTime => -0.5 * v + 3.0 * tau * tau,
        }
    }

    /// Exact `v(1)` from `v(0) = v0`.
    pub fn exact(self, v0: f64) -> f64 {
        match self {
            AnalyticField::Linear => v0 * (-1.0f64).exp(),
            AnalyticField::Zero => v0,
            // v = 6 tau^2 - 24 tau + 48 + (v0 - 48) e^{-tau/2}
            AnalyticField::QuadraticTime => 30.0 + (v0 - 48.0) * (-0.5f64).exp(),
        }
    }

    pub fn initial(self) -> f64 {
        match self {
            AnalyticField::QuadraticTime => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerReport {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of log error against log steps; absent when all
    /// errors vanish.
    pub slope: Option<f64>,
}

pub fn euler_endpoint(field: AnalyticField, v0: f64, steps: usize) -> f64 {
    let h = 1.0 / steps as f64;
    let mut v = v0;
    for s in 0..steps {
        v += h * field.eval(v, s as f64 * h);
    }
    v
}

pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Endpoint error of explicit Euler against the exact flow for
/// `L in {2, 4, ..., 256}`.
pub fn euler_rate_check(field: AnalyticField) -> EulerReport {
    let steps: Vec<usize> = (1..=8).map(|p| 1usize << p).collect();
    let v0 = field.initial();
    let exact = field.exact(v0);
    let errors: Vec<f64> = steps.iter().map(|&l| (euler_endpoint(field, v0, l) - exact).abs()).collect();
    let xs: Vec<f64> = steps.iter().map(|&l| l as f64).collect();
    let slope = log_log_slope(&xs, &errors);
    EulerReport { steps, errors, slope }
}

/// Global Euler bound `(e^{Lv} - 1)/(2 Lv) (Lv M + Ltau) / L` for a field with
/// sup-norm `M` and Lipschitz constants `Lv` (state) and `Ltau` (time).
pub fn euler_error_bound(m: f64, lv: f64, ltau: f64, steps: usize) -> f64 {
    let growth = if lv > 0.0 { (lv.exp() - 1.0) / (2.0 * lv) } else { 0.5 };
    growth * (lv * m + ltau) / steps as f64
}

/// Random draws from `N(0, I)` as a point cloud; the sampler's source.
pub fn source_points(d: usize, n: usize, seed: u64) -> PointCloud {
    let (x0, _) = draw_sources(d, n, seed);
    PointCloud::new(x0, "source", seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreset::{fit_coreset, FitConfig, LambdaSpec};
    use crate::correction::{train_correction, Coupling, TrainConfig};
    use crate::datasets::sample_target;

    fn ring() -> (CoresetGmm, PointCloud) {
        let data = sample_target("ring6", 800, 1).unwrap();
        let (m, _) = fit_coreset(
            &data,
            &FitConfig { k: 12, rank: 1, lambda: LambdaSpec::Fixed { lambda: 0.02 }, iters: 50, seed: 0 },
        )
        .unwrap();
        (m, data)
    }

    #[test]
    fn nfe_accounting() {
        let one = GenConfig { j: 1, l: 8, ..GenConfig::default() };
        assert_eq!(one.nfe(), 9);
        let stage2 = GenConfig { j: 1, l: 0, ..GenConfig::default() };
        assert_eq!(stage2.nfe(), 1);
        let nested = GenConfig { j: 3, l: 4, ..GenConfig::default() };
        assert_eq!(nested.nfe(), 12);
        assert!(GenConfig { j: 2, l: 0, ..GenConfig::default() }.validate().is_err());
        let bad = GenConfig { j: 2, outer_grid: Some(vec![0.0, 0.7, 0.5]), ..GenConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_net_leaves_the_surrogate_draw_unchanged() {
        let (m, _) = ring();
        let net = CorrectionNet::new(NetMode::Correction, 2, &[16, 16], 0).unwrap();
        let cfg = GenConfig { l: 5, n: 300, seed: 3, ..GenConfig::default() };
        let with = generate_one_step(&m, Some(&net), &cfg).unwrap();
        let without = generate_one_step(&m, None, &GenConfig { l: 0, ..cfg.clone() }).unwrap();
        assert_eq!(with.points, without.points);
    }

    #[test]
    fn nested_with_one_step_matches_one_step() {
        let (m, data) = ring();
        let cfg = TrainConfig { iters: 30, batch: 32, hidden: vec![16, 16], coupling: Coupling::SinkhornAnchored, ..TrainConfig::default() };
        let net = train_correction(&m, &data, &cfg).unwrap().net;
        let g = GenConfig { j: 1, l: 4, n: 200, seed: 7, use_ema: false, outer_grid: None };
        let a = generate_one_step(&m, Some(&net), &g).unwrap();
        let b = generate_nested(&m, Some(&net), &g).unwrap();
        assert_eq!(a.points, b.points);
        let c = generate_nested(&m, Some(&net), &GenConfig { j: 3, ..g.clone() }).unwrap();
        let c2 = generate_nested(&m, Some(&net), &GenConfig { j: 3, ..g }).unwrap();
        assert_eq!(c.points, c2.points);
        assert!(c.is_finite());
    }

    #[test]
    fn euler_rates() {
        let lin = euler_rate_check(AnalyticField::Linear);
        let s = lin.slope.unwrap();
        assert!((s + 1.0).abs() <= 0.1, "slope {s}");
        let zero = euler_rate_check(AnalyticField::Zero);
        assert!(zero.errors.iter().all(|&e| e == 0.0));
        assert!(zero.slope.is_none());
    }

    #[test]
    fn quadratic_time_field_respects_the_global_bound() {
        // along both trajectories v stays in [0, 1], where |f| <= 3.5,
        // Lipschitz in v is 1/2 and in tau is 6
        let f = AnalyticField::QuadraticTime;
        let rep = euler_rate_check(f);
        for (&l, &e) in rep.steps.iter().zip(&rep.errors) {
            let h = 1.0 / l as f64;
            let mut v = 0.0;
            for s in 0..l {
                v += h * f.eval(v, s as f64 * h);
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(e <= euler_error_bound(3.5, 0.5, 6.0, l), "L={l}: {e}");
        }
        assert!((rep.slope.unwrap() + 1.0).abs() < 0.1);
    }

    #[test]
    fn meanfield_generation_rejects_correction_nets() {
        let net = CorrectionNet::new(NetMode::Correction, 2, &[8], 0).unwrap();
        assert!(generate_meanfield(&net, 10, 4, 0, false).is_err());
        let mf = CorrectionNet::new(NetMode::MeanField, 2, &[8], 0).unwrap();
        let out = generate_meanfield(&mf, 10, 4, 0, false).unwrap();
        assert_eq!(out.points, source_points(2, 10, 0).points);
    }
}
