//! Entropic Sinkhorn coreset (EMS iterations) and its PPCA lift to a
//! low-rank Gaussian mixture.
//!
//! The EMS loop alternates the row-normalized coupling update
//! `T_ik ∝ w_k exp(-||x_i - mu_k||^2 / lambda)` (rows sum to `1/n`) with the
//! barycentric update `w_k = sum_i T_ik`, `mu_k = sum_i T_ik x_i / w_k`, so
//! the column marginals of the last coupling equal the returned weights.

use std::path::Path;

use log::{debug, warn};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, sq_dist, sym_eigen_desc};
use crate::rng;

/// Weights below this are treated as a collapsed component.
pub const EMPTY_WEIGHT: f64 = 1e-12;

/// How the Sinkhorn bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LambdaSpec {
    /// One fixed bandwidth for the whole fit.
    Fixed { lambda: f64 },
    /// `lambda = scale * K^(-2/d)`, the rate-matched bandwidth.
    Schedule { scale: f64 },
}

impl LambdaSpec {
    pub fn resolve(&self, k: usize, d: usize) -> f64 {
        match *self {
            LambdaSpec::Fixed { lambda } => lambda,
            LambdaSpec::Schedule { scale } => scale * (k as f64).powf(-2.0 / d as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub rank: usize,
    pub lambda: LambdaSpec,
    pub iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitInfo {
    pub iters: usize,
    pub seed: u64,
    pub dataset_name: String,
}

/// Output of [`sinkhorn_ems_fit`].
#[derive(Debug, Clone)]
pub struct SinkhornFit {
    pub weights: Array1<f64>,
    pub means: Array2<f64>,
    /// Entropic objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Final coupling `T` (n x K): rows sum to `1/n`, columns to `weights`.
    pub coupling: Array2<f64>,
    pub lambda: f64,
    pub reseeds: usize,
}

/// Orthonormal eigenbasis of `L L^T`: `L L^T = U diag(spikes) U^T`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ComponentBasis {
    pub basis: Array2<f64>,
    pub spikes: Array1<f64>,
}

impl ComponentBasis {
    fn from_factor(l: ArrayView2<'_, f64>) -> Self {
        let d = l.nrows();
        if l.ncols() == 0 {
            return Self {
                basis: Array2::zeros((d, 0)),
                spikes: Array1::zeros(0),
            };
        }
        let gram = l.t().dot(&l);
        let (vals, vecs) = sym_eigen_desc(gram.view());
        let top = vals.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..vals.len())
            .filter(|&j| vals[j] > 1e-14 * top.max(f64::MIN_POSITIVE) && vals[j] > 0.0)
            .collect();
        let mut basis = Array2::zeros((d, keep.len()));
        let mut spikes = Array1::zeros(keep.len());
        for (c, &j) in keep.iter().enumerate() {
            let u = l.dot(&vecs.column(j)) / vals[j].sqrt();
            basis.column_mut(c).assign(&u);
            spikes[c] = vals[j];
        }
        Self { basis, spikes }
    }
}

/// The Stage-I surrogate `sum_k w_k N(mu_k, L_k L_k^T + sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoresetGmmFile", into = "CoresetGmmFile")]
pub struct CoresetGmm {
    d: usize,
    k: usize,
    r: usize,
    lambda: f64,
    weights: Array1<f64>,
    means: Array2<f64>,
    factors: Vec<Array2<f64>>,
    per_component_noise: Array1<f64>,
    shared_noise: f64,
    pub fit: FitInfo,
    pub provenance: Option<serde_json::Value>,
    bases: Vec<ComponentBasis>,
}

#[derive(Serialize, Deserialize)]
struct CoresetGmmFile {
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    r: usize,
    lambda: f64,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    factors: Vec<Vec<Vec<f64>>>,
    per_component_noise: Vec<f64>,
    shared_noise: f64,
    fit: FitInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl TryFrom<CoresetGmmFile> for CoresetGmm {
    type Error = Error;

    fn try_from(f: CoresetGmmFile) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        if f.weights.len() != f.k || f.means.len() != f.k || f.factors.len() != f.k {
            return Err(bad(format!("model arrays do not match K = {}", f.k)));
        }
        let mut means = Array2::zeros((f.k, f.d));
        for (i, row) in f.means.iter().enumerate() {
            if row.len() != f.d {
                return Err(bad(format!("mean {i} has length {}, expected {}", row.len(), f.d)));
            }
            means.row_mut(i).assign(&ArrayView1::from(row));
        }
        let mut factors = Vec::with_capacity(f.k);
        for (k, fk) in f.factors.iter().enumerate() {
            if fk.len() != f.d || fk.iter().any(|r| r.len() != f.r) {
                return Err(bad(format!("factor {k} is not {} x {}", f.d, f.r)));
            }
            factors.push(Array2::from_shape_fn((f.d, f.r), |(i, j)| fk[i][j]));
        }
        let mut m = CoresetGmm::new(
            Array1::from(f.weights),
            means,
            factors,
            Array1::from(f.per_component_noise),
            f.lambda,
            f.fit,
        )?;
        if (m.shared_noise - f.shared_noise).abs() > 1e-12 * f.shared_noise.abs().max(1.0) {
            return Err(bad(format!(
                "shared_noise {} does not match the weighted per-component noise {}",
                f.shared_noise, m.shared_noise
            )));
        }
        m.shared_noise = f.shared_noise;
        m.provenance = f.provenance;
        Ok(m)
    }
}

impl From<CoresetGmm> for CoresetGmmFile {
    fn from(m: CoresetGmm) -> Self {
        CoresetGmmFile {
            d: m.d,
            k: m.k,
            r: m.r,
            lambda: m.lambda,
            weights: m.weights.to_vec(),
            means: m.means.rows().into_iter().map(|r| r.to_vec()).collect(),
            factors: m
                .factors
                .iter()
                .map(|f| f.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            per_component_noise: m.per_component_noise.to_vec(),
            shared_noise: m.shared_noise,
            fit: m.fit,
            provenance: m.provenance,
        }
    }
}

impl CoresetGmm {
    /// Assembles and validates a mixture; the shared noise is the
    /// weight-averaged per-component noise.
    pub fn new(
        weights: Array1<f64>,
        means: Array2<f64>,
        factors: Vec<Array2<f64>>,
        per_component_noise: Array1<f64>,
        lambda: f64,
        fit: FitInfo,
    ) -> Result<Self> {
        let k = weights.len();
        let d = means.ncols();
        if k == 0 || means.nrows() != k || factors.len() != k || per_component_noise.len() != k {
            return Err(Error::InvalidArgument(
                "weights, means, factors and noise must all have K entries".into(),
            ));
        }
        let r = factors[0].ncols();
        if factors.iter().any(|f| f.nrows() != d || f.ncols() != r) {
            return Err(Error::InvalidArgument(format!("every factor must be {d} x {r}")));
        }
        if r >= d {
            return Err(Error::InvalidArgument(format!("rank r = {r} must be < d = {d}")));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        if per_component_noise.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be >= 0".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
        }
        let shared_noise = weights.dot(&per_component_noise);
        let bases = factors.iter().map(|f| ComponentBasis::from_factor(f.view())).collect();
        Ok(Self {
            d,
            k,
            r,
            lambda,
            weights,
            means,
            factors,
            per_component_noise,
            shared_noise,
            fit,
            provenance: None,
            bases,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn r(&self) -> usize {
        self.r
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }
    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }
    pub fn factor(&self, k: usize) -> &Array2<f64> {
        &self.factors[k]
    }
    pub fn per_component_noise(&self) -> &Array1<f64> {
        &self.per_component_noise
    }
    pub fn shared_noise(&self) -> f64 {
        self.shared_noise
    }

    pub(crate) fn basis(&self, k: usize) -> &ComponentBasis {
        &self.bases[k]
    }

    /// Dense `Sigma_k = L_k L_k^T + sigma^2 I`.
    pub fn covariance(&self, k: usize) -> Array2<f64> {
        let l = &self.factors[k];
        let mut c = l.dot(&l.t());
        for i in 0..self.d {
            c[[i, i]] += self.shared_noise;
        }
        c
    }

    pub fn trace_covariance(&self, k: usize) -> f64 {
        self.factors[k].iter().map(|v| v * v).sum::<f64>() + self.d as f64 * self.shared_noise
    }

    /// `sqrt(sum_k w_k tr Sigma_k)`: bounds W2 between the atom measure and
    /// its Gaussian smoothing.
    pub fn smoothing_scale(&self) -> f64 {
        (0..self.k)
            .map(|k| self.weights[k] * self.trace_covariance(k))
            .sum::<f64>()
            .sqrt()
    }

    /// Draws `y = mu_b + L_b z + sigma eta` with `b ~ Cat(w)` into `out`.
    pub fn draw_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let b = sample_categorical(rng, self.weights.as_slice().expect("contiguous"));
        self.draw_component_into(b, rng, out);
        b
    }

    /// Draws from component `b` alone.
    pub fn draw_component_into<R: rand::Rng + ?Sized>(&self, b: usize, rng: &mut R, out: &mut [f64]) {
        let sigma = self.shared_noise.sqrt();
        let l = &self.factors[b];
        let z: Vec<f64> = (0..self.r).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..self.d {
            let eta: f64 = rng.sample(StandardNormal);
            let mut v = self.means[[b, i]] + sigma * eta;
            for (j, zj) in z.iter().enumerate() {
                v += l[[i, j]] * zj;
            }
            out[i] = v;
        }
    }

    /// `n` direct samples from the mixture; sample `i` uses its own stream.
    pub fn sample_points(&self, n: usize, seed: u64) -> PointCloud {
        let mut pts = Array2::zeros((n, self.d));
        for (i, mut row) in pts.rows_mut().into_iter().enumerate() {
            let mut rng = rng::stream(seed, &[0x6A4, i as u64]);
            self.draw_into(&mut rng, row.as_slice_mut().expect("contiguous"));
        }
        PointCloud::new(pts, "coreset-gmm", seed)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn sample_categorical<R: rand::Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Entropic objective `sum T c + lambda KL(T || (1/n) x w)`.
fn entropic_objective(cost: &Array2<f64>, t: &Array2<f64>, w: &Array1<f64>, lambda: f64) -> f64 {
    let n = t.nrows() as f64;
    let mut transport = 0.0;
    let mut kl = 0.0;
    for ((i, k), &tik) in t.indexed_iter() {
        if tik > 0.0 {
            transport += tik * cost[[i, k]];
            kl += tik * (n * tik / w[k]).ln();
        }
    }
    transport + lambda * kl
}

fn cost_matrix(x: ArrayView2<'_, f64>, means: &Array2<f64>) -> Array2<f64> {
    let (n, k) = (x.nrows(), means.nrows());
    Array2::from_shape_fn((n, k), |(i, j)| sq_dist(x.row(i), means.row(j)))
}

/// Row-normalized coupling: `T_ik = w_k e^{-c_ik/lambda} / (n Z_i)`.
fn coupling_update(cost: &Array2<f64>, w: &Array1<f64>, lambda: f64) -> Array2<f64> {
    let (n, k) = cost.dim();
    let mut t = Array2::zeros((n, k));
    let logw: Vec<f64> = w.iter().map(|&v| v.ln()).collect();
    let mut logits = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            logits[j] = logw[j] - cost[[i, j]] / lambda;
        }
        let lse = logsumexp(&logits);
        for j in 0..k {
            t[[i, j]] = (logits[j] - lse).exp() / n as f64;
        }
    }
    t
}

/// Runs `iters` EMS outer iterations from anchors drawn uniformly without
/// replacement from the data.
pub fn sinkhorn_ems_fit(data: &PointCloud, k: usize, lambda: f64, iters: usize, seed: u64) -> Result<SinkhornFit> {
    let n = data.n();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "coreset size K = {k} must satisfy 1 <= K <= n = {n}"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    let x = data.view();
    let mut rng = rng::stream(seed, &[0xC0DE5E7]);
    let init = sample_indices(&mut rng, n, k).into_vec();
    let mut means = x.select(Axis(0), &init);
    let mut w = Array1::from_elem(k, 1.0 / k as f64);
    let mut trace = Vec::with_capacity(iters);
    let mut t = Array2::zeros((n, k));
    let mut reseeds = 0;

    for it in 0..iters {
        let cost = cost_matrix(x, &means);
        t = coupling_update(&cost, &w, lambda);
        w = t.sum_axis(Axis(0));
        let unnormalized = t.t().dot(&x);
        for j in 0..k {
            if w[j] > 0.0 {
                let row = &unnormalized.row(j) / w[j];
                means.row_mut(j).assign(&row);
            }
        }
        let collapsed: Vec<usize> = (0..k).filter(|&j| w[j] < EMPTY_WEIGHT).collect();
        if !collapsed.is_empty() {
            // per-datum expected transport cost under the current coupling
            let served: Vec<f64> = (0..n)
                .map(|i| (0..k).map(|j| n as f64 * t[[i, j]] * cost[[i, j]]).sum())
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| served[b].total_cmp(&served[a]).then(a.cmp(&b)));
            for (slot, &j) in collapsed.iter().enumerate() {
                let i = order[slot.min(n - 1)];
                warn!("EMS iteration {it}: component {j} collapsed (w = {:.3e}); re-seeding at datum {i}", w[j]);
                means.row_mut(j).assign(&x.row(i));
                w[j] = 1.0 / n as f64;
                reseeds += 1;
            }
            let total = w.sum();
            w /= total;
        }
        let new_cost = cost_matrix(x, &means);
        trace.push(entropic_objective(&new_cost, &t, &w, lambda));
    }
    debug!(
        "EMS fit: K = {k}, lambda = {lambda}, objective {:.6} -> {:.6}",
        trace[0],
        trace[trace.len() - 1]
    );
    Ok(SinkhornFit {
        weights: w,
        means,
        objective_trace: trace,
        coupling: t,
        lambda,
        reseeds,
    })
}

/// Closed-form PPCA on the soft-assignment-weighted residuals of each
/// component.
pub fn ppca_lift(
    data: &PointCloud,
    responsibilities: ArrayView2<'_, f64>,
    weights: &Array1<f64>,
    means: &Array2<f64>,
    r: usize,
    lambda: f64,
) -> Result<CoresetGmm> {
    let (n, d) = (data.n(), data.d());
    let k = weights.len();
    if r >= d {
        return Err(Error::InvalidArgument(format!("rank r = {r} must be < d = {d}")));
    }
    if responsibilities.dim() != (n, k) || means.dim() != (k, d) {
        return Err(Error::InvalidArgument(format!(
            "responsibilities must be {n} x {k} and means {k} x {d}"
        )));
    }
    let x = data.view();
    let mut factors = Vec::with_capacity(k);
    let mut noise = Array1::zeros(k);
    for j in 0..k {
        let mass: f64 = responsibilities.column(j).sum();
        if !(mass > 0.0) {
            factors.push(Array2::zeros((d, r)));
            continue;
        }
        let mut cov = Array2::<f64>::zeros((d, d));
        for i in 0..n {
            let tij = responsibilities[[i, j]];
            if tij == 0.0 {
                continue;
            }
            let diff = &x.row(i) - &means.row(j);
            for a in 0..d {
                for b in a..d {
                    cov[[a, b]] += tij * diff[a] * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                cov[[a, b]] /= mass;
                cov[[b, a]] = cov[[a, b]];
            }
        }
        let (vals, vecs) = sym_eigen_desc(cov.view());
        let trace: f64 = cov.diag().sum();
        let top: f64 = vals.slice(s![..r]).sum();
        let sigma2 = ((trace - top) / (d - r) as f64).max(0.0);
        let mut l = Array2::zeros((d, r));
        for c in 0..r {
            let gap = vals[c] - sigma2;
            if gap < 0.0 {
                debug!("component {j}: eigen-gap {gap:.3e} clamped to 0");
            }
            let scale = gap.max(0.0).sqrt();
            l.column_mut(c).assign(&(&vecs.column(c) * scale));
        }
        noise[j] = sigma2;
        factors.push(l);
    }
    CoresetGmm::new(weights.clone(), means.clone(), factors, noise, lambda, FitInfo::default())
}

/// Stage I end to end: EMS fit followed by the PPCA lift.
pub fn fit_coreset(data: &PointCloud, cfg: &FitConfig) -> Result<(CoresetGmm, SinkhornFit)> {
    let lambda = cfg.lambda.resolve(cfg.k, data.d());
    let fit = sinkhorn_ems_fit(data, cfg.k, lambda, cfg.iters, cfg.seed)?;
    let mut model = ppca_lift(data, fit.coupling.view(), &fit.weights, &fit.means, cfg.rank, lambda)?;
    model.fit = FitInfo {
        iters: cfg.iters,
        seed: cfg.seed,
        dataset_name: data.dataset_name.clone(),
    };
    Ok((model, fit))
}

/// Component posterior `T_b(x)` for one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub probs: Array1<f64>,
    pub query: Array1<f64>,
}

/// `T_b(x) = w_b exp(-||x - mu_b||^2 / lambda) / Z(x)`, in the log domain.
pub fn responsibility_row(model: &CoresetGmm, x: ArrayView1<'_, f64>) -> Result<CouplingRow> {
    if x.len() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            got: x.len(),
        });
    }
    let mut probs = Array1::zeros(model.k());
    responsibility_into(model, x, probs.as_slice_mut().expect("contiguous"));
    Ok(CouplingRow {
        probs,
        query: x.to_owned(),
    })
}

pub(crate) fn responsibility_into(model: &CoresetGmm, x: ArrayView1<'_, f64>, out: &mut [f64]) {
    let lambda = model.lambda();
    for (b, o) in out.iter_mut().enumerate() {
        *o = model.weights()[b].ln() - sq_dist(x, model.means().row(b)) / lambda;
    }
    let lse = logsumexp(out);
    for o in out.iter_mut() {
        *o = (*o - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::sample_target;
    use ndarray::array;

    fn cloud(points: Array2<f64>) -> PointCloud {
        PointCloud::new(points, "test", 0)
    }

    #[test]
    fn single_component_recovers_sample_mean() {
        let data = sample_target("moons", 300, 1).unwrap();
        let fit = sinkhorn_ems_fit(&data, 1, 0.3, 5, 0).unwrap();
        assert!((fit.weights[0] - 1.0).abs() < 1e-12);
        let mean = data.mean();
        for j in 0..2 {
            assert!((fit.means[[0, j]] - mean[j]).abs() < 1e-12);
        }
        for &t in fit.coupling.iter() {
            assert!((t - 1.0 / 300.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_far_points_split_evenly() {
        let data = cloud(array![[0.0, 0.0], [10.0, 0.0]]);
        let fit = sinkhorn_ems_fit(&data, 2, 0.1, 10, 3).unwrap();
        let mut m: Vec<f64> = fit.means.column(0).to_vec();
        m.sort_by(f64::total_cmp);
        assert!((m[0] - 0.0).abs() < 1e-12 && (m[1] - 10.0).abs() < 1e-12);
        assert!((fit.weights[0] - 0.5).abs() < 1e-12 && (fit.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_coreset() {
        let data = cloud(array![[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(sinkhorn_ems_fit(&data, 3, 0.1, 5, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn column_marginals_equal_weights_and_objective_decreases() {
        let data = sample_target("ring6", 800, 2).unwrap();
        let fit = sinkhorn_ems_fit(&data, 12, 0.05, 40, 7).unwrap();
        let cols = fit.coupling.sum_axis(Axis(0));
        for (c, w) in cols.iter().zip(fit.weights.iter()) {
            assert!((c - w).abs() < 1e-12);
        }
        assert!((fit.weights.sum() - 1.0).abs() < 1e-12);
        for row in fit.coupling.rows() {
            assert!((row.sum() - 1.0 / 800.0).abs() < 1e-15);
        }
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn rank_zero_lift_uses_average_variance() {
        let data = sample_target("ring6", 400, 5).unwrap();
        let fit = sinkhorn_ems_fit(&data, 3, 0.05, 10, 1).unwrap();
        let m = ppca_lift(&data, fit.coupling.view(), &fit.weights, &fit.means, 0, 0.05).unwrap();
        assert_eq!(m.factor(0).ncols(), 0);
        for k in 0..3 {
            let mass = fit.coupling.column(k).sum();
            let mut tr = 0.0;
            for i in 0..400 {
                tr += fit.coupling[[i, k]] * sq_dist(data.row(i), fit.means.row(k));
            }
            assert!((m.per_component_noise()[k] - tr / mass / 2.0).abs() < 1e-12);
        }
        assert!((m.shared_noise() - m.weights().dot(m.per_component_noise())).abs() < 1e-12);
    }

    #[test]
    fn isotropic_component_has_zero_factor() {
        // four points at (+-1, +-1): weighted covariance is exactly I
        let data = cloud(array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]);
        let t = Array2::from_elem((4, 1), 0.25);
        let m = ppca_lift(&data, t.view(), &array![1.0], &array![[0.0, 0.0]], 1, 1.0).unwrap();
        assert!((m.per_component_noise()[0] - 1.0).abs() < 1e-12);
        assert!(m.factor(0).iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn rank_must_be_below_dimension() {
        let data = cloud(array![[1.0, 1.0], [0.0, 0.0]]);
        let t = Array2::from_elem((2, 1), 0.5);
        let err = ppca_lift(&data, t.view(), &array![1.0], &array![[0.5, 0.5]], 2, 1.0);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn responsibility_rows_are_normalized_and_limit_correctly() {
        let data = sample_target("ring6", 500, 9).unwrap();
        let (m, _) = fit_coreset(
            &data,
            &FitConfig { k: 6, rank: 1, lambda: LambdaSpec::Fixed { lambda: 0.01 }, iters: 30, seed: 0 },
        )
        .unwrap();
        let row = responsibility_row(&m, m.means().row(2)).unwrap();
        assert!((row.probs.sum() - 1.0).abs() < 1e-12);
        assert!(row.probs[2] >= 1.0 - 1e-6);

        let wide = CoresetGmm::new(
            m.weights().clone(),
            m.means().clone(),
            (0..6).map(|k| m.factor(k).clone()).collect(),
            m.per_component_noise().clone(),
            1e12,
            FitInfo::default(),
        )
        .unwrap();
        let row = responsibility_row(&wide, array![0.3, -0.2].view()).unwrap();
        for (p, w) in row.probs.iter().zip(m.weights().iter()) {
            assert!((p - w).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let data = sample_target("pinwheel", 400, 1).unwrap();
        let (m, _) = fit_coreset(
            &data,
            &FitConfig { k: 5, rank: 1, lambda: LambdaSpec::Fixed { lambda: 0.05 }, iters: 20, seed: 2 },
        )
        .unwrap();
        let text = m.to_json().unwrap();
        let back: CoresetGmm = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["d", "K", "r", "lambda", "weights", "means", "factors", "per_component_noise", "shared_noise", "fit"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
