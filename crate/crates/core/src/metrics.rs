//! Sample-based evaluation: sliced and exact W2, mode balance, helix
//! distance, nearest-neighbour distance diagnostics and improved
//! precision/recall.

use ndarray::{Array1, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::{helix_curve_distance, Dataset, DatasetParams, ModeAssigner, PointCloud};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::rng;

pub const DEFAULT_PROJECTIONS: usize = 200;
pub const EXACT_W2_MAX: usize = 1024;

fn nonempty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.n() == 0 || b.n() == 0 {
        return Err(Error::InvalidArgument("empty sample pool".into()));
    }
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch { expected: a.d(), got: b.d() });
    }
    Ok(())
}

fn same_size(a: &PointCloud, b: &PointCloud, reason: &'static str) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::SizeMismatch { left: a.n(), right: b.n(), reason });
    }
    Ok(())
}

/// Quantile function of sorted values at level `u`, linear between the
/// plotting positions `(i + 1/2)/n`.
fn quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let p = (u * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = p.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    let f = p - i as f64;
    sorted[i] + f * (sorted[i + 1] - sorted[i])
}

/// Squared 1-D W2 between two empirical measures given sorted values.
pub fn w2_sq_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    }
    let m = a.len().max(b.len());
    (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            let diff = quantile(a, u) - quantile(b, u);
            diff * diff
        })
        .sum::<f64>()
        / m as f64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Uniform unit directions on the sphere from a seeded Gaussian stream.
pub fn projection_directions(d: usize, n_proj: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut r = rng::stream(seed, &[0x511CE]);
    (0..n_proj)
        .map(|_| loop {
            let z: Array1<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let norm = z.dot(&z).sqrt();
            if norm > 1e-12 {
                break z / norm;
            }
        })
        .collect()
}

/// Mean squared 1-D W2 over `n_proj` seeded uniform projections.
pub fn sliced_w2(a: &PointCloud, b: &PointCloud, n_proj: usize, seed: u64) -> Result<f64> {
    nonempty(a, b)?;
    if n_proj == 0 {
        return Err(Error::InvalidArgument("n_proj must be >= 1".into()));
    }
    let dirs = projection_directions(a.d(), n_proj, seed);
    let total: f64 = dirs
        .iter()
        .map(|u| {
            let pa = sorted(a.points.dot(u).to_vec());
            let pb = sorted(b.points.dot(u).to_vec());
            w2_sq_1d_sorted(&pa, &pb)
        })
        .sum();
    Ok(total / n_proj as f64)
}

/// Minimum-cost perfect assignment on a dense square cost matrix (row-major),
/// by the shortest augmenting path method with potentials. Returns the
/// column assigned to each row.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Exact W2 between equal-size pools by optimal assignment.
pub fn exact_w2_small(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    nonempty(a, b)?;
    same_size(a, b, "exact W2 compares equal-size uniform empirical measures")?;
    let n = a.n();
    if n > EXACT_W2_MAX {
        return Err(Error::InvalidArgument(format!("exact W2 supports at most {EXACT_W2_MAX} points, got {n}")));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(a.row(i), b.row(j));
        }
    }
    let assign = solve_assignment(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Mode-occupancy histogram of `samples` under the dataset's mode map.
pub fn mode_histogram(samples: &PointCloud, name: &str) -> Result<Vec<usize>> {
    mode_histogram_with(samples, name.parse()?, &DatasetParams::default())
}

/// Mode histogram under non-default shape constants.
pub fn mode_histogram_with(samples: &PointCloud, ds: Dataset, params: &DatasetParams) -> Result<Vec<usize>> {
    let assigner = ModeAssigner::new(ds, params)?;
    let mut counts = vec![0; assigner.modes()];
    for i in 0..samples.n() {
        counts[assigner.assign(samples.row(i))?] += 1;
    }
    Ok(counts)
}

/// `1/2 sum_k |p_k - 1/M|` for a histogram over `M` modes.
pub fn tv_from_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let m = counts.len() as f64;
    if total == 0 {
        return 1.0 - 1.0 / m;
    }
    0.5 * counts.iter().map(|&c| (c as f64 / total as f64 - 1.0 / m).abs()).sum::<f64>()
}

pub fn mode_tv(samples: &PointCloud, name: &str) -> Result<f64> {
    Ok(tv_from_uniform(&mode_histogram(samples, name)?))
}

/// Mean distance to the helix curve.
pub fn helix_dist(samples: &PointCloud) -> Result<f64> {
    if samples.n() == 0 {
        return Err(Error::InvalidArgument("empty sample pool".into()));
    }
    let mut total = 0.0;
    for i in 0..samples.n() {
        total += helix_curve_distance(samples.row(i))?;
    }
    Ok(total / samples.n() as f64)
}

/// Distance from each point of `a` to its nearest neighbour in `b`.
pub fn nn_distances(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    (0..a.n())
        .map(|i| {
            let x = a.row(i);
            (0..b.n()).map(|j| sq_dist(x, b.row(j))).fold(f64::INFINITY, f64::min).sqrt()
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a.to_vec());
    let b = sorted(b.to_vec());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// 1-D W1 between equal-size samples, `int |F^-1 - G^-1|`.
pub fn w1_1d(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a.to_vec());
    let b = sorted(b.to_vec());
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let m = a.len().max(b.len());
    (0..m)
        .map(|i| {
            let u = (i as f64 + 0.5) / m as f64;
            (quantile(&a, u) - quantile(&b, u)).abs()
        })
        .sum::<f64>()
        / m as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGof {
    pub ks: f64,
    pub w1: f64,
    pub distances: Vec<f64>,
    pub reference_distances: Vec<f64>,
}

/// Compares the 1-NN distance laws `A -> B` and `Aref -> Bref`.
pub fn knn_gof(a: &PointCloud, b: &PointCloud, aref: &PointCloud, bref: &PointCloud) -> Result<KnnGof> {
    const WHY: &str = "1-NN distances shrink with pool size, so all pools must share one size";
    for p in [b, aref, bref] {
        nonempty(a, p)?;
        same_size(a, p, WHY)?;
    }
    let distances = nn_distances(a, b);
    let reference_distances = nn_distances(aref, bref);
    Ok(KnnGof {
        ks: ks_statistic(&distances, &reference_distances),
        w1: w1_1d(&distances, &reference_distances),
        distances,
        reference_distances,
    })
}

/// Distance from each point to its `k`-th nearest neighbour in its own pool.
pub fn knn_radii(a: &PointCloud, k: usize) -> Vec<f64> {
    (0..a.n())
        .map(|i| {
            let x = a.row(i);
            let mut d: Vec<f64> = (0..a.n()).filter(|&j| j != i).map(|j| sq_dist(x, a.row(j))).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

fn manifold_coverage(queries: &PointCloud, support: &PointCloud, radii: &[f64]) -> f64 {
    let inside = (0..queries.n())
        .filter(|&i| {
            let q = queries.row(i);
            (0..support.n()).any(|j| sq_dist(q, support.row(j)) <= radii[j] * radii[j])
        })
        .count();
    inside as f64 / queries.n() as f64
}

/// Improved precision/recall with `k`-NN ball manifolds.
pub fn precision_recall(gen: &PointCloud, real: &PointCloud, k: usize) -> Result<(f64, f64)> {
    nonempty(gen, real)?;
    same_size(gen, real, "precision and recall compare size-matched pools")?;
    if k == 0 || k >= real.n() {
        return Err(Error::InvalidArgument(format!("k = {k} must satisfy 1 <= k < pool size {}", real.n())));
    }
    let real_r = knn_radii(real, k);
    let gen_r = knn_radii(gen, k);
    Ok((manifold_coverage(gen, real, &real_r), manifold_coverage(real, gen, &gen_r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sw2,
    ModeTv,
    HelixDist,
    Knn,
    PrecisionRecall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Sw2, Metric::ModeTv, Metric::HelixDist, Metric::Knn, Metric::PrecisionRecall];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sw2 => "sw2",
            Metric::ModeTv => "mode_tv",
            Metric::HelixDist => "helix_dist",
            Metric::Knn => "knn",
            Metric::PrecisionRecall => "pr",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown metric {s:?}; valid metrics: {}",
                Metric::ALL.map(Metric::name).join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sw2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub helix_dist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub n_gen: usize,
    pub n_ref: usize,
    pub n_proj: usize,
    pub pr_k: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_nn_distances: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_nn_distances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub n_proj: usize,
    pub seed: u64,
    pub pr_k: usize,
    /// Dataset used for mode-TV; mode-TV needs a dataset with modes.
    pub dataset: Option<String>,
    pub keep_distances: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_proj: DEFAULT_PROJECTIONS,
            seed: 0,
            pr_k: 5,
            dataset: None,
            keep_distances: false,
        }
    }
}

/// Computes the requested metrics of `gen` against `reference`. The 1-NN
/// diagnostic compares `gen -> ref` against `ref -> gen`.
pub fn evaluate(gen: &PointCloud, reference: &PointCloud, metrics: &[Metric], opts: &EvalOptions) -> Result<MetricsReport> {
    nonempty(gen, reference)?;
    let mut r = MetricsReport {
        n_gen: gen.n(),
        n_ref: reference.n(),
        n_proj: opts.n_proj,
        pr_k: opts.pr_k,
        seed: opts.seed,
        ..MetricsReport::default()
    };
    for &m in metrics {
        match m {
            Metric::Sw2 => r.sw2 = Some(sliced_w2(gen, reference, opts.n_proj, opts.seed)?),
            Metric::ModeTv => {
                let name = opts.dataset.as_deref().ok_or_else(|| {
                    Error::InvalidArgument("mode_tv needs a dataset name with discrete modes".into())
                })?;
                let ds: Dataset = name.parse()?;
                if !ds.has_modes() {
                    return Err(Error::NoModes(ds.name().to_string()));
                }
                r.mode_tv = Some(mode_tv(gen, name)?);
            }
            Metric::HelixDist => {
                if gen.d() != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: gen.d() });
                }
                r.helix_dist = Some(helix_dist(gen)?);
            }
            Metric::Knn => {
                let g = knn_gof(gen, reference, reference, gen)?;
                r.ks = Some(g.ks);
                r.w1 = Some(g.w1);
                if opts.keep_distances {
                    r.gen_nn_distances = Some(g.distances);
                    r.ref_nn_distances = Some(g.reference_distances);
                }
            }
            Metric::PrecisionRecall => {
                let (p, rc) = precision_recall(gen, reference, opts.pr_k)?;
                r.precision = Some(p);
                r.recall = Some(rc);
            }
        }
    }
    Ok(r)
}

/// Distance between two single points.
pub fn point_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    sq_dist(a, b).sqrt()
}
