//! Toy targets: ring6, moons, pinwheel and helix3d.
//!
//! All generators are pure functions of `(name, n, seed)` plus a
//! [`DatasetParams`] block whose defaults are the canonical parametrization.
//! Point clouds round-trip through a small CSV format whose first line is
//! `# dataset,<name>,<n>,<d>,<seed>`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Ring6,
    Moons,
    Pinwheel,
    Helix3d,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Ring6,
        Dataset::Moons,
        Dataset::Pinwheel,
        Dataset::Helix3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Ring6 => "ring6",
            Dataset::Moons => "moons",
            Dataset::Pinwheel => "pinwheel",
            Dataset::Helix3d => "helix3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Dataset::Helix3d => 3,
            _ => 2,
        }
    }

    /// Whether the target has a discrete set of ground-truth modes.
    pub fn has_modes(self) -> bool {
        matches!(self, Dataset::Ring6 | Dataset::Pinwheel)
    }

    pub fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|d| d.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::UnknownDataset {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// Shape constants of the toy targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub ring_radius: f64,
    pub ring_std: f64,
    pub moons_radius: f64,
    pub moons_offset: f64,
    pub moons_noise: f64,
    pub pinwheel_arms: usize,
    pub pinwheel_radial_std: f64,
    pub pinwheel_tangential_std: f64,
    pub pinwheel_rate: f64,
    pub helix_noise: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            ring_radius: 1.0,
            ring_std: 0.1,
            moons_radius: 1.0,
            moons_offset: 0.5,
            moons_noise: 0.05,
            pinwheel_arms: 5,
            pinwheel_radial_std: 0.3,
            pinwheel_tangential_std: 0.05,
            pinwheel_rate: 0.25,
            helix_noise: 0.05,
        }
    }
}

/// Helix parameter range: two full turns.
pub const HELIX_THETA_MAX: f64 = 4.0 * PI;

/// An `n x d` sample matrix together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Array2<f64>,
    pub dataset_name: String,
    pub seed: u64,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, dataset_name: impl Into<String>, seed: u64) -> Self {
        Self {
            points,
            dataset_name: dataset_name.into(),
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|v| v.is_finite())
    }

    /// Rows `indices` as a new cloud with the same provenance.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(
            self.points.select(Axis(0), indices),
            self.dataset_name.clone(),
            self.seed,
        )
    }

    /// Per-coordinate second moment `E||X||^2 / d`.
    pub fn second_moment_per_coord(&self) -> f64 {
        let n = self.n().max(1) as f64;
        self.points.iter().map(|v| v * v).sum::<f64>() / (n * self.d() as f64)
    }

    pub fn mean(&self) -> Array1<f64> {
        self.points
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.d()))
    }
}

/// Draws `n` i.i.d. samples of a named target with the default shape constants.
pub fn sample_target(name: &str, n: usize, seed: u64) -> Result<PointCloud> {
    let ds: Dataset = name.parse()?;
    sample_dataset(ds, &DatasetParams::default(), n, seed)
}

pub fn sample_dataset(ds: Dataset, p: &DatasetParams, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, &[0xDA7A, ds as u64]);
    let d = ds.dim();
    let mut pts = Array2::zeros((n, d));
    for mut row in pts.rows_mut() {
        let g = |rng: &mut rng::Rng| -> f64 { rng.sample(StandardNormal) };
        match ds {
            Dataset::Ring6 => {
                let k = rng.random_range(0..6usize);
                let a = 2.0 * PI * k as f64 / 6.0;
                row[0] = p.ring_radius * a.cos() + p.ring_std * g(&mut rng);
                row[1] = p.ring_radius * a.sin() + p.ring_std * g(&mut rng);
            }
            Dataset::Moons => {
                let upper = rng.random_bool(0.5);
                let th = rng.random_range(0.0..PI);
                let (x, y) = if upper {
                    (p.moons_radius * th.cos(), p.moons_radius * th.sin())
                } else {
                    (
                        p.moons_radius * (1.0 - th.cos()),
                        p.moons_radius * (1.0 - th.sin()) - p.moons_offset,
                    )
                };
                row[0] = x + p.moons_noise * g(&mut rng);
                row[1] = y + p.moons_noise * g(&mut rng);
            }
            Dataset::Pinwheel => {
                let arm = rng.random_range(0..p.pinwheel_arms);
                let radial = 1.0 + p.pinwheel_radial_std * g(&mut rng);
                let tangential = p.pinwheel_tangential_std * g(&mut rng);
                let (x, y) = pinwheel_point(p, arm, radial, tangential);
                row[0] = x;
                row[1] = y;
            }
            Dataset::Helix3d => {
                let th = rng.random_range(0.0..HELIX_THETA_MAX);
                let c = helix_point(th);
                for j in 0..3 {
                    row[j] = c[j] + p.helix_noise * g(&mut rng);
                }
            }
        }
    }
    Ok(PointCloud::new(pts, ds.name(), seed))
}

fn pinwheel_point(p: &DatasetParams, arm: usize, radial: f64, tangential: f64) -> (f64, f64) {
    let base = 2.0 * PI * arm as f64 / p.pinwheel_arms as f64;
    let angle = base + p.pinwheel_rate * radial.exp();
    let (s, c) = angle.sin_cos();
    (c * radial - s * tangential, s * radial + c * tangential)
}

pub fn helix_point(theta: f64) -> [f64; 3] {
    [theta.cos(), theta.sin(), theta / (2.0 * PI)]
}

/// Representative mode centers (ring6 blob centers, pinwheel arm midpoints).
pub fn mode_centers(ds: Dataset, p: &DatasetParams) -> Result<Vec<[f64; 2]>> {
    match ds {
        Dataset::Ring6 => Ok((0..6)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 6.0;
                [p.ring_radius * a.cos(), p.ring_radius * a.sin()]
            })
            .collect()),
        Dataset::Pinwheel => Ok((0..p.pinwheel_arms)
            .map(|k| {
                let (x, y) = pinwheel_point(p, k, 1.0, 0.0);
                [x, y]
            })
            .collect()),
        _ => Err(Error::NoModes(ds.name().to_string())),
    }
}

pub fn mode_count(ds: Dataset, p: &DatasetParams) -> Result<usize> {
    match ds {
        Dataset::Ring6 => Ok(6),
        Dataset::Pinwheel => Ok(p.pinwheel_arms),
        _ => Err(Error::NoModes(ds.name().to_string())),
    }
}

const ARM_SKELETON_POINTS: usize = 256;

/// Precomputed nearest-mode lookup for one dataset.
#[derive(Debug, Clone)]
pub struct ModeAssigner {
    // (mode index, point) pairs; a mode may own several skeleton points.
    anchors: Vec<(usize, [f64; 2])>,
    modes: usize,
}

impl ModeAssigner {
    pub fn new(ds: Dataset, p: &DatasetParams) -> Result<Self> {
        let modes = mode_count(ds, p)?;
        let anchors = match ds {
            Dataset::Ring6 => mode_centers(ds, p)?.into_iter().enumerate().collect(),
            Dataset::Pinwheel => {
                // arm skeleton over radial coordinate 1 +- 3 radial std
                let lo = (1.0 - 3.0 * p.pinwheel_radial_std).max(0.0);
                let hi = 1.0 + 3.0 * p.pinwheel_radial_std;
                let mut a = Vec::with_capacity(modes * ARM_SKELETON_POINTS);
                for k in 0..modes {
                    for j in 0..ARM_SKELETON_POINTS {
                        let rho = lo + (hi - lo) * j as f64 / (ARM_SKELETON_POINTS - 1) as f64;
                        let (x, y) = pinwheel_point(p, k, rho, 0.0);
                        a.push((k, [x, y]));
                    }
                }
                a
            }
            _ => unreachable!("mode_count rejects mode-free datasets"),
        };
        Ok(Self { anchors, modes })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Nearest mode under squared Euclidean distance; ties go to the lowest index.
    pub fn assign(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        if x.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: x.len(),
            });
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for &(k, c) in &self.anchors {
            let dx = x[0] - c[0];
            let dy = x[1] - c[1];
            let d2 = dx * dx + dy * dy;
            if d2 < best.0 || (d2 == best.0 && k < best.1) {
                best = (d2, k);
            }
        }
        Ok(best.1)
    }
}

pub fn assign_mode(x: ArrayView1<'_, f64>, name: &str) -> Result<usize> {
    let ds: Dataset = name.parse()?;
    ModeAssigner::new(ds, &DatasetParams::default())?.assign(x)
}

const HELIX_GRID: usize = 4096;

/// Distance from `x` to the helix `(cos t, sin t, t / 2pi)`, `t in [0, 4pi]`.
///
/// Dense grid over the parameter followed by golden-section refinement in the
/// bracketing cells of the best grid node.
pub fn helix_curve_distance(x: ArrayView1<'_, f64>) -> Result<f64> {
    if x.len() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: x.len(),
        });
    }
    let d2 = |t: f64| {
        let c = helix_point(t);
        (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)
    };
    let h = HELIX_THETA_MAX / HELIX_GRID as f64;
    let mut best = (f64::INFINITY, 0usize);
    for j in 0..=HELIX_GRID {
        let v = d2(j as f64 * h);
        if v < best.0 {
            best = (v, j);
        }
    }
    let lo = (best.1 as f64 - 1.0).max(0.0) * h;
    let hi = ((best.1 + 1) as f64 * h).min(HELIX_THETA_MAX);
    let t = golden_section(d2, lo, hi, 1e-12);
    Ok(d2(t).min(best.0).max(0.0).sqrt())
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Writes a cloud as CSV. `extra` lines are emitted as `# key=value` comments
/// after the dataset header.
pub fn write_csv(cloud: &PointCloud, path: &Path, extra: &[(String, String)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv_to(cloud, &mut out, extra)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(cloud: &PointCloud, out: &mut W, extra: &[(String, String)]) -> Result<()> {
    writeln!(
        out,
        "# dataset,{},{},{},{}",
        cloud.dataset_name,
        cloud.n(),
        cloud.d(),
        cloud.seed
    )?;
    for (k, v) in extra {
        writeln!(out, "# {k}={v}")?;
    }
    for row in cloud.points.rows() {
        let line = row.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let f = std::fs::File::open(path)?;
    read_csv_from(BufReader::new(f))
}

pub fn read_csv_from<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut header: Option<(String, usize, usize, u64)> = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(fields) = rest.strip_prefix("dataset,") {
                let parts: Vec<&str> = fields.split(',').collect();
                if parts.len() != 4 {
                    return Err(Error::Format(format!("bad header on line {}", lineno + 1)));
                }
                let parse = |s: &str| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Format(format!("bad header field `{s}`")))
                };
                header = Some((
                    parts[0].to_string(),
                    parse(parts[1])? as usize,
                    parse(parts[2])? as usize,
                    parse(parts[3])?,
                ));
            }
            continue;
        }
        let (_, _, d, _) = header
            .as_ref()
            .ok_or_else(|| Error::Format("data row before `# dataset,...` header".into()))?;
        let before = values.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{tok}` on line {}", lineno + 1)))?;
            values.push(v);
        }
        if values.len() - before != *d {
            return Err(Error::Format(format!(
                "line {} has {} columns, header says {d}",
                lineno + 1,
                values.len() - before
            )));
        }
        rows += 1;
    }
    let (name, n, d, seed) = header.ok_or_else(|| Error::Format("missing header".into()))?;
    if rows != n {
        return Err(Error::Format(format!("header says {n} rows, found {rows}")));
    }
    let points = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok(PointCloud::new(points, name, seed))
}
