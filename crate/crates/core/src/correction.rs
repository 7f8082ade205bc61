//! Residual correction flow trained on coupled velocity pairs, plus the
//! mean-field rectified-flow baseline.
//!
//! A training pair is `(x_t, V0, V1)` with `V1 = X_I - x0` and `V0` drawn from
//! the surrogate velocity law through one of the source couplings. The net
//! regresses `V1 - V0` at `V_tau = (1 - tau) V0 + tau V1`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coreset::{responsibility_into, sample_categorical, CoresetGmm};
use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::mlp::{ema_update, Adam, Mlp};
use crate::rng::{self, Rng};
use crate::velocity::{cond_velocity_params, CondVelocityLaw};

/// Floor applied to the batch estimate of the mean label posterior.
pub const TILT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `B ~ Cat(w)` independent of the data index.
    DirectPrior,
    /// `B ~ T(X_I)`, the Sinkhorn row of the paired datum.
    SinkhornAnchored,
    /// `B ~ q(V1) ∝ (gamma / rbar) r(V1)`, importance-tilted label posterior.
    IsTilted,
    /// `V0 ~ N(0, I)` independent of everything.
    IndependentGaussian,
}

impl Coupling {
    pub const ALL: [Coupling; 4] = [
        Coupling::DirectPrior,
        Coupling::SinkhornAnchored,
        Coupling::IsTilted,
        Coupling::IndependentGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coupling::DirectPrior => "direct_prior",
            Coupling::SinkhornAnchored => "sinkhorn_anchored",
            Coupling::IsTilted => "is_tilted",
            Coupling::IndependentGaussian => "independent_gaussian",
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Coupling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Coupling::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownCoupling {
                name: s.to_string(),
                valid: Coupling::ALL.map(Coupling::name).join(", "),
            })
    }
}

/// Training-time distribution of `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainTime {
    /// `t = 0`, the one-outer-step case.
    Zero,
    /// `t` uniform on `{0, 1/J, ..., (J-1)/J}`. Experimental.
    Grid { points: usize },
}

impl TrainTime {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            TrainTime::Zero => 0.0,
            TrainTime::Grid { points } => rng.random_range(0..points) as f64 / points as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub coupling: Coupling,
    pub train_t: TrainTime,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            batch: 256,
            learning_rate: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ema_decay: 0.9999,
            coupling: Coupling::SinkhornAnchored,
            train_t: TrainTime::Zero,
            hidden: vec![128, 128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("invalid hidden sizes {:?}", self.hidden));
        }
        if let TrainTime::Grid { points } = self.train_t {
            if points == 0 {
                return bad("train_t grid needs at least one point".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetMode {
    /// Input `(v, tau, x, t)`, output a velocity correction.
    Correction,
    /// Input `(x_t, t)`, output the marginal velocity.
    MeanField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionNet {
    mode: NetMode,
    d: usize,
    mlp: Mlp,
    ema: Option<Vec<f64>>,
    pub ema_decay: f64,
    pub train: Option<TrainConfig>,
    /// Free-form run metadata carried through the file.
    pub provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    mode: NetMode,
    d: usize,
    layer_sizes: Vec<usize>,
    activation: String,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    ema_weights: Option<Vec<Vec<Vec<f64>>>>,
    ema_biases: Option<Vec<Vec<f64>>>,
    ema_decay: f64,
    train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

const ACTIVATION: &str = "silu";

fn input_dim(mode: NetMode, d: usize) -> usize {
    match mode {
        NetMode::Correction => 2 * d + 2,
        NetMode::MeanField => d + 1,
    }
}

impl CorrectionNet {
    pub fn new(mode: NetMode, d: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let mut sizes = vec![input_dim(mode, d)];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let mut rng = rng::stream(seed, &[0x1417]);
        Ok(Self {
            mode,
            d,
            mlp: Mlp::new(&sizes, &mut rng)?,
            ema: None,
            ema_decay: 0.0,
            train: None,
            provenance: None,
        })
    }

    pub fn mode(&self) -> NetMode {
        self.mode
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.mlp.sizes()
    }

    pub fn params(&self) -> &[f64] {
        &self.mlp.params
    }

    pub fn ema_params(&self) -> Option<&[f64]> {
        self.ema.as_deref()
    }

    fn active(&self, use_ema: bool) -> &[f64] {
        match (use_ema, &self.ema) {
            (true, Some(e)) => e,
            _ => &self.mlp.params,
        }
    }

    /// Batched forward pass on pre-assembled inputs.
    pub fn forward_batch(&self, inputs: ndarray::ArrayView2<'_, f64>, use_ema: bool) -> Array2<f64> {
        self.mlp.forward_with(self.active(use_ema), inputs)
    }

    /// `f(v, tau, x, t)` for a batch; `tau` and `t` are shared scalars.
    pub fn correction_batch(
        &self,
        v: ndarray::ArrayView2<'_, f64>,
        tau: f64,
        x: ndarray::ArrayView2<'_, f64>,
        t: f64,
        use_ema: bool,
    ) -> Array2<f64> {
        let n = v.nrows();
        let d = self.d;
        let mut inp = Array2::zeros((n, 2 * d + 2));
        inp.slice_mut(s![.., ..d]).assign(&v);
        inp.column_mut(d).fill(tau);
        inp.slice_mut(s![.., d + 1..2 * d + 1]).assign(&x);
        inp.column_mut(2 * d + 1).fill(t);
        self.forward_batch(inp.view(), use_ema)
    }

    /// Mean-field velocity at a batch of states sharing `t`.
    pub fn meanfield_batch(&self, x: ndarray::ArrayView2<'_, f64>, t: f64, use_ema: bool) -> Array2<f64> {
        let n = x.nrows();
        let d = self.d;
        let mut inp = Array2::zeros((n, d + 1));
        inp.slice_mut(s![.., ..d]).assign(&x);
        inp.column_mut(d).fill(t);
        self.forward_batch(inp.view(), use_ema)
    }

    fn to_file(&self) -> NetFile {
        let split = |p: &[f64]| {
            let mut w = Vec::new();
            let mut b = Vec::new();
            for l in 0..self.mlp.n_layers() {
                w.push(self.mlp.weight(p, l).rows().into_iter().map(|r| r.to_vec()).collect());
                b.push(self.mlp.bias(p, l).to_vec());
            }
            (w, b)
        };
        let (weights, biases) = split(&self.mlp.params);
        let (ema_weights, ema_biases) = match &self.ema {
            Some(e) => {
                let (w, b) = split(e);
                (Some(w), Some(b))
            }
            None => (None, None),
        };
        NetFile {
            mode: self.mode,
            d: self.d,
            layer_sizes: self.mlp.sizes().to_vec(),
            activation: ACTIVATION.into(),
            weights,
            biases,
            ema_weights,
            ema_biases,
            ema_decay: self.ema_decay,
            train: self.train.clone(),
            provenance: self.provenance.clone(),
        }
    }

    fn from_file(f: NetFile) -> Result<Self> {
        if f.activation != ACTIVATION {
            return Err(Error::Format(format!("unsupported activation {:?}", f.activation)));
        }
        let sizes = &f.layer_sizes;
        if sizes.len() < 2 || sizes[0] != input_dim(f.mode, f.d) || sizes[sizes.len() - 1] != f.d {
            return Err(Error::Format(format!("layer sizes {sizes:?} do not fit d = {}", f.d)));
        }
        let flatten = |w: &[Vec<Vec<f64>>], b: &[Vec<f64>]| -> Result<Vec<f64>> {
            if w.len() != sizes.len() - 1 || b.len() != sizes.len() - 1 {
                return Err(Error::Format("layer count mismatch".into()));
            }
            let mut out = Vec::new();
            for l in 0..w.len() {
                if w[l].len() != sizes[l + 1] || w[l].iter().any(|r| r.len() != sizes[l]) || b[l].len() != sizes[l + 1] {
                    return Err(Error::Format(format!("layer {l} has the wrong shape")));
                }
                for r in &w[l] {
                    out.extend_from_slice(r);
                }
                out.extend_from_slice(&b[l]);
            }
            Ok(out)
        };
        let mlp = Mlp::from_parts(sizes, flatten(&f.weights, &f.biases)?)?;
        let ema = match (&f.ema_weights, &f.ema_biases) {
            (Some(w), Some(b)) => Some(flatten(w, b)?),
            (None, None) => None,
            _ => return Err(Error::Format("ema_weights and ema_biases must appear together".into())),
        };
        Ok(Self {
            mode: f.mode,
            d: f.d,
            mlp,
            ema,
            ema_decay: f.ema_decay,
            train: f.train,
            provenance: f.provenance,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `f(v, tau, x, t)` with the raw parameters.
pub fn net_forward(net: &CorrectionNet, v: ArrayView1<'_, f64>, tau: f64, x: ArrayView1<'_, f64>, t: f64) -> Result<Array1<f64>> {
    if net.mode != NetMode::Correction {
        return Err(Error::InvalidArgument("net_forward needs a correction net".into()));
    }
    for len in [v.len(), x.len()] {
        if len != net.d {
            return Err(Error::DimensionMismatch { expected: net.d, got: len });
        }
    }
    let out = net.correction_batch(v.insert_axis(ndarray::Axis(0)), tau, x.insert_axis(ndarray::Axis(0)), t, false);
    Ok(out.row(0).to_owned())
}

/// One coupled draw before the source velocity is chosen.
struct PairStart<'a> {
    t: f64,
    x0: Array1<f64>,
    x_t: Array1<f64>,
    index: usize,
    v1: Array1<f64>,
    law: Option<CondVelocityLaw<'a>>,
}

fn start_pair<'a>(
    model: &'a CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    t: f64,
    fixed_x0: Option<ArrayView1<'_, f64>>,
    rng: &mut Rng,
) -> Result<PairStart<'a>> {
    let d = data.d();
    let x0: Array1<f64> = match fixed_x0 {
        Some(x) => x.to_owned(),
        None => (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    };
    let index = rng.random_range(0..data.n());
    let x1 = data.row(index);
    let x_t = &x0 * (1.0 - t) + &x1 * t;
    let v1 = &x1 - &x0;
    let needs_law = match coupling {
        Coupling::IsTilted => true,
        Coupling::DirectPrior | Coupling::SinkhornAnchored => t > 0.0,
        Coupling::IndependentGaussian => false,
    };
    let law = if needs_law {
        Some(cond_velocity_params(model, x_t.view(), t)?)
    } else {
        None
    };
    Ok(PairStart { t, x0, x_t, index, v1, law })
}

/// Chooses the label and draws `V0`; returns the label when one exists.
fn finish_pair(
    model: &CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    start: &PairStart<'_>,
    posterior: Option<&Array1<f64>>,
    rbar: Option<&[f64]>,
    rng: &mut Rng,
    v0: &mut [f64],
) -> Option<usize> {
    let sub_x0 = |v0: &mut [f64]| {
        for (o, x) in v0.iter_mut().zip(start.x0.iter()) {
            *o -= x;
        }
    };
    match coupling {
        Coupling::IndependentGaussian => {
            for o in v0.iter_mut() {
                *o = rng.sample(StandardNormal);
            }
            None
        }
        Coupling::DirectPrior => match &start.law {
            None => {
                let b = model.draw_into(rng, v0);
                sub_x0(v0);
                Some(b)
            }
            Some(law) => Some(law.sample_into(rng, v0)),
        },
        Coupling::SinkhornAnchored => {
            let mut row = vec![0.0; model.k()];
            responsibility_into(model, data.row(start.index), &mut row);
            let b = sample_categorical(rng, &row);
            match &start.law {
                None => {
                    model.draw_component_into(b, rng, v0);
                    sub_x0(v0);
                }
                Some(law) => law.sample_component_into(b, rng, v0),
            }
            Some(b)
        }
        Coupling::IsTilted => {
            let law = start.law.as_ref().expect("tilted draws carry a law");
            let r = posterior.expect("tilted draws carry a posterior");
            let rbar = rbar.expect("tilted draws carry a tilt");
            let q: Vec<f64> = (0..model.k())
                .map(|b| law.log_gammas[b].exp() / rbar[b] * r[b])
                .collect();
            let b = sample_categorical(rng, &q);
            if start.t == 0.0 {
                model.draw_component_into(b, rng, v0);
                sub_x0(v0);
            } else {
                law.sample_component_into(b, rng, v0);
            }
            Some(b)
        }
    }
}

/// A single coupled training pair `(x_t, V0, V1)`. `tilt` is the mean label
/// posterior `rbar` and is required for the tilted coupling.
pub fn draw_training_pair(
    model: &CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    t: f64,
    tilt: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    check_inputs(model, data)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    if coupling == Coupling::IsTilted && tilt.map_or(true, |r| r.len() != model.k()) {
        return Err(Error::InvalidArgument("the tilted coupling needs a K-vector tilt".into()));
    }
    let start = start_pair(model, data, coupling, t, None, rng)?;
    let posterior = start.law.as_ref().map(|l| l.label_posterior(start.v1.view()));
    let mut v0 = Array1::zeros(model.d());
    finish_pair(model, data, coupling, &start, posterior.as_ref(), tilt, rng, v0.as_slice_mut().expect("contiguous"));
    Ok((start.x_t, v0, start.v1))
}

/// A batch of coupled pairs; sample `i` of iteration `iter` owns the stream
/// `(seed, iter, i)`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub t: Vec<f64>,
    pub x_t: Array2<f64>,
    pub v0: Array2<f64>,
    pub v1: Array2<f64>,
    pub labels: Vec<Option<usize>>,
    pub indices: Vec<usize>,
    /// Floored, renormalized batch mean of the label posterior (tilted only).
    pub tilt: Option<Vec<f64>>,
    rngs: Vec<Rng>,
}

fn check_inputs(model: &CoresetGmm, data: &PointCloud) -> Result<()> {
    if model.d() != data.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), got: data.d() });
    }
    if data.n() == 0 {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    Ok(())
}

pub fn draw_training_batch(
    model: &CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    train_t: TrainTime,
    batch: usize,
    seed: u64,
    iter: u64,
) -> Result<TrainingBatch> {
    draw_batch(model, data, coupling, train_t, None, batch, seed, iter)
}

/// Like [`draw_training_batch`] at `t = 0` with every pair sharing the
/// source point `x0`.
pub fn draw_pairs_at_source(
    model: &CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    x0: ArrayView1<'_, f64>,
    batch: usize,
    seed: u64,
    iter: u64,
) -> Result<TrainingBatch> {
    if x0.len() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), got: x0.len() });
    }
    draw_batch(model, data, coupling, TrainTime::Zero, Some(x0), batch, seed, iter)
}

#[allow(clippy::too_many_arguments)]
fn draw_batch(
    model: &CoresetGmm,
    data: &PointCloud,
    coupling: Coupling,
    train_t: TrainTime,
    fixed_x0: Option<ArrayView1<'_, f64>>,
    batch: usize,
    seed: u64,
    iter: u64,
) -> Result<TrainingBatch> {
    check_inputs(model, data)?;
    let (k, d) = (model.k(), model.d());
    let mut rngs = Vec::with_capacity(batch);
    let mut starts = Vec::with_capacity(batch);
    for i in 0..batch {
        let mut rng = rng::stream(seed, &[0x7A1, iter, i as u64]);
        let t = train_t.draw(&mut rng);
        starts.push(start_pair(model, data, coupling, t, fixed_x0, &mut rng)?);
        rngs.push(rng);
    }
    let posteriors: Vec<Option<Array1<f64>>> = starts
        .iter()
        .map(|s| match coupling {
            Coupling::IsTilted => s.law.as_ref().map(|l| l.label_posterior(s.v1.view())),
            _ => None,
        })
        .collect();
    let tilt = if coupling == Coupling::IsTilted {
        let mut rbar = vec![0.0; k];
        for p in posteriors.iter().flatten() {
            for b in 0..k {
                rbar[b] += p[b] / batch as f64;
            }
        }
        let floored = rbar.iter().filter(|&&r| r < TILT_FLOOR).count();
        if floored > 0 {
            debug!("tilt estimate: {floored} of {k} components floored at {TILT_FLOOR:e}");
        }
        for r in rbar.iter_mut() {
            *r = r.max(TILT_FLOOR);
        }
        let total: f64 = rbar.iter().sum();
        rbar.iter_mut().for_each(|r| *r /= total);
        Some(rbar)
    } else {
        None
    };
    let mut v0 = Array2::zeros((batch, d));
    let mut labels = Vec::with_capacity(batch);
    for (i, (start, rng)) in starts.iter().zip(rngs.iter_mut()).enumerate() {
        let mut row = v0.row_mut(i);
        let out = row.as_slice_mut().expect("contiguous");
        labels.push(finish_pair(model, data, coupling, start, posteriors[i].as_ref(), tilt.as_deref(), rng, out));
    }
    let mut x_t = Array2::zeros((batch, d));
    let mut v1 = Array2::zeros((batch, d));
    for (i, s) in starts.iter().enumerate() {
        x_t.row_mut(i).assign(&s.x_t);
        v1.row_mut(i).assign(&s.v1);
    }
    Ok(TrainingBatch {
        t: starts.iter().map(|s| s.t).collect(),
        x_t,
        v0,
        v1,
        labels,
        indices: starts.iter().map(|s| s.index).collect(),
        tilt,
        rngs,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: CorrectionNet,
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    /// `iter,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

/// Runs Adam on the squared regression loss; `assemble` fills the batch input
/// and target for an iteration.
fn fit_net(
    mut net: CorrectionNet,
    cfg: &TrainConfig,
    mut assemble: impl FnMut(u64) -> Result<(Array2<f64>, Array2<f64>)>,
) -> Result<TrainOutcome> {
    net.ema = Some(net.mlp.params.clone());
    net.ema_decay = cfg.ema_decay;
    net.train = Some(cfg.clone());
    let np = net.mlp.params.len();
    let mut adam = Adam::new(np, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut grad = vec![0.0; np];
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let (inputs, target) = assemble(it as u64)?;
        let scale = 2.0 / inputs.nrows() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let out = net.mlp.backward(inputs.view(), |out| (out - &target) * scale, &mut grad);
        let loss = (&out - &target).mapv(|v| v * v).sum() / inputs.nrows() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter: it });
        }
        trace.push(loss);
        adam.update(&mut net.mlp.params, &grad);
        ema_update(net.ema.as_mut().expect("initialized"), &net.mlp.params, cfg.ema_decay);
        if (it + 1) % 1000 == 0 {
            info!("iter {}: loss {loss:.5}", it + 1);
        }
    }
    Ok(TrainOutcome { net, loss_trace: trace })
}

/// Trains the correction field on coupled pairs.
pub fn train_correction(model: &CoresetGmm, data: &PointCloud, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_inputs(model, data)?;
    let d = data.d();
    let net = CorrectionNet::new(NetMode::Correction, d, &cfg.hidden, rng::derive_seed(cfg.seed, &[0xC0]))?;
    if cfg.iters == 0 {
        return Ok(TrainOutcome { net, loss_trace: Vec::new() });
    }
    let batch = cfg.batch;
    fit_net(net, cfg, |it| {
        let mut b = draw_training_batch(model, data, cfg.coupling, cfg.train_t, batch, cfg.seed, it)?;
        let mut inputs = Array2::zeros((batch, 2 * d + 2));
        let target = &b.v1 - &b.v0;
        for i in 0..batch {
            let tau: f64 = b.rngs[i].random();
            let mut row = inputs.row_mut(i);
            for j in 0..d {
                row[j] = (1.0 - tau) * b.v0[[i, j]] + tau * b.v1[[i, j]];
                row[d + 1 + j] = b.x_t[[i, j]];
            }
            row[d] = tau;
            row[2 * d + 1] = b.t[i];
        }
        Ok((inputs, target))
    })
}

/// Rectified-flow baseline: regress `X1 - X0` on `(x_t, t)` under the
/// independent coupling of `N(0, I)` and the data.
pub fn train_meanfield_baseline(data: &PointCloud, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let d = data.d();
    let net = CorrectionNet::new(NetMode::MeanField, d, &cfg.hidden, rng::derive_seed(cfg.seed, &[0xBA5E]))?;
    if cfg.iters == 0 {
        return Ok(TrainOutcome { net, loss_trace: Vec::new() });
    }
    let batch = cfg.batch;
    fit_net(net, cfg, |it| {
        let mut inputs = Array2::zeros((batch, d + 1));
        let mut target = Array2::zeros((batch, d));
        for i in 0..batch {
            let mut rng = rng::stream(cfg.seed, &[0x3F, it, i as u64]);
            let t: f64 = rng.random();
            let idx = rng.random_range(0..data.n());
            for j in 0..d {
                let x0: f64 = rng.sample(StandardNormal);
                let x1 = data.points[[idx, j]];
                inputs[[i, j]] = (1.0 - t) * x0 + t * x1;
                target[[i, j]] = x1 - x0;
            }
            inputs[[i, d]] = t;
        }
        Ok((inputs, target))
    })
}
