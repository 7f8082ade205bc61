//! Small fully connected network with SiLU hidden activations, batched
//! forward/backward on a flat parameter vector, Adam and EMA.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Layer `l` stores `W_l` (out x in, row-major) followed by `b_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0];
    for w in sizes.windows(2) {
        let last = *offsets.last().expect("nonempty");
        offsets.push(last + w[0] * w[1] + w[1]);
    }
    offsets
}

impl Mlp {
    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))`; the last
    /// layer starts at zero.
    pub fn new<R: rand::Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let offsets = layer_offsets(sizes);
        let mut params = vec![0.0; *offsets.last().expect("nonempty")];
        for l in 0..sizes.len() - 2 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            for p in &mut params[offsets[l]..offsets[l + 1]] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            params,
        })
    }

    pub fn from_parts(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let offsets = layer_offsets(sizes);
        if params.len() != *offsets.last().expect("nonempty") {
            return Err(Error::Format(format!(
                "expected {} parameters for sizes {sizes:?}, got {}",
                offsets.last().unwrap(),
                params.len()
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    fn split(&self, params: &[f64], l: usize) -> (usize, usize, usize) {
        debug_assert_eq!(params.len(), self.params.len());
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (self.offsets[l], i, o)
    }

    pub fn weight<'a>(&self, params: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let (off, i, o) = self.split(params, l);
        ArrayView2::from_shape((o, i), &params[off..off + o * i]).expect("layout")
    }

    pub fn bias<'a>(&self, params: &'a [f64], l: usize) -> ArrayView1<'a, f64> {
        let (off, i, o) = self.split(params, l);
        ArrayView1::from(&params[off + o * i..off + o * i + o])
    }

    /// Forward pass with an arbitrary parameter vector of this layout.
    pub fn forward_with(&self, params: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(params, l).t());
            z += &self.bias(params, l);
            if l + 1 < self.n_layers() {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        h
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_with(&self.params, x)
    }

    /// Returns the output and accumulates the gradient of `sum(dout * out)`
    /// with respect to the parameters into `grad`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dout: impl Fn(&Array2<f64>) -> Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let nl = self.n_layers();
        let mut acts = Vec::with_capacity(nl + 1);
        let mut pre = Vec::with_capacity(nl);
        acts.push(x.to_owned());
        for l in 0..nl {
            let mut z = acts[l].dot(&self.weight(&self.params, l).t());
            z += &self.bias(&self.params, l);
            let a = if l + 1 < nl { z.mapv(silu) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let out = acts.pop().expect("output");
        let mut dz = dout(&out);
        for l in (0..nl).rev() {
            let (off, i, o) = self.split(&self.params, l);
            let gw = dz.t().dot(&acts[l]);
            for (g, v) in grad[off..off + o * i].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = dz.sum_axis(Axis(0));
            for (g, v) in grad[off + o * i..off + o * i + o].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if l > 0 {
                let mut da = dz.dot(&self.weight(&self.params, l));
                ndarray::Zip::from(&mut da).and(&pre[l - 1]).for_each(|d, &z| *d *= silu_grad(z));
                dz = da;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `shadow <- decay * shadow + (1 - decay) * params`.
pub fn ema_update(shadow: &mut [f64], params: &[f64], decay: f64) {
    for (s, p) in shadow.iter_mut().zip(params) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}

/// Column-stacks the arguments into one batch input.
pub fn concat_columns(parts: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("equal row counts")
}

pub fn column(values: &[f64]) -> Array2<f64> {
    Array1::from(values.to_vec()).insert_axis(Axis(1))
}
