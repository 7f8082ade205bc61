//! Closed-form conditional velocity law of the coreset surrogate.
//!
//! With source `N(0, I)` and target `sum_b w_b N(mu_b, Sigma_b)`, the law of
//! `V = X1 - X0` given `X_t = x` is a Gaussian mixture with
//! `A_b = t^2 I + (1-t)^2 Sigma_b^{-1}`, `Lambda_b = A_b^{-1}`,
//! `b_b = t x - (1-t) Sigma_b^{-1}(x - mu_b)`, `m_b = Lambda_b b_b`.
//! Everything is applied through the eigenbasis of `L_b L_b^T`, so a
//! component costs `O(d q)` with `q <= r`.

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::StandardNormal;

use crate::coreset::{sample_categorical, CoresetGmm};
use crate::error::{Error, Result};
use crate::linalg::logsumexp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal of `Lambda_b(t)` in the component eigenbasis: `alpha` on the
/// orthogonal complement, `beta_j` along basis vector `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPrecision {
    pub alpha: f64,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct CondVelocityLaw<'a> {
    model: &'a CoresetGmm,
    pub x: Array1<f64>,
    pub t: f64,
    pub log_gammas: Array1<f64>,
    pub component_means: Array2<f64>,
    pub precision_params: Vec<ComponentPrecision>,
}

fn check_model(model: &CoresetGmm) -> Result<()> {
    let s2 = model.shared_noise();
    if !(s2 > 0.0) {
        return Err(Error::SingularCovariance(s2));
    }
    Ok(())
}

/// `Sigma_b^{-1} y` by the Woodbury form on the component eigenbasis.
pub fn apply_cov_inverse(model: &CoresetGmm, b: usize, y: ArrayView1<'_, f64>) -> Array1<f64> {
    let s2 = model.shared_noise();
    let cb = model.basis(b);
    let mut out = &y / s2;
    for j in 0..cb.spikes.len() {
        let u = cb.basis.column(j);
        let coef = u.dot(&y) * (1.0 / (s2 + cb.spikes[j]) - 1.0 / s2);
        out.scaled_add(coef, &u);
    }
    out
}

/// `log |Sigma_b|`.
pub fn cov_log_det(model: &CoresetGmm, b: usize) -> f64 {
    let s2 = model.shared_noise();
    let cb = model.basis(b);
    let q = cb.spikes.len();
    (model.d() - q) as f64 * s2.ln() + cb.spikes.iter().map(|s| (s2 + s).ln()).sum::<f64>()
}

/// `log N(y; mu_b, Sigma_b)` for every component.
pub fn component_log_densities(model: &CoresetGmm, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_model(model)?;
    if y.len() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), got: y.len() });
    }
    let d = model.d() as f64;
    Ok(Array1::from_shape_fn(model.k(), |b| {
        let diff = &y - &model.means().row(b);
        let maha = diff.dot(&apply_cov_inverse(model, b, diff.view()));
        -0.5 * (d * LN_2PI + cov_log_det(model, b) + maha)
    }))
}

/// `log rho_1(y)` of the surrogate mixture.
pub fn surrogate_log_density(model: &CoresetGmm, y: ArrayView1<'_, f64>) -> Result<f64> {
    let comp = component_log_densities(model, y)?;
    let terms: Vec<f64> = comp
        .iter()
        .zip(model.weights().iter())
        .map(|(c, &w)| if w > 0.0 { w.ln() + c } else { f64::NEG_INFINITY })
        .collect();
    Ok(logsumexp(&terms))
}

/// Posterior `P(B = b | Y = y)` under the surrogate mixture.
pub fn gmm_posterior(model: &CoresetGmm, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let comp = component_log_densities(model, y)?;
    let mut terms: Vec<f64> = comp
        .iter()
        .zip(model.weights().iter())
        .map(|(c, &w)| if w > 0.0 { w.ln() + c } else { f64::NEG_INFINITY })
        .collect();
    let lse = logsumexp(&terms);
    for v in terms.iter_mut() {
        *v = (*v - lse).exp();
    }
    Ok(Array1::from(terms))
}

/// Builds the mixture `pi(v | x, t)`.
pub fn cond_velocity_params<'a>(model: &'a CoresetGmm, x: ArrayView1<'_, f64>, t: f64) -> Result<CondVelocityLaw<'a>> {
    check_model(model)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    if x.len() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), got: x.len() });
    }
    let (k, d) = (model.k(), model.d());
    let s2 = model.shared_noise();
    let (t2, u2) = (t * t, (1.0 - t) * (1.0 - t));
    let xx = x.dot(&x);
    let mut log_gammas = Array1::zeros(k);
    let mut means = Array2::zeros((k, d));
    let mut precision = Vec::with_capacity(k);
    for b in 0..k {
        let cb = model.basis(b);
        let q = cb.spikes.len();
        let alpha = s2 / (t2 * s2 + u2);
        let beta = cb.spikes.mapv(|s| (s2 + s) / (t2 * (s2 + s) + u2));
        let diff = &x - &model.means().row(b);
        let sinv_diff = apply_cov_inverse(model, b, diff.view());
        let rhs = &x * t - &sinv_diff * (1.0 - t);
        // m = Lambda rhs
        let mut m = &rhs * alpha;
        for j in 0..q {
            let u = cb.basis.column(j);
            m.scaled_add(u.dot(&rhs) * (beta[j] - alpha), &u);
        }
        let log_det_lambda = (d - q) as f64 * alpha.ln() + beta.iter().map(|v| v.ln()).sum::<f64>();
        let c = xx + diff.dot(&sinv_diff);
        let log_eta = 0.5 * log_det_lambda - 0.5 * cov_log_det(model, b) + 0.5 * rhs.dot(&m) - 0.5 * c;
        let w = model.weights()[b];
        log_gammas[b] = if w > 0.0 { w.ln() + log_eta } else { f64::NEG_INFINITY };
        means.row_mut(b).assign(&m);
        precision.push(ComponentPrecision { alpha, beta });
    }
    let lse = logsumexp(log_gammas.as_slice().expect("contiguous"));
    log_gammas.mapv_inplace(|v| v - lse);
    Ok(CondVelocityLaw {
        model,
        x: x.to_owned(),
        t,
        log_gammas,
        component_means: means,
        precision_params: precision,
    })
}

impl CondVelocityLaw<'_> {
    pub fn gammas(&self) -> Array1<f64> {
        self.log_gammas.mapv(f64::exp)
    }

    /// `Lambda_b(t) y`.
    pub fn apply_covariance(&self, b: usize, y: ArrayView1<'_, f64>) -> Array1<f64> {
        let p = &self.precision_params[b];
        let cb = self.model.basis(b);
        let mut out = &y * p.alpha;
        for j in 0..p.beta.len() {
            let u = cb.basis.column(j);
            out.scaled_add(u.dot(&y) * (p.beta[j] - p.alpha), &u);
        }
        out
    }

    /// Dense `Lambda_b(t)`; for diagnostics and small `d`.
    pub fn covariance_dense(&self, b: usize) -> Array2<f64> {
        let d = self.model.d();
        let mut out = Array2::zeros((d, d));
        for i in 0..d {
            let mut e = Array1::zeros(d);
            e[i] = 1.0;
            out.column_mut(i).assign(&self.apply_covariance(b, e.view()));
        }
        out
    }

    /// `log N(v; m_b, Lambda_b)` for every component.
    pub fn component_log_densities(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let d = self.model.d();
        Array1::from_shape_fn(self.model.k(), |b| {
            let p = &self.precision_params[b];
            let cb = self.model.basis(b);
            let diff = &v - &self.component_means.row(b);
            let mut maha = diff.dot(&diff) / p.alpha;
            let mut log_det = (d - p.beta.len()) as f64 * p.alpha.ln();
            for j in 0..p.beta.len() {
                let c = cb.basis.column(j).dot(&diff);
                maha += c * c * (1.0 / p.beta[j] - 1.0 / p.alpha);
                log_det += p.beta[j].ln();
            }
            -0.5 * (d as f64 * LN_2PI + log_det + maha)
        })
    }

    /// Posterior of the component label given a velocity `v`.
    pub fn label_posterior(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut terms = &self.component_log_densities(v) + &self.log_gammas;
        let lse = logsumexp(terms.as_slice().expect("contiguous"));
        terms.mapv_inplace(|x| (x - lse).exp());
        terms
    }

    /// Draws `v ~ N(m_b, Lambda_b)` for a given label.
    pub fn sample_component_into<R: rand::Rng + ?Sized>(&self, b: usize, rng: &mut R, out: &mut [f64]) {
        let p = &self.precision_params[b];
        let cb = self.model.basis(b);
        let d = self.model.d();
        let zeta: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sa = p.alpha.sqrt();
        let mut v = &zeta * sa;
        for j in 0..p.beta.len() {
            let u = cb.basis.column(j);
            v.scaled_add(u.dot(&zeta) * (p.beta[j].sqrt() - sa), &u);
        }
        for i in 0..d {
            out[i] = self.component_means[[b, i]] + v[i];
        }
    }

    /// Mixture mean `sum_b gamma_b m_b`.
    pub fn mean(&self) -> Array1<f64> {
        self.gammas().dot(&self.component_means)
    }

    /// Draws `B ~ Cat(gamma)`, then `v ~ N(m_B, Lambda_B)` into `out`.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let g = self.gammas();
        let b = sample_categorical(rng, g.as_slice().expect("contiguous"));
        self.sample_component_into(b, rng, out);
        b
    }
}

/// One draw `v ~ pi(. | x, t)`. At `t = 0` this is the direct form
/// `mu_B - x + L_B z + sigma eta` with `B ~ Cat(w)`.
pub fn sample_surrogate<R: rand::Rng + ?Sized>(
    model: &CoresetGmm,
    x: ArrayView1<'_, f64>,
    t: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(model.d());
    sample_surrogate_into(model, x, t, rng, out.as_slice_mut().expect("contiguous"))?;
    Ok(out)
}

pub fn sample_surrogate_into<R: rand::Rng + ?Sized>(
    model: &CoresetGmm,
    x: ArrayView1<'_, f64>,
    t: f64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<usize> {
    if t == 0.0 {
        check_model(model)?;
        if x.len() != model.d() {
            return Err(Error::DimensionMismatch { expected: model.d(), got: x.len() });
        }
        let b = model.draw_into(rng, out);
        for (o, xi) in out.iter_mut().zip(x.iter()) {
            *o -= xi;
        }
        return Ok(b);
    }
    let law = cond_velocity_params(model, x, t)?;
    Ok(law.sample_into(rng, out))
}
