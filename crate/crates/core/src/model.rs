//! Softmax classifier over fixed feature vectors.
//!
//! All derivatives are taken with respect to the last-layer weight matrix
//! `beta` (d × K, row-major, so `beta[a * K + k]` couples feature `a` to
//! class `k`). Flattened parameter vectors use the same layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, Fnv64};

/// Lower clamp applied to the true-class probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-300;

/// Anything that can be fed to the classifier: a feature vector and a class
/// index in `[0, K)`.
pub trait Example {
    fn features(&self) -> &[f64];
    fn label(&self) -> usize;
}

impl<T: Example + ?Sized> Example for &T {
    fn features(&self) -> &[f64] {
        (**self).features()
    }
    fn label(&self) -> usize {
        (**self).label()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        LabeledPoint { features, label }
    }
}

impl Example for LabeledPoint {
    fn features(&self) -> &[f64] {
        &self.features
    }
    fn label(&self) -> usize {
        self.label
    }
}

#[derive(Deserialize)]
struct RawModel {
    dim: usize,
    num_classes: usize,
    beta: Vec<f64>,
}

impl TryFrom<RawModel> for SoftmaxModel {
    type Error = Error;
    fn try_from(raw: RawModel) -> Result<Self> {
        SoftmaxModel::from_beta(raw.dim, raw.num_classes, raw.beta)
    }
}

/// Last-layer weights of a K-way softmax classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct SoftmaxModel {
    dim: usize,
    num_classes: usize,
    beta: Vec<f64>,
}

impl SoftmaxModel {
    pub fn zeros(dim: usize, num_classes: usize) -> Result<Self> {
        Self::from_beta(dim, num_classes, vec![0.0; dim * num_classes])
    }

    pub fn from_beta(dim: usize, num_classes: usize, beta: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("feature dimension must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::contract("a softmax model needs at least 2 classes"));
        }
        if beta.len() != dim * num_classes {
            return Err(Error::DimensionMismatch {
                what: "beta",
                expected: dim * num_classes,
                found: beta.len(),
            });
        }
        if let Some(pos) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::contract(format!("beta[{pos}] is not finite")));
        }
        Ok(SoftmaxModel {
            dim,
            num_classes,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Length of the flattened parameter vector, `d · K`.
    pub fn num_params(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub(crate) fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    /// Hash of the dimensions and the exact bit pattern of `beta`.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.write_u64(self.dim as u64);
        h.write_u64(self.num_classes as u64);
        for &b in &self.beta {
            h.write_f64(b);
        }
        h.finish()
    }

    pub(crate) fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_example<E: Example>(&self, e: &E) -> Result<()> {
        self.check_features(e.features())?;
        if e.label() >= self.num_classes {
            return Err(Error::contract(format!(
                "label {} out of range for {} classes",
                e.label(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub(crate) fn check_all<E: Example>(&self, batch: &[E]) -> Result<()> {
        batch.iter().try_for_each(|e| self.check_example(e))
    }

    /// `βᵀx`, unchecked.
    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.num_classes;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            let row = &self.beta[a * k..(a + 1) * k];
            for (o, &b) in out.iter_mut().zip(row) {
                *o += xa * b;
            }
        }
    }

    /// Softmax probabilities with max-logit subtraction, unchecked.
    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_into(x, out);
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = numeric::exp(*o - max);
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        let mut out = vec![0.0; self.num_classes];
        self.proba_into(x, &mut out);
        Ok(out)
    }

    /// `−log ŷ[y]` with `ŷ[y]` clamped at [`LOG_CLAMP`].
    pub fn cross_entropy_loss(&self, x: &[f64], y: usize) -> Result<f64> {
        let p = self.predict_proba(x)?;
        let py = *p
            .get(y)
            .ok_or_else(|| Error::contract(format!("label {y} out of range")))?;
        Ok(-numeric::ln(py.max(LOG_CLAMP)))
    }

    /// `x (ŷ − y)ᵀ` as a flattened d × K matrix.
    pub fn last_layer_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_example(&(x, y))?;
        let mut p = vec![0.0; self.num_classes];
        let mut g = vec![0.0; self.num_params()];
        self.gradient_into(x, y, &mut p, &mut g);
        Ok(g)
    }

    /// Writes `x (ŷ − y)ᵀ` into `out`; `scratch` holds K entries.
    pub(crate) fn gradient_into(&self, x: &[f64], y: usize, scratch: &mut [f64], out: &mut [f64]) {
        let k = self.num_classes;
        self.proba_into(x, scratch);
        scratch[y] -= 1.0;
        for (a, &xa) in x.iter().enumerate() {
            for (o, &r) in out[a * k..(a + 1) * k].iter_mut().zip(scratch.iter()) {
                *o = xa * r;
            }
        }
    }

    /// Adds `weight · x (ŷ − y)ᵀ` into `acc` and returns the unweighted loss.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        y: usize,
        weight: f64,
        scratch: &mut [f64],
        acc: &mut [f64],
    ) -> f64 {
        let k = self.num_classes;
        self.proba_into(x, scratch);
        let loss = -numeric::ln(scratch[y].max(LOG_CLAMP));
        scratch[y] -= 1.0;
        for (a, &xa) in x.iter().enumerate() {
            let wx = weight * xa;
            for (o, &r) in acc[a * k..(a + 1) * k].iter_mut().zip(scratch.iter()) {
                *o += wx * r;
            }
        }
        loss
    }

    /// Adds `weight · H_i v` for a single instance into `acc`.
    fn accumulate_hvp(&self, x: &[f64], v: &[f64], weight: f64, p: &mut [f64], u: &mut [f64], acc: &mut [f64]) {
        let k = self.num_classes;
        self.proba_into(x, p);
        // u = Vᵀx
        u.iter_mut().for_each(|ui| *ui = 0.0);
        for (a, &xa) in x.iter().enumerate() {
            for (ui, &vk) in u.iter_mut().zip(&v[a * k..(a + 1) * k]) {
                *ui += xa * vk;
            }
        }
        // w = (diag(p) − p pᵀ) u
        let pu = numeric::dot(p, u);
        for (ui, &pk) in u.iter_mut().zip(p.iter()) {
            *ui = pk * (*ui - pu);
        }
        for (a, &xa) in x.iter().enumerate() {
            let wx = weight * xa;
            for (o, &wk) in acc[a * k..(a + 1) * k].iter_mut().zip(u.iter()) {
                *o += wx * wk;
            }
        }
    }
}

impl<'a> Example for (&'a [f64], usize) {
    fn features(&self) -> &[f64] {
        self.0
    }
    fn label(&self) -> usize {
        self.1
    }
}

/// Per-instance gradients stacked as an n × (d·K) row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BatchGradients {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `G s`, one entry per instance.
    pub fn times(&self, s: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| numeric::dot(self.row(i), s)).collect()
    }

    /// Column means, i.e. the gradient of the mean loss.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for i in 0..self.rows {
            numeric::axpy(1.0, self.row(i), &mut acc);
        }
        let n = self.rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Gradients of every instance in one pass: `P = softmax(Xβ)`, `G_i = x_i ⊗ (p_i − y_i)`.
pub fn batch_gradients<E: Example>(model: &SoftmaxModel, batch: &[E]) -> Result<BatchGradients> {
    model.check_all(batch)?;
    let cols = model.num_params();
    let mut data = vec![0.0; batch.len() * cols];
    let mut scratch = vec![0.0; model.num_classes()];
    for (e, row) in batch.iter().zip(data.chunks_exact_mut(cols)) {
        model.gradient_into(e.features(), e.label(), &mut scratch, row);
    }
    Ok(BatchGradients {
        rows: batch.len(),
        cols,
        data,
    })
}

pub fn mean_loss<E: Example>(model: &SoftmaxModel, batch: &[E]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("mean loss of an empty batch"));
    }
    let mut total = 0.0;
    for e in batch {
        total += model.cross_entropy_loss(e.features(), e.label())?;
    }
    Ok(total / batch.len() as f64)
}

/// `(1/|batch|) Σ_i H_i v` for the mean cross-entropy, without any ridge term.
pub fn hessian_vector_product<E: Example>(
    model: &SoftmaxModel,
    batch: &[E],
    v: &[f64],
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::contract("Hessian-vector product over an empty batch"));
    }
    if v.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            what: "HVP direction",
            expected: model.num_params(),
            found: v.len(),
        });
    }
    model.check_all(batch)?;
    Ok(hvp_unchecked(model, batch.iter(), batch.len(), v))
}

/// HVP over an iterator of already-validated examples.
pub(crate) fn hvp_unchecked<'a, E: Example + 'a>(
    model: &SoftmaxModel,
    batch: impl Iterator<Item = &'a E>,
    len: usize,
    v: &[f64],
) -> Vec<f64> {
    let k = model.num_classes();
    let mut acc = vec![0.0; model.num_params()];
    let mut p = vec![0.0; k];
    let mut u = vec![0.0; k];
    let w = 1.0 / len as f64;
    for e in batch {
        model.accumulate_hvp(e.features(), v, w, &mut p, &mut u, &mut acc);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErmConfig {
    /// Ridge strength: the objective is `mean loss + lambda_reg ‖β‖² / 2`.
    pub lambda_reg: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for ErmConfig {
    fn default() -> Self {
        ErmConfig {
            lambda_reg: 1e-2,
            grad_tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmFit {
    pub model: SoftmaxModel,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Ridge-regularized empirical risk minimizer, starting from `β = 0`.
pub fn train_erm<E: Example>(
    instances: &[E],
    num_classes: usize,
    config: &ErmConfig,
) -> Result<ErmFit> {
    let n = instances.len();
    let weights = vec![1.0 / n.max(1) as f64; n];
    train_erm_weighted(instances, &weights, num_classes, config)
}

/// Minimizes `Σ_i w_i ℓ_i(β) + λ ‖β‖² / 2` by full-batch gradient descent with
/// Barzilai–Borwein trial steps and Armijo backtracking.
pub fn train_erm_weighted<E: Example>(
    instances: &[E],
    weights: &[f64],
    num_classes: usize,
    config: &ErmConfig,
) -> Result<ErmFit> {
    let first = instances
        .first()
        .ok_or_else(|| Error::contract("train_erm needs at least one instance"))?;
    if weights.len() != instances.len() {
        return Err(Error::DimensionMismatch {
            what: "instance weights",
            expected: instances.len(),
            found: weights.len(),
        });
    }
    let mut model = SoftmaxModel::zeros(first.features().len(), num_classes)?;
    model.check_all(instances)?;
    let mut seen = vec![false; num_classes];
    for (e, &w) in instances.iter().zip(weights) {
        if w != 0.0 {
            seen[e.label()] = true;
        }
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        log::warn!("train_erm: fewer than two classes present; the solution is driven by the ridge term");
    }

    let lambda = config.lambda_reg;
    let eval = |m: &SoftmaxModel, grad: &mut [f64]| -> f64 {
        let mut scratch = vec![0.0; num_classes];
        grad.copy_from_slice(m.beta());
        grad.iter_mut().for_each(|g| *g *= lambda);
        let mut f = 0.5 * lambda * numeric::dot(m.beta(), m.beta());
        for (e, &w) in instances.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            f += w * m.accumulate_gradient(e.features(), e.label(), w, &mut scratch, grad);
        }
        f
    };

    let p = model.num_params();
    let mut grad = vec![0.0; p];
    let mut f = eval(&model, &mut grad);
    let mut trial = model.clone();
    let mut trial_grad = vec![0.0; p];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut grad_norm = numeric::norm(&grad);

    while grad_norm > config.grad_tol && iterations < config.max_iters {
        iterations += 1;
        if !f.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
                detail: format!("objective is {f}"),
            });
        }
        let g2 = grad_norm * grad_norm;
        // Objective differences this close to f are below rounding noise.
        let slack = 4.0 * f64::EPSILON * (1.0 + f.abs());
        let mut t = step;
        let f_trial = loop {
            for ((b, &b0), &g) in trial.beta_mut().iter_mut().zip(model.beta()).zip(&grad) {
                *b = b0 - t * g;
            }
            let ft = eval(&trial, &mut trial_grad);
            if ft.is_finite() && ft <= f - 1e-4 * t * g2 + slack {
                break ft;
            }
            t *= 0.5;
            if t < 1e-30 {
                return Err(Error::Diverged {
                    iteration: iterations,
                    detail: format!("line search failed at objective {f:.6e}, |g| = {grad_norm:.3e}"),
                });
            }
        };
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..p {
            let s = trial.beta()[i] - model.beta()[i];
            let y = trial_grad[i] - grad[i];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 { ss / sy } else { 2.0 * t };
        core::mem::swap(&mut model, &mut trial);
        core::mem::swap(&mut grad, &mut trial_grad);
        f = f_trial;
        grad_norm = numeric::norm(&grad);
    }

    let converged = grad_norm <= config.grad_tol;
    if !converged {
        log::warn!("train_erm: stopped at the iteration cap with |g| = {grad_norm:.3e}");
    }
    Ok(ErmFit {
        model,
        objective: f,
        grad_norm,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let m = SoftmaxModel::zeros(4, 3).unwrap();
        let p = m.predict_proba(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        for pk in p {
            assert!(approx(pk, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn two_class_analytic_softmax() {
        // x = (1), beta row = (0, ln 3) gives logits (0, ln 3).
        let m = SoftmaxModel::from_beta(1, 2, vec![0.0, libm::log(3.0)]).unwrap();
        let p = m.predict_proba(&[1.0]).unwrap();
        assert!(approx(p[0], 0.25, 1e-15));
        assert!(approx(p[1], 0.75, 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = SoftmaxModel::zeros(2, 3).unwrap();
        assert!(matches!(
            m.predict_proba(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1, .. })
        ));
        assert!(m.cross_entropy_loss(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn constructor_rejects_bad_beta() {
        assert!(SoftmaxModel::from_beta(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(SoftmaxModel::from_beta(1, 1, vec![0.0]).is_err());
        assert!(SoftmaxModel::from_beta(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn uniform_loss_is_ln_k() {
        let m = SoftmaxModel::zeros(3, 4).unwrap();
        let l = m.cross_entropy_loss(&[0.3, 0.1, -1.0], 2).unwrap();
        assert!(approx(l, 1.386_294_361_119_890_6, 1e-15));
    }

    #[test]
    fn saturated_correct_prediction_has_zero_loss() {
        let m = SoftmaxModel::from_beta(1, 2, vec![0.0, 1000.0]).unwrap();
        assert_eq!(m.cross_entropy_loss(&[1.0], 1).unwrap(), 0.0);
        // The wrong class underflows to 0 and hits the clamp.
        let clamped = m.cross_entropy_loss(&[1.0], 0).unwrap();
        assert!(approx(clamped, -libm::log(LOG_CLAMP), 1e-9));
    }

    #[test]
    fn analytic_outer_product_gradient() {
        // logits (0, -ln 3) give ŷ = (0.75, 0.25); with x = (1, 2), y = class 0.
        let m = SoftmaxModel::from_beta(2, 2, vec![0.0, -libm::log(3.0), 0.0, 0.0]).unwrap();
        let g = m.last_layer_gradient(&[1.0, 2.0], 0).unwrap();
        let expected = [-0.25, 0.25, -0.5, 0.5];
        for (a, b) in g.iter().zip(expected) {
            assert!(approx(*a, b, 1e-15), "{g:?}");
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let m = SoftmaxModel::from_beta(1, 2, vec![0.0, 800.0]).unwrap();
        let g = m.last_layer_gradient(&[1.0], 1).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_edge_cases() {
        let m = SoftmaxModel::from_beta(2, 2, vec![0.3, -0.2, 0.1, 0.4]).unwrap();
        let batch = [LabeledPoint::new(vec![1.0, -1.0], 0)];
        let zero = hessian_vector_product(&m, &batch, &[0.0; 4]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));

        let saturated = SoftmaxModel::from_beta(1, 2, vec![0.0, 60.0]).unwrap();
        let hv = hessian_vector_product(&saturated, &[LabeledPoint::new(vec![1.0], 1)], &[1.0, -3.0])
            .unwrap();
        assert!(hv.iter().all(|x| x.abs() < 1e-9), "{hv:?}");

        let empty: [LabeledPoint; 0] = [];
        assert!(hessian_vector_product(&m, &empty, &[0.0; 4]).is_err());
    }

    #[test]
    fn batch_gradients_match_single_gradients() {
        let m = SoftmaxModel::from_beta(2, 3, vec![0.1, 0.2, -0.3, 0.5, -0.1, 0.0]).unwrap();
        let batch = [
            LabeledPoint::new(vec![1.0, 2.0], 0),
            LabeledPoint::new(vec![-0.5, 0.3], 2),
        ];
        let g = batch_gradients(&m, &batch).unwrap();
        for (i, e) in batch.iter().enumerate() {
            assert_eq!(g.row(i), m.last_layer_gradient(&e.features, e.label).unwrap().as_slice());
        }
    }

    #[test]
    fn erm_single_class_stays_finite() {
        let pts = [
            LabeledPoint::new(vec![1.0, 0.0], 1),
            LabeledPoint::new(vec![0.5, 0.5], 1),
        ];
        let fit = train_erm(&pts, 2, &ErmConfig::default()).unwrap();
        assert!(fit.model.beta().iter().all(|b| b.is_finite()));
        assert!(fit.converged);
    }

    #[test]
    fn erm_rejects_empty_input() {
        let pts: [LabeledPoint; 0] = [];
        assert!(train_erm(&pts, 2, &ErmConfig::default()).is_err());
    }

    #[test]
    fn model_serde_validates() {
        let m = SoftmaxModel::from_beta(1, 2, vec![0.5, -0.5]).unwrap();
        assert_eq!(m.fingerprint(), m.clone().fingerprint());
        let other = SoftmaxModel::from_beta(1, 2, vec![0.5, -0.25]).unwrap();
        assert_ne!(m.fingerprint(), other.fingerprint());
    }
}
