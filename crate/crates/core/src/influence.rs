//! Influence of training instances on the validation loss.
//!
//! With `H` the ridge-regularized training Hessian (w.r.t. `beta`) and
//! `∇L` the mean validation gradient, instance `i` scores
//!
//! ```text
//! Φ_i = −∇ℓ_iᵀ H⁻¹ ∇L
//! ```
//!
//! Negative Φ means the instance is beneficial: up-weighting it lowers the
//! validation loss. The vector `s = H⁻¹∇L` is computed once (exactly, or by
//! the LiSSA recursion) and shared by every instance, so scoring a batch is a
//! single gradient-matrix/vector product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::model::{self, batch_gradients, Example, ErmConfig, SoftmaxModel};
use crate::numeric::{self, Stream};
use crate::sampling::sigmoid_probability;

pub const SIGN_CONVENTION: &str = "negative-is-beneficial";
/// Largest `d · K` for which the dense Hessian is materialized.
pub const DEFAULT_EXACT_MAX_PARAMS: usize = 2000;
pub const DEFAULT_PAIRWISE_CAP: usize = 10_000;
/// LiSSA gives up once `‖h‖` exceeds this multiple of `‖v‖`.
pub const LISSA_DIVERGENCE_FACTOR: f64 = 1e6;

/// `s ≈ (H + damping·I)⁻¹ v`, bound to the parameters it was computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseHvp {
    pub s: Vec<f64>,
    pub epoch: usize,
    pub damping: f64,
    pub converged: bool,
    pub iterations: usize,
    pub model_fingerprint: u64,
}

/// Mean validation-loss gradient `∇_β L`.
pub fn aggregate_validation_gradient<E: Example>(model: &SoftmaxModel, val: &[E]) -> Result<Vec<f64>> {
    if val.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    Ok(batch_gradients(model, val)?.mean())
}

/// `(H_train + shift·I) v` where `H_train` is the mean cross-entropy Hessian.
pub fn regularized_hvp<E: Example>(
    model: &SoftmaxModel,
    train: &[E],
    v: &[f64],
    shift: f64,
) -> Result<Vec<f64>> {
    let mut hv = model::hessian_vector_product(model, train, v)?;
    numeric::axpy(shift, v, &mut hv);
    Ok(hv)
}

fn check_curvature(lambda_reg: f64, damping: f64) -> Result<()> {
    if !(damping >= 0.0 && lambda_reg >= 0.0) || !(damping + lambda_reg > 0.0) {
        return Err(Error::contract(format!(
            "need damping >= 0, lambda_reg >= 0 and damping + lambda_reg > 0 (got {damping}, {lambda_reg})"
        )));
    }
    Ok(())
}

fn check_direction(model: &SoftmaxModel, v: &[f64]) -> Result<()> {
    if v.len() != model.num_params() {
        return Err(Error::DimensionMismatch {
            what: "inverse-HVP right-hand side",
            expected: model.num_params(),
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("inverse-HVP right-hand side is not finite"));
    }
    Ok(())
}

/// Dense `H + (lambda_reg + damping)·I`, factorized once.
pub struct DenseHessian {
    matrix: DMatrix<f64>,
    cholesky: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    damping: f64,
    fingerprint: u64,
}

impl DenseHessian {
    /// Materializes the matrix column by column from `d · K` HVPs on basis
    /// vectors.
    pub fn build<E: Example>(
        model: &SoftmaxModel,
        train: &[E],
        lambda_reg: f64,
        damping: f64,
        max_params: usize,
    ) -> Result<Self> {
        check_curvature(lambda_reg, damping)?;
        let p = model.num_params();
        if p > max_params {
            return Err(Error::CapExceeded {
                what: "dense Hessian",
                requested: p,
                cap: max_params,
                hint: "use LiSSA for models this large",
            });
        }
        if train.is_empty() {
            return Err(Error::contract("Hessian over an empty training set"));
        }
        model.check_all(train)?;
        let shift = lambda_reg + damping;
        let mut matrix = DMatrix::zeros(p, p);
        let mut e = vec![0.0; p];
        for c in 0..p {
            e[c] = 1.0;
            let col = model::hvp_unchecked(model, train.iter(), train.len(), &e);
            for (r, v) in col.into_iter().enumerate() {
                matrix[(r, c)] = v;
            }
            matrix[(c, c)] += shift;
            e[c] = 0.0;
        }
        // Exact symmetry; the HVP columns differ only in rounding.
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let cholesky = matrix.clone().cholesky().ok_or_else(|| Error::Singular {
            detail: "Cholesky factorization failed".into(),
        })?;
        let diag = cholesky.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !(lo > 0.0) || (lo / hi) * (lo / hi) < 1e-14 {
            return Err(Error::Singular {
                detail: format!("pivot ratio {:.3e}", (lo / hi) * (lo / hi)),
            });
        }
        Ok(DenseHessian {
            matrix,
            cholesky,
            damping,
            fingerprint: model.fingerprint(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Entry `(r, c)` of the regularized, damped Hessian.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.matrix[(r, c)]
    }

    pub fn solve(&self, v: &[f64]) -> Result<InverseHvp> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "inverse-HVP right-hand side",
                expected: self.dim(),
                found: v.len(),
            });
        }
        let s = self.cholesky.solve(&DVector::from_column_slice(v));
        Ok(InverseHvp {
            s: s.iter().copied().collect(),
            epoch: 0,
            damping: self.damping,
            converged: true,
            iterations: 1,
            model_fingerprint: self.fingerprint,
        })
    }
}

/// Direct solve of `(H + (lambda_reg + damping)·I) s = v`.
pub fn exact_inverse_hvp<E: Example>(
    model: &SoftmaxModel,
    train: &[E],
    v: &[f64],
    lambda_reg: f64,
    damping: f64,
) -> Result<InverseHvp> {
    check_direction(model, v)?;
    DenseHessian::build(model, train, lambda_reg, damping, DEFAULT_EXACT_MAX_PARAMS)?.solve(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LissaParams {
    /// Training instances sampled per step; `>= n` runs the deterministic
    /// full-batch recursion.
    pub batch_size: usize,
    pub max_iters: usize,
    /// The recursion runs on `(H + damping·I) / scale`, whose spectral norm
    /// must stay below 1.
    pub scale: f64,
    pub damping: f64,
    /// Stop once `‖h_t − h_{t−1}‖ / ‖h_t‖ < tol`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LissaParams {
    fn default() -> Self {
        LissaParams {
            batch_size: 64,
            max_iters: 10_000,
            scale: 10.0,
            damping: 0.01,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Stochastic Neumann-series estimate of `(H + damping·I)⁻¹ v`:
///
/// ```text
/// h_0 = v,   h_t = v + (I − Ĥ_t) h_{t−1},   Ĥ_t = (H_batch + (λ + damping)·I) / scale
/// ```
///
/// where `H_batch` is the mean Hessian of `batch_size` training instances
/// drawn without replacement. The estimate is `h_T / scale`.
pub fn lissa_inverse_hvp<E: Example>(
    model: &SoftmaxModel,
    train: &[E],
    v: &[f64],
    lambda_reg: f64,
    params: &LissaParams,
) -> Result<InverseHvp> {
    check_direction(model, v)?;
    check_curvature(lambda_reg, params.damping)?;
    if params.batch_size == 0 || !(params.scale > 0.0) || params.max_iters == 0 {
        return Err(Error::contract("LiSSA needs batch_size >= 1, scale > 0 and max_iters >= 1"));
    }
    if train.is_empty() {
        return Err(Error::contract("LiSSA over an empty training set"));
    }
    model.check_all(train)?;

    let fingerprint = model.fingerprint();
    let v_norm = numeric::norm(v);
    if v_norm == 0.0 {
        return Ok(InverseHvp {
            s: vec![0.0; v.len()],
            epoch: 0,
            damping: params.damping,
            converged: true,
            iterations: 1,
            model_fingerprint: fingerprint,
        });
    }

    let n = train.len();
    let full_batch = params.batch_size >= n;
    let shift = lambda_reg + params.damping;
    let inv_scale = 1.0 / params.scale;
    let limit = LISSA_DIVERGENCE_FACTOR * v_norm;
    let mut rng = numeric::substream(params.seed, Stream::Lissa, &[]);

    let mut h = v.to_vec();
    let mut converged = false;
    let mut iterations = 0;
    let mut picks: Vec<usize> = Vec::with_capacity(params.batch_size.min(n));
    while iterations < params.max_iters {
        iterations += 1;
        let hv = if full_batch {
            model::hvp_unchecked(model, train.iter(), n, &h)
        } else {
            picks.clear();
            picks.extend(rand::seq::index::sample(&mut rng, n, params.batch_size).iter());
            picks.sort_unstable();
            model::hvp_unchecked(model, picks.iter().map(|&i| &train[i]), picks.len(), &h)
        };
        let mut change = 0.0;
        let mut h_norm = 0.0;
        for ((hi, &vi), &hvi) in h.iter_mut().zip(v).zip(&hv) {
            let next = vi + *hi - inv_scale * (hvi + shift * *hi);
            change += (next - *hi) * (next - *hi);
            h_norm += next * next;
            *hi = next;
        }
        let h_norm = numeric::sqrt(h_norm);
        if !h_norm.is_finite() || h_norm > limit {
            return Err(Error::LissaDiverged {
                iteration: iterations,
                norm: h_norm,
                limit,
            });
        }
        if numeric::sqrt(change) < params.tol * h_norm {
            converged = true;
            break;
        }
    }
    h.iter_mut().for_each(|x| *x *= inv_scale);
    Ok(InverseHvp {
        s: h,
        epoch: 0,
        damping: params.damping,
        converged,
        iterations,
        model_fingerprint: fingerprint,
    })
}

/// Power-iteration estimate of the spectral norm of `H + shift·I`. Useful for
/// picking a LiSSA `scale`.
pub fn hessian_spectral_norm<E: Example>(
    model: &SoftmaxModel,
    train: &[E],
    shift: f64,
    iters: usize,
) -> Result<f64> {
    let p = model.num_params();
    let mut x: Vec<f64> = (0..p).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nx = numeric::norm(&x);
        x.iter_mut().for_each(|xi| *xi /= nx);
        let hx = regularized_hvp(model, train, &x, shift)?;
        est = numeric::dot(&x, &hx);
        x = hx;
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum InverseHvpMethod {
    Exact { damping: f64, max_params: usize },
    Lissa(LissaParams),
}

impl InverseHvpMethod {
    pub fn damping(&self) -> f64 {
        match self {
            InverseHvpMethod::Exact { damping, .. } => *damping,
            InverseHvpMethod::Lissa(p) => p.damping,
        }
    }

    pub fn solve<E: Example>(
        &self,
        model: &SoftmaxModel,
        train: &[E],
        v: &[f64],
        lambda_reg: f64,
    ) -> Result<InverseHvp> {
        match self {
            InverseHvpMethod::Exact { damping, max_params } => {
                check_direction(model, v)?;
                DenseHessian::build(model, train, lambda_reg, *damping, *max_params)?.solve(v)
            }
            InverseHvpMethod::Lissa(p) => lissa_inverse_hvp(model, train, v, lambda_reg, p),
        }
    }
}

/// `Φ_i = −sᵀ ∇ℓ_i` for every example, as one product with the batch
/// gradient matrix.
pub fn influence_values<E: Example>(s: &InverseHvp, examples: &[E], model: &SoftmaxModel) -> Result<Vec<f64>> {
    let found = model.fingerprint();
    if s.model_fingerprint != found {
        return Err(Error::StaleInverseHvp {
            expected: s.model_fingerprint,
            found,
        });
    }
    check_direction(model, &s.s)?;
    let g = batch_gradients(model, examples)?;
    Ok(g.times(&s.s).into_iter().map(|x| -x).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEntry {
    pub instance_id: u64,
    pub bag_id: u64,
    pub phi: f64,
    pub pi: f64,
}

/// Row-major `|train| × |val|` matrix of `φ_{i,j} = −∇ℓ_jᵀ H⁻¹ ∇ℓ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseInfluence {
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
    pub values: Vec<f64>,
}

impl PairwiseInfluence {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.val_ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.val_ids.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.train_ids.len()).map(|i| self.row(i).iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub entries: Vec<InfluenceEntry>,
    pub pairwise: Option<PairwiseInfluence>,
    pub alpha: f64,
    pub epoch: usize,
}

impl InfluenceReport {
    pub fn sign_convention(&self) -> &'static str {
        SIGN_CONVENTION
    }

    pub fn phis(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.phi).collect()
    }
}

/// Per-instance Φ and sampling probabilities `π = σ(−α Φ)`.
///
/// The constant factor `m` (validation size) is not applied: `Φ` here is the
/// derivative of the *mean* validation loss, and `α` absorbs the scale.
pub fn influence_scores(
    s: &InverseHvp,
    instances: &[Instance],
    model: &SoftmaxModel,
    alpha: f64,
) -> Result<InfluenceReport> {
    if !(alpha > 0.0) {
        return Err(Error::contract("alpha must be positive"));
    }
    let phis = influence_values(s, instances, model)?;
    let entries = instances
        .iter()
        .zip(phis)
        .map(|(inst, phi)| InfluenceEntry {
            instance_id: inst.instance_id,
            bag_id: inst.bag_id,
            phi,
            pi: sigmoid_probability(phi, alpha),
        })
        .collect();
    Ok(InfluenceReport {
        entries,
        pairwise: None,
        alpha,
        epoch: s.epoch,
    })
}

/// Pairwise influences between a training subset and a validation subset.
/// The Hessian is always taken over the full `hessian_set`.
pub fn influence_matrix<E: Example>(
    model: &SoftmaxModel,
    hessian_set: &[E],
    train_subset: &[Instance],
    val_subset: &[Instance],
    method: &InverseHvpMethod,
    lambda_reg: f64,
    cap: usize,
) -> Result<PairwiseInfluence> {
    let requested = train_subset.len() * val_subset.len();
    if requested > cap {
        return Err(Error::CapExceeded {
            what: "pairwise influence matrix",
            requested,
            cap,
            hint: "shrink the train/validation subsets or raise the pair cap",
        });
    }
    let train_g = batch_gradients(model, train_subset)?;
    let val_g = batch_gradients(model, val_subset)?;
    let m = val_subset.len();
    let mut values = vec![0.0; requested];

    let mut fill_column = |j: usize, s: &[f64]| {
        for i in 0..train_subset.len() {
            values[i * m + j] = -numeric::dot(train_g.row(i), s);
        }
    };
    match method {
        InverseHvpMethod::Exact { damping, max_params } => {
            let h = DenseHessian::build(model, hessian_set, lambda_reg, *damping, *max_params)?;
            for j in 0..m {
                fill_column(j, &h.solve(val_g.row(j))?.s);
            }
        }
        InverseHvpMethod::Lissa(p) => {
            for j in 0..m {
                let s = lissa_inverse_hvp(model, hessian_set, val_g.row(j), lambda_reg, p)?;
                fill_column(j, &s.s);
            }
        }
    }
    Ok(PairwiseInfluence {
        train_ids: train_subset.iter().map(|i| i.instance_id).collect(),
        val_ids: val_subset.iter().map(|i| i.instance_id).collect(),
        values,
    })
}

/// Leave-one-out retraining: the true validation-loss change when one
/// training instance is dropped from the objective.
///
/// The perturbed objective keeps the `1/n` normalization,
/// `(1/n) Σ_{i'≠i} ℓ_{i'} + λ‖β‖²/2`, i.e. up-weighting by `ε = −1/n`, so
/// `δ_i ≈ −Φ_i / n` to first order.
pub struct LooOracle<'a, E> {
    train: &'a [E],
    val: &'a [E],
    num_classes: usize,
    config: ErmConfig,
    full: model::ErmFit,
    base_loss: f64,
}

impl<'a, E: Example> LooOracle<'a, E> {
    pub fn new(train: &'a [E], val: &'a [E], num_classes: usize, config: ErmConfig) -> Result<Self> {
        let full = model::train_erm(train, num_classes, &config)?;
        let base_loss = model::mean_loss(&full.model, val)?;
        Ok(LooOracle {
            train,
            val,
            num_classes,
            config,
            full,
            base_loss,
        })
    }

    pub fn full_model(&self) -> &SoftmaxModel {
        &self.full.model
    }

    pub fn base_validation_loss(&self) -> f64 {
        self.base_loss
    }

    /// `L(θ̃_{−i}) − L(θ̂)`.
    pub fn delta(&self, i: usize) -> Result<f64> {
        if i >= self.train.len() {
            return Err(Error::contract(format!("instance {i} out of range")));
        }
        let n = self.train.len() as f64;
        let mut weights = vec![1.0 / n; self.train.len()];
        weights[i] = 0.0;
        let fit = model::train_erm_weighted(self.train, &weights, self.num_classes, &self.config)?;
        Ok(model::mean_loss(&fit.model, self.val)? - self.base_loss)
    }
}

pub fn loo_retrain_oracle<E: Example>(
    train: &[E],
    val: &[E],
    num_classes: usize,
    i: usize,
    config: &ErmConfig,
) -> Result<f64> {
    LooOracle::new(train, val, num_classes, *config)?.delta(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LabeledPoint;

    fn zero_feature_batch() -> Vec<LabeledPoint> {
        vec![LabeledPoint::new(vec![0.0, 0.0], 0), LabeledPoint::new(vec![0.0, 0.0], 1)]
    }

    #[test]
    fn pure_ridge_hessian_scales_identity() {
        let m = SoftmaxModel::zeros(2, 2).unwrap();
        let v = [1.0, -2.0, 0.5, 4.0];
        let s = exact_inverse_hvp(&m, &zero_feature_batch(), &v, 0.3, 0.2).unwrap();
        for (a, b) in s.s.iter().zip(v) {
            assert!((a - b / 0.5).abs() < 1e-12);
        }
        assert!(s.converged && s.iterations == 1);
    }

    #[test]
    fn lissa_on_scaled_identity() {
        let m = SoftmaxModel::zeros(2, 2).unwrap();
        let v = [1.0, -2.0, 0.5, 4.0];
        let p = LissaParams {
            batch_size: 2,
            max_iters: 100_000,
            scale: 2.0,
            damping: 0.2,
            tol: 1e-12,
            seed: 3,
        };
        let s = lissa_inverse_hvp(&m, &zero_feature_batch(), &v, 0.3, &p).unwrap();
        assert!(s.converged);
        for (a, b) in s.s.iter().zip(v) {
            assert!((a - b / 0.5).abs() < 1e-9, "{a} vs {}", b / 0.5);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let m = SoftmaxModel::from_beta(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let train = [LabeledPoint::new(vec![1.0, 2.0], 1)];
        let e = exact_inverse_hvp(&m, &train, &[0.0; 4], 0.01, 0.0).unwrap();
        assert!(e.s.iter().all(|&x| x == 0.0));
        let l = lissa_inverse_hvp(&m, &train, &[0.0; 4], 0.01, &LissaParams::default()).unwrap();
        assert!(l.s.iter().all(|&x| x == 0.0));
        assert!(l.converged && l.iterations >= 1);
    }

    #[test]
    fn singular_and_contract_errors() {
        let m = SoftmaxModel::zeros(2, 2).unwrap();
        let v = [1.0; 4];
        assert!(matches!(
            exact_inverse_hvp(&m, &zero_feature_batch(), &v, 0.0, 0.0),
            Err(Error::Contract(_))
        ));
        let flat = [LabeledPoint::new(vec![1e3, 0.0], 0)];
        assert!(matches!(
            exact_inverse_hvp(&m, &flat, &v, 0.0, 1e-12),
            Err(Error::Singular { .. })
        ));
        let big = SoftmaxModel::zeros(30, 2).unwrap();
        let train = [LabeledPoint::new(vec![0.0; 30], 0)];
        assert!(matches!(
            DenseHessian::build(&big, &train, 0.1, 0.0, 50),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn lissa_detects_divergence() {
        let m = SoftmaxModel::zeros(2, 2).unwrap();
        let p = LissaParams {
            scale: 0.1,
            batch_size: 2,
            ..LissaParams::default()
        };
        let err = lissa_inverse_hvp(&m, &zero_feature_batch(), &[1.0; 4], 1.0, &p).unwrap_err();
        assert!(matches!(err, Error::LissaDiverged { .. }), "{err}");
    }

    #[test]
    fn stale_inverse_hvp_is_rejected() {
        let m = SoftmaxModel::from_beta(1, 2, vec![0.1, 0.2]).unwrap();
        let train = [LabeledPoint::new(vec![1.0], 0)];
        let s = exact_inverse_hvp(&m, &train, &[1.0, 1.0], 0.1, 0.0).unwrap();
        let moved = SoftmaxModel::from_beta(1, 2, vec![0.1, 0.3]).unwrap();
        assert!(matches!(
            influence_values(&s, &train, &moved),
            Err(Error::StaleInverseHvp { .. })
        ));
    }

    #[test]
    fn zero_s_gives_neutral_scores() {
        let m = SoftmaxModel::from_beta(1, 2, vec![0.1, 0.2]).unwrap();
        let s = InverseHvp {
            s: vec![0.0, 0.0],
            epoch: 0,
            damping: 0.0,
            converged: true,
            iterations: 1,
            model_fingerprint: m.fingerprint(),
        };
        let inst = [Instance {
            instance_id: 4,
            bag_id: 1,
            features: vec![2.0],
            observed_label: 1,
            gold_label: None,
            split: crate::data::Split::Train,
        }];
        let r = influence_scores(&s, &inst, &m, 1.0).unwrap();
        assert_eq!(r.entries[0].phi, 0.0);
        assert_eq!(r.entries[0].pi, 0.5);
        assert_eq!(r.sign_convention(), "negative-is-beneficial");
    }

    #[test]
    fn pairwise_cap_is_enforced() {
        let m = SoftmaxModel::zeros(1, 2).unwrap();
        let inst: Vec<Instance> = (0..5)
            .map(|i| Instance {
                instance_id: i,
                bag_id: 0,
                features: vec![1.0],
                observed_label: 0,
                gold_label: None,
                split: crate::data::Split::Train,
            })
            .collect();
        let method = InverseHvpMethod::Exact { damping: 0.0, max_params: 100 };
        let err = influence_matrix(&m, &inst, &inst, &inst, &method, 0.1, 24).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { requested: 25, cap: 24, .. }));
    }
}
