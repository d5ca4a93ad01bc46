//! Turning influence scores into keep/drop decisions.
//!
//! Each instance gets a keep probability `π = 1 / (1 + exp(αΦ))`. Inside a
//! bag, exactly `max(min_keep, ⌈r·|bag|⌉)` instances are drawn without
//! replacement with weights `π`, so the per-bag count is fixed while lower-Φ
//! instances stay more likely to survive. Weighted draws use
//! Efraimidis–Spirakis keys `u^{1/π}`, which give the same distribution as
//! successive draws with renormalization.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, Rng, Stream};

/// Bound on `|αΦ|` inside the exponential.
pub const EXP_CLAMP: f64 = 500.0;

/// `π(Φ) = 1 / (1 + exp(αΦ))`. Saturates to exactly 1.0 in floating point
/// once `αΦ < −37`.
pub fn sigmoid_probability(phi: f64, alpha: f64) -> f64 {
    let z = (alpha * phi).clamp(-EXP_CLAMP, EXP_CLAMP);
    1.0 / (1.0 + numeric::exp(z))
}

/// `π'(Φ) = −α π (1 − π)`; its magnitude peaks at `α/4` when `Φ = 0`.
pub fn sigmoid_derivative(phi: f64, alpha: f64) -> f64 {
    let p = sigmoid_probability(phi, alpha);
    -alpha * p * (1.0 - p)
}

/// Independent keep with probability `pi`.
pub fn bernoulli_keep(pi: f64, rng: &mut Rng) -> bool {
    rng.random::<f64>() < pi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    ProbabilisticBib,
    DeterministicBib,
    ProbabilisticPosthoc,
}

impl SamplingMode {
    pub fn is_deterministic(self) -> bool {
        self == SamplingMode::DeterministicBib
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub alpha: f64,
    pub ratio: f64,
    pub mode: SamplingMode,
    pub seed: u64,
    pub min_keep_per_bag: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            alpha: 1.0,
            ratio: 0.10,
            mode: SamplingMode::ProbabilisticBib,
            seed: 0,
            min_keep_per_bag: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::contract("alpha must be positive and finite"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::contract("ratio must lie in (0, 1]"));
        }
        if self.min_keep_per_bag == 0 {
            return Err(Error::contract("min_keep_per_bag must be at least 1"));
        }
        Ok(())
    }

    /// Instances kept from a bag of `size`.
    pub fn bag_quota(&self, size: usize) -> usize {
        numeric::ceil_fraction(self.ratio, size)
            .max(self.min_keep_per_bag)
            .min(size)
    }
}

/// A bag's members with their current influence scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBag {
    pub bag_id: u64,
    pub instance_ids: Vec<u64>,
    pub phis: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredInstance {
    pub instance_id: u64,
    pub bag_id: u64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionResult {
    /// Kept instance ids, ascending.
    pub kept: Vec<u64>,
    /// bag_id → (kept, total).
    pub per_bag_counts: BTreeMap<u64, (usize, usize)>,
    /// instance_id → π for every scored instance.
    pub probabilities_used: BTreeMap<u64, f64>,
    /// Kept positions in the flattened input (bags concatenated in input
    /// order), ascending.
    pub positions: Vec<usize>,
}

fn by_phi_then_id<'a>(phis: &'a [f64], ids: &'a [u64]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| phis[a].total_cmp(&phis[b]).then(ids[a].cmp(&ids[b]))
}

/// Positions of `k` members drawn without replacement with weights `weights`.
/// Returned ascending.
pub fn weighted_sample_without_replacement(weights: &[f64], k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = weights.len();
    let k = k.min(n);
    if k == n {
        return (0..n).collect();
    }
    // Log-keys ln(u)/w order identically to u^{1/w} without underflow.
    let keys: Vec<f64> = weights
        .iter()
        .map(|&w| {
            let u: f64 = 1.0 - rng.random::<f64>();
            if w > 0.0 {
                numeric::ln(u) / w
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// Positions of the `k` smallest Φ, ties broken by instance id. Returned
/// ascending.
pub fn lowest_phi(phis: &[f64], ids: &[u64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phis.len()).collect();
    order.sort_by(by_phi_then_id(phis, ids));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

fn check_scores(ids: &[u64], phis: &[f64]) -> Result<()> {
    if ids.len() != phis.len() {
        return Err(Error::DimensionMismatch {
            what: "influence scores",
            expected: ids.len(),
            found: phis.len(),
        });
    }
    if phis.iter().any(|p| p.is_nan()) {
        return Err(Error::contract("influence score is NaN"));
    }
    Ok(())
}

/// Selects inside one bag; positions are relative to the bag.
pub fn sample_bag(bag: &ScoredBag, config: &SamplerConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    check_scores(&bag.instance_ids, &bag.phis)?;
    if bag.phis.is_empty() {
        return Err(Error::contract(alloc::format!("bag {} has no instances", bag.bag_id)));
    }
    let k = config.bag_quota(bag.phis.len());
    Ok(match config.mode {
        SamplingMode::DeterministicBib => lowest_phi(&bag.phis, &bag.instance_ids, k),
        SamplingMode::ProbabilisticBib | SamplingMode::ProbabilisticPosthoc => {
            let w: Vec<f64> = bag.phis.iter().map(|&p| sigmoid_probability(p, config.alpha)).collect();
            weighted_sample_without_replacement(&w, k, rng)
        }
    })
}

/// Per-bag random stream for sampling `bag_id` in `round`.
pub fn bag_stream(seed: u64, round: u64, bag_id: u64) -> Rng {
    numeric::substream(seed, Stream::Sampling, &[0, round, bag_id])
}

/// Batch-in-bag selection: every bag is subsampled independently with its
/// own substream, so the result does not depend on bag processing order.
/// The mode is read from `config`; post-hoc mode is treated like
/// probabilistic BiB here.
pub fn batch_in_bag_sample(bags: &[ScoredBag], config: &SamplerConfig, round: u64) -> Result<SelectionResult> {
    config.validate()?;
    let mut out = SelectionResult::default();
    let mut offset = 0;
    for bag in bags {
        let mut rng = bag_stream(config.seed, round, bag.bag_id);
        let picked = sample_bag(bag, config, &mut rng)?;
        for (&id, &phi) in bag.instance_ids.iter().zip(&bag.phis) {
            out.probabilities_used.insert(id, sigmoid_probability(phi, config.alpha));
        }
        let entry = out.per_bag_counts.entry(bag.bag_id).or_insert((0, 0));
        entry.0 += picked.len();
        entry.1 += bag.phis.len();
        out.kept.extend(picked.iter().map(|&p| bag.instance_ids[p]));
        out.positions.extend(picked.iter().map(|&p| offset + p));
        offset += bag.phis.len();
    }
    out.kept.sort_unstable();
    Ok(out)
}

/// One-shot selection of `⌈r·n⌉` instances from the pooled set, ignoring
/// bag boundaries. Deterministic mode keeps the lowest Φ.
pub fn post_hoc_sample(instances: &[ScoredInstance], config: &SamplerConfig, round: u64) -> Result<SelectionResult> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ids: Vec<u64> = instances.iter().map(|i| i.instance_id).collect();
    let phis: Vec<f64> = instances.iter().map(|i| i.phi).collect();
    check_scores(&ids, &phis)?;
    let k = numeric::ceil_fraction(config.ratio, instances.len()).max(1);
    let positions = if config.mode.is_deterministic() {
        lowest_phi(&phis, &ids, k)
    } else {
        let w: Vec<f64> = phis.iter().map(|&p| sigmoid_probability(p, config.alpha)).collect();
        let mut rng = numeric::substream(config.seed, Stream::Sampling, &[1, round]);
        weighted_sample_without_replacement(&w, k, &mut rng)
    };
    Ok(finish_pooled(instances, config.alpha, positions))
}

/// Keeps every instance with `Φ ≤ threshold`; the classic hard-threshold
/// rule uses `threshold = 0` (drop everything judged harmful).
pub fn threshold_select(instances: &[ScoredInstance], threshold: f64, alpha: f64) -> SelectionResult {
    let positions = (0..instances.len()).filter(|&i| instances[i].phi <= threshold).collect();
    finish_pooled(instances, alpha, positions)
}

fn finish_pooled(instances: &[ScoredInstance], alpha: f64, positions: Vec<usize>) -> SelectionResult {
    let mut out = SelectionResult::default();
    for inst in instances {
        out.probabilities_used.insert(inst.instance_id, sigmoid_probability(inst.phi, alpha));
        out.per_bag_counts.entry(inst.bag_id).or_insert((0, 0)).1 += 1;
    }
    for &p in &positions {
        out.per_bag_counts.get_mut(&instances[p].bag_id).unwrap().0 += 1;
        out.kept.push(instances[p].instance_id);
    }
    out.kept.sort_unstable();
    out.positions = positions;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Sigmoid,
    /// Hard threshold: keep iff `Φ ≤ 0`.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBound {
    pub exact: f64,
    /// First-order version; only defined for the sigmoid.
    pub taylor: Option<f64>,
}

/// Upper bound (up to a constant) on the validation-loss error caused by
/// sampling with estimated scores `phi_hat` instead of `phi_true`:
///
/// ```text
/// exact  = Σ_i (π(Φ̂_i) − π(Φ_i))² Σ_j φ_{i,j}²
/// taylor = Σ_i ((Φ̂_i − Φ_i) π'(Φ_i))² Σ_j φ_{i,j}²
/// ```
///
/// `pairwise` is row-major `n × m`.
pub fn robustness_bound(
    phi_true: &[f64],
    phi_hat: &[f64],
    pairwise: &[f64],
    m: usize,
    alpha: f64,
    mode: BoundMode,
) -> Result<RobustnessBound> {
    let n = phi_true.len();
    if phi_hat.len() != n {
        return Err(Error::DimensionMismatch {
            what: "estimated influence scores",
            expected: n,
            found: phi_hat.len(),
        });
    }
    if pairwise.len() != n * m {
        return Err(Error::DimensionMismatch {
            what: "pairwise influence matrix",
            expected: n * m,
            found: pairwise.len(),
        });
    }
    let row_sq = |i: usize| -> f64 { pairwise[i * m..(i + 1) * m].iter().map(|x| x * x).sum() };
    let mut exact = 0.0;
    let mut taylor = 0.0;
    for i in 0..n {
        let w = row_sq(i);
        let (a, b) = match mode {
            BoundMode::Sigmoid => (
                sigmoid_probability(phi_hat[i], alpha),
                sigmoid_probability(phi_true[i], alpha),
            ),
            BoundMode::Deterministic => (indicator(phi_hat[i]), indicator(phi_true[i])),
        };
        exact += (a - b) * (a - b) * w;
        let t = (phi_hat[i] - phi_true[i]) * sigmoid_derivative(phi_true[i], alpha);
        taylor += t * t * w;
    }
    Ok(RobustnessBound {
        exact,
        taylor: (mode == BoundMode::Sigmoid).then_some(taylor),
    })
}

fn indicator(phi: f64) -> f64 {
    if phi <= 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_probability(0.0, 3.0), 0.5);
        assert!((sigmoid_probability(3f64.ln(), 1.0) - 0.25).abs() < 1e-15);
        assert!((sigmoid_probability(-(9f64.ln()), 1.0) - 0.9).abs() < 1e-15);
        assert!(sigmoid_probability(1e308, 1.0) > 0.0);
        assert_eq!(sigmoid_derivative(0.0, 1.0), -0.25);
        assert!((sigmoid_derivative(3f64.ln(), 2.0) + 0.18).abs() < 1e-15);
        assert!((sigmoid_derivative(3f64.ln() / 2.0, 2.0) + 0.375).abs() < 1e-15);
        assert!(sigmoid_derivative(1e9, 1.0).abs() < 1e-200);
        assert_eq!(sigmoid_derivative(-1e9, 1.0), 0.0);
    }

    #[test]
    fn quota_uses_ceiling_and_floor() {
        let c = SamplerConfig::default();
        assert_eq!(c.bag_quota(10), 1);
        assert_eq!(c.bag_quota(11), 2);
        assert_eq!(c.bag_quota(1), 1);
        let c = SamplerConfig { ratio: 0.3, ..c };
        assert_eq!(c.bag_quota(10), 3);
    }

    #[test]
    fn singleton_bag_always_kept() {
        for mode in [SamplingMode::ProbabilisticBib, SamplingMode::DeterministicBib] {
            let c = SamplerConfig { mode, ..SamplerConfig::default() };
            let bag = ScoredBag { bag_id: 7, instance_ids: vec![42], phis: vec![1e6] };
            let r = batch_in_bag_sample(&[bag], &c, 0).unwrap();
            assert_eq!(r.kept, vec![42]);
            assert_eq!(r.per_bag_counts[&7], (1, 1));
        }
    }

    #[test]
    fn deterministic_ties_break_on_id() {
        let c = SamplerConfig { mode: SamplingMode::DeterministicBib, ratio: 0.5, ..SamplerConfig::default() };
        let bag = ScoredBag { bag_id: 0, instance_ids: vec![9, 3, 5, 1], phis: vec![0.0, 0.0, -1.0, 0.0] };
        let r = batch_in_bag_sample(&[bag], &c, 0).unwrap();
        assert_eq!(r.kept, vec![1, 5]);
        assert_eq!(r.positions, vec![2, 3]);
    }

    #[test]
    fn empty_bag_is_rejected() {
        let bag = ScoredBag { bag_id: 0, instance_ids: vec![], phis: vec![] };
        assert!(batch_in_bag_sample(&[bag], &SamplerConfig::default(), 0).is_err());
    }

    #[test]
    fn dominant_weight_always_drawn() {
        let mut phis = vec![600.0; 20];
        phis[13] = -600.0;
        let instances: Vec<ScoredInstance> = phis
            .iter()
            .enumerate()
            .map(|(i, &phi)| ScoredInstance { instance_id: i as u64, bag_id: 0, phi })
            .collect();
        for seed in 0..50 {
            let c = SamplerConfig { seed, mode: SamplingMode::ProbabilisticPosthoc, ..SamplerConfig::default() };
            let r = post_hoc_sample(&instances, &c, 0).unwrap();
            assert_eq!(r.kept.len(), 2);
            assert!(r.kept.contains(&13));
        }
    }

    #[test]
    fn full_ratio_keeps_everything() {
        let instances: Vec<ScoredInstance> = (0..9)
            .map(|i| ScoredInstance { instance_id: i, bag_id: i % 3, phi: 0.0 })
            .collect();
        let c = SamplerConfig { ratio: 1.0, ..SamplerConfig::default() };
        assert_eq!(post_hoc_sample(&instances, &c, 0).unwrap().kept.len(), 9);
    }

    #[test]
    fn threshold_keeps_non_positive() {
        let instances: Vec<ScoredInstance> = [-1.0, 0.0, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &phi)| ScoredInstance { instance_id: i as u64, bag_id: 0, phi })
            .collect();
        assert_eq!(threshold_select(&instances, 0.0, 1.0).kept, vec![0, 1]);
    }

    #[test]
    fn bound_cases() {
        let eps = 1e-3;
        let row = [2.0, 1.0];
        let det = robustness_bound(&[eps], &[-eps], &row, 2, 1.0, BoundMode::Deterministic).unwrap();
        assert_eq!(det.exact, 5.0);
        assert!(det.taylor.is_none());
        let sig = robustness_bound(&[eps], &[-eps], &row, 2, 1.0, BoundMode::Sigmoid).unwrap();
        let expected = (2.0 * eps * 0.25) * (2.0 * eps * 0.25) * 5.0;
        assert!((sig.exact - expected).abs() / expected < 1e-5);
        let same = robustness_bound(&[0.3], &[0.3], &row, 2, 1.0, BoundMode::Sigmoid).unwrap();
        assert_eq!(same.exact, 0.0);
        assert_eq!(same.taylor, Some(0.0));
        assert!(robustness_bound(&[0.0], &[0.0, 1.0], &row, 2, 1.0, BoundMode::Sigmoid).is_err());
    }
}
