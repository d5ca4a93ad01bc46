//! Synthetic distant-supervision data with a controllable noise rate.
//!
//! Each relation (NA included) has a Gaussian prototype. Positive bags hold
//! a mix of instances drawn from their relation's prototype and mislabeled
//! instances drawn from other prototypes, while always keeping at least one
//! correctly labeled member.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetRecord, Split, NA_CLASS};
use crate::error::{Error, Result};
use crate::numeric::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BagSizeShape {
    Uniform,
    /// Truncated geometric on `[min, max]`: `P(min + j) ∝ (1 − p)^j`.
    Geometric { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagSizeSpec {
    pub min: usize,
    pub max: usize,
    pub shape: BagSizeShape,
}

impl BagSizeSpec {
    fn sample(&self, rng: &mut Rng) -> usize {
        match self.shape {
            BagSizeShape::Uniform => rng.random_range(self.min..=self.max),
            BagSizeShape::Geometric { p } => {
                let span = self.max - self.min;
                let q = 1.0 - p;
                let weights: Vec<f64> = (0..=span).map(|j| libm::pow(q, j as f64)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        return self.min + j;
                    }
                    u -= w;
                }
                self.max
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// K, including the NA class 0.
    pub num_relations: usize,
    pub feature_dim: usize,
    /// Bags in the train split.
    pub num_bags: usize,
    pub num_test_bags: usize,
    /// Fraction of bags labeled NA.
    pub na_fraction: f64,
    /// Relative frequencies of the positive relations `1..K`; uniform if absent.
    pub relation_weights: Option<Vec<f64>>,
    /// Fraction of positive-bag instances whose gold label differs from the
    /// bag label.
    pub noise_rate: f64,
    /// Share of mislabeled instances drawn from the NA prototype; the rest
    /// come from other positive relations.
    pub noise_to_na: f64,
    pub bag_size: BagSizeSpec,
    /// Distance of every prototype from the origin.
    pub class_separation: f64,
    /// Standard deviation of the isotropic Gaussian around each prototype.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            num_relations: 5,
            feature_dim: 4,
            num_bags: 400,
            num_test_bags: 400,
            na_fraction: 0.5,
            relation_weights: None,
            noise_rate: 0.4,
            noise_to_na: 1.0,
            bag_size: BagSizeSpec {
                min: 2,
                max: 10,
                shape: BagSizeShape::Uniform,
            },
            class_separation: 3.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InfeasibleSpec(msg));
        if self.num_relations < 2 {
            return bad("need at least 2 relations (class 0 is NA)".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.num_bags == 0 {
            return bad("num_bags must be positive".into());
        }
        for (name, v) in [
            ("noise_rate", self.noise_rate),
            ("na_fraction", self.na_fraction),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_to_na) {
            return bad(format!("noise_to_na = {} is outside [0, 1]", self.noise_to_na));
        }
        let BagSizeSpec { min, max, shape } = self.bag_size;
        if min == 0 || min > max {
            return bad(format!("bag sizes need 1 <= min <= max, got [{min}, {max}]"));
        }
        if let BagSizeShape::Geometric { p } = shape {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("geometric bag-size p = {p} is outside (0, 1)"));
            }
        }
        if self.noise_rate > 0.0 && self.noise_rate >= 1.0 - 1.0 / min as f64 {
            return bad(format!(
                "noise_rate {} leaves no clean instance in bags of size {min}",
                self.noise_rate
            ));
        }
        if let Some(w) = &self.relation_weights {
            if w.len() != self.num_relations - 1 {
                return bad(format!(
                    "relation_weights has {} entries, expected {}",
                    w.len(),
                    self.num_relations - 1
                ));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad("relation_weights must be nonnegative with a positive sum".into());
            }
        }
        if !(self.class_separation > 0.0) || !(self.feature_noise >= 0.0) {
            return bad("class_separation must be positive and feature_noise nonnegative".into());
        }
        Ok(())
    }

    /// Number of bags per relation for `total` bags: NA gets
    /// `round(na_fraction · total)`, the rest is split by largest remainder.
    pub fn bag_counts(&self, total: usize) -> Vec<usize> {
        let k = self.num_relations;
        let na = (libm::round(self.na_fraction * total as f64) as usize).min(total);
        let positive = total - na;
        let weights = self
            .relation_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; k - 1]);
        let sum: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / sum * positive as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
        let mut left = positive - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..k - 1).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - counts[a] as f64;
            let rb = quotas[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &r in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[r] += 1;
            left -= 1;
        }
        let mut out = vec![na];
        out.extend(counts);
        out
    }
}

/// Unit-norm prototypes. For `d ≥ K − 1` they are the vertices of a regular
/// simplex embedded in the first `K − 1` coordinates; otherwise random
/// directions.
fn prototypes(spec: &NoiseSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    let k = spec.num_relations;
    let d = spec.feature_dim;
    if d + 1 >= k {
        // Centered basis vectors e_c − 1/K span a (K−1)-dim subspace;
        // Gram–Schmidt gives coordinates in it.
        let centered: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                (0..k)
                    .map(|j| if j == c { 1.0 } else { 0.0 } - 1.0 / k as f64)
                    .collect()
            })
            .collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in &centered {
            let mut w = v.clone();
            for b in &basis {
                let c = numeric::dot(&w, b);
                numeric::axpy(-c, b, &mut w);
            }
            let n = numeric::norm(&w);
            if n > 1e-9 && basis.len() < k - 1 {
                w.iter_mut().for_each(|x| *x /= n);
                basis.push(w);
            }
        }
        centered
            .iter()
            .map(|v| {
                let mut p = vec![0.0; d];
                for (slot, b) in p.iter_mut().zip(&basis) {
                    *slot = numeric::dot(v, b);
                }
                let n = numeric::norm(&p);
                p.iter_mut().for_each(|x| *x /= n);
                p
            })
            .collect()
    } else {
        (0..k)
            .map(|_| {
                let mut p: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = numeric::norm(&p).max(1e-12);
                p.iter_mut().for_each(|x| *x /= n);
                p
            })
            .collect()
    }
}

/// Generates train and test bags with gold labels. Fully determined by
/// `spec.seed`.
pub fn generate_synthetic_ds(spec: &NoiseSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.num_relations;
    let mut proto_rng = numeric::substream(spec.seed, Stream::Generation, &[0]);
    let protos = prototypes(spec, &mut proto_rng);

    let mut records = Vec::new();
    let mut next_instance = 0u64;
    let mut next_bag = 0u64;
    // Error diffusion keeps the realized noise rate within rounding of the target.
    let mut noise_carry = 0.0;

    for (split, total) in [(Split::Train, spec.num_bags), (Split::Test, spec.num_test_bags)] {
        let mut labels: Vec<usize> = spec
            .bag_counts(total)
            .iter()
            .enumerate()
            .flat_map(|(rel, &c)| core::iter::repeat_n(rel, c))
            .collect();
        let mut label_rng = numeric::substream(spec.seed, Stream::Generation, &[1, split as u64]);
        labels.shuffle(&mut label_rng);

        for relation in labels {
            let bag_id = next_bag;
            next_bag += 1;
            let mut rng = numeric::substream(spec.seed, Stream::Generation, &[2, bag_id]);
            let size = spec.bag_size.sample(&mut rng);
            let noisy = if relation == NA_CLASS {
                0
            } else {
                let target = spec.noise_rate * size as f64 + noise_carry;
                let n = (libm::round(target) as usize).min(size - 1);
                noise_carry = target - n as f64;
                n
            };
            let mut is_noisy = vec![false; size];
            is_noisy[..noisy].iter_mut().for_each(|x| *x = true);
            is_noisy.shuffle(&mut rng);

            for noisy in is_noisy {
                let gold = if !noisy {
                    relation
                } else {
                    let others: Vec<usize> = (1..k).filter(|&r| r != relation).collect();
                    if others.is_empty() || rng.random::<f64>() < spec.noise_to_na {
                        NA_CLASS
                    } else {
                        others[rng.random_range(0..others.len())]
                    }
                };
                let features = protos[gold]
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        spec.class_separation * m + spec.feature_noise * z
                    })
                    .collect();
                records.push(DatasetRecord {
                    instance_id: next_instance,
                    bag_id,
                    entity_pair_id: format!("pair-{bag_id:06}"),
                    relation,
                    features,
                    gold_relation: Some(gold),
                    split,
                });
                next_instance += 1;
            }
        }
    }
    Dataset::from_records(records, Some(k))
}
