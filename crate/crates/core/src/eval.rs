//! Held-out bag-level evaluation and noise-detection diagnostics.
//!
//! A bag's score for each relation is the maximum instance probability for
//! that relation. Each bag then contributes one prediction, its best non-NA
//! relation, and predictions are ranked by that score (ties by bag id).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NA_CLASS};
use crate::error::{Error, Result};
use crate::influence::InfluenceReport;
use crate::model::SoftmaxModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag_id: u64,
    /// Max-over-instances probability per relation, NA included.
    pub scores: Vec<f64>,
    /// Best non-NA relation.
    pub top_relation: usize,
    pub top_score: f64,
}

/// Aggregates the instance probabilities of one bag.
pub fn predict_bag(model: &SoftmaxModel, bag_id: u64, instances: &[&[f64]]) -> Result<BagPrediction> {
    if instances.is_empty() {
        return Err(Error::contract(format!("bag {bag_id} has no instances")));
    }
    let k = model.num_classes();
    let mut scores = vec![f64::NEG_INFINITY; k];
    let mut p = vec![0.0; k];
    for x in instances {
        model.check_features(x)?;
        model.proba_into(x, &mut p);
        for (s, &pk) in scores.iter_mut().zip(&p) {
            *s = s.max(pk);
        }
    }
    let (top_relation, top_score) = scores
        .iter()
        .enumerate()
        .filter(|&(r, _)| r != NA_CLASS)
        .fold((NA_CLASS + 1, f64::NEG_INFINITY), |best, (r, &s)| {
            if s > best.1 {
                (r, s)
            } else {
                best
            }
        });
    Ok(BagPrediction {
        bag_id,
        scores,
        top_relation,
        top_score,
    })
}

/// One prediction per bag, in dataset bag order.
pub fn bag_level_predict(model: &SoftmaxModel, dataset: &Dataset) -> Result<Vec<BagPrediction>> {
    (0..dataset.bags().len())
        .map(|b| {
            let xs: Vec<&[f64]> = dataset.bag_instances(b).map(|i| i.features.as_slice()).collect();
            predict_bag(model, dataset.bags()[b].bag_id, &xs)
        })
        .collect()
}

/// bag_id → relation label.
pub fn gold_bag_relations(dataset: &Dataset) -> BTreeMap<u64, usize> {
    dataset.bags().iter().map(|b| (b.bag_id, b.relation_label)).collect()
}

fn ranked(predictions: &[BagPrediction]) -> Vec<&BagPrediction> {
    let mut r: Vec<&BagPrediction> = predictions.iter().collect();
    r.sort_by(|a, b| b.top_score.total_cmp(&a.top_score).then(a.bag_id.cmp(&b.bag_id)));
    r
}

fn is_hit(p: &BagPrediction, gold: &BTreeMap<u64, usize>) -> bool {
    gold.get(&p.bag_id) == Some(&p.top_relation)
}

/// Share of correct predictions among the `n` highest-scoring ones.
pub fn precision_at_n(predictions: &[BagPrediction], gold: &BTreeMap<u64, usize>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("P@N needs n >= 1"));
    }
    if predictions.len() < n {
        return Err(Error::NotEnoughPredictions {
            needed: n,
            available: predictions.len(),
        });
    }
    let hits = ranked(predictions).into_iter().take(n).filter(|p| is_hit(p, gold)).count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, from the highest threshold down.
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Precision/recall at every distinct score threshold. Recall is over the
/// bags whose gold relation is not NA; the area is the trapezoid rule over
/// recall, starting at recall 0 with the first point's precision.
pub fn pr_curve(predictions: &[BagPrediction], gold: &BTreeMap<u64, usize>) -> Result<PrCurve> {
    let positives = gold.values().filter(|&&r| r != NA_CLASS).count();
    if positives == 0 {
        return Err(Error::NoPositiveBags);
    }
    let order = ranked(predictions);
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = order[i].top_score;
        while i < order.len() && order[i].top_score == threshold {
            seen += 1;
            if is_hit(order[i], gold) {
                tp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    let auc = pr_auc(&points);
    Ok(PrCurve { points, auc })
}

/// Trapezoid area under `points` (ordered by increasing recall), starting
/// at recall 0 with the first point's precision.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut auc = 0.0;
    for pt in points {
        auc += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    auc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// Probability that a random noisy instance has a larger Φ than a random
    /// clean one, ties counting one half.
    pub auroc: f64,
    /// `(k, clean share among the k lowest-Φ instances)`.
    pub clean_fraction_curve: Vec<(usize, f64)>,
    pub noisy: usize,
    pub clean: usize,
}

/// How well Φ separates mislabeled instances (gold ≠ observed) from clean
/// ones. Entries whose instance is not in `dataset` are ignored.
pub fn noise_detection_report(report: &InfluenceReport, dataset: &Dataset) -> Result<NoiseReport> {
    let noisy_by_id: BTreeMap<u64, Option<bool>> = dataset
        .instances()
        .iter()
        .map(|i| (i.instance_id, i.is_noisy()))
        .collect();
    let mut scored: Vec<(f64, u64, bool)> = Vec::with_capacity(report.entries.len());
    for e in &report.entries {
        match noisy_by_id.get(&e.instance_id) {
            Some(Some(noisy)) => scored.push((e.phi, e.instance_id, *noisy)),
            Some(None) => {
                return Err(Error::GoldUnavailable(format!(
                    "instance {} has no gold label",
                    e.instance_id
                )))
            }
            None => {}
        }
    }
    let noisy = scored.iter().filter(|s| s.2).count();
    let clean = scored.len() - noisy;
    if noisy == 0 || clean == 0 {
        return Err(Error::GoldUnavailable(format!(
            "need both noisy and clean instances (noisy {noisy}, clean {clean})"
        )));
    }
    Ok(NoiseReport {
        auroc: auroc(&scored),
        clean_fraction_curve: clean_fraction_curve(&mut scored),
        noisy,
        clean,
    })
}

/// Mann–Whitney estimate over `(score, _, is_positive)` triples.
fn auroc(scored: &[(f64, u64, bool)]) -> f64 {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // Rank sum of positives with midranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&o| scored[o].2).count() as f64;
        i = j;
    }
    let pos = scored.iter().filter(|s| s.2).count() as f64;
    let neg = scored.len() as f64 - pos;
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

fn clean_fraction_curve(scored: &mut [(f64, u64, bool)]) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = scored.len();
    let step = (n / 100).max(1);
    let mut out = Vec::new();
    let mut clean = 0usize;
    for (k, s) in scored.iter().enumerate() {
        if !s.2 {
            clean += 1;
        }
        let k = k + 1;
        if k % step == 0 || k == n {
            out.push((k, clean as f64 / k as f64));
        }
    }
    out
}
