//! Heuristic construction of a cleaner-than-average validation set from
//! noisy training data.
//!
//! An instance's *pattern* is its quantized feature signature: every feature
//! is bucketed into `bins` quantile bins over the training set. Each
//! relation is seeded with its most frequent patterns; a bootstrap loop then
//! adds, per relation, at most `max_new_patterns` patterns that co-occur most
//! often in bags already covered. Selection stops once `target_fraction` of
//! the training instances is reached.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationParams {
    pub target_fraction: f64,
    pub bins: usize,
    /// Fraction of each relation's distinct patterns used as seeds.
    pub seed_fraction: f64,
    /// Patterns added per relation per bootstrap loop.
    pub max_new_patterns: usize,
}

impl Default for ValidationParams {
    fn default() -> Self {
        ValidationParams {
            target_fraction: 0.10,
            bins: 3,
            seed_fraction: 0.10,
            max_new_patterns: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit {
    /// Selected instance ids, ascending.
    pub validation: Vec<u64>,
    /// Remaining training instance ids, in dataset order.
    pub train: Vec<u64>,
    /// Bootstrap loops run after seeding.
    pub loops: usize,
    /// The pattern space ran out before reaching the target.
    pub exhausted: bool,
}

impl ValidationSplit {
    /// Copy of `dataset` with the selected instances moved to the validation split.
    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        dataset.with_split(&self.validation, Split::Validation)
    }
}

type Pattern = Vec<u8>;

fn quantile_edges(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    (1..bins)
        .map(|j| values[((j * n) / bins).min(n - 1)])
        .collect()
}

struct Selector {
    target: usize,
    chosen: BTreeSet<(usize, Pattern)>,
    selected: Vec<usize>,
    is_selected: Vec<bool>,
}

impl Selector {
    fn full(&self) -> bool {
        self.selected.len() >= self.target
    }

    /// Adds the instances of `(relation, pattern)` in dataset order, stopping
    /// at the target.
    fn add(&mut self, relation: usize, pattern: &Pattern, members: &[usize]) {
        self.chosen.insert((relation, pattern.clone()));
        for &i in members {
            if self.full() {
                return;
            }
            if !self.is_selected[i] {
                self.is_selected[i] = true;
                self.selected.push(i);
            }
        }
    }
}

pub fn build_validation_set(train: &Dataset, params: &ValidationParams) -> Result<ValidationSplit> {
    if !(params.target_fraction > 0.0 && params.target_fraction <= 0.5) {
        return Err(Error::contract("target_fraction must lie in (0, 0.5]"));
    }
    if params.bins == 0 || params.bins > 255 {
        return Err(Error::contract("bins must lie in [1, 255]"));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.len();
    let instances = train.instances();

    let edges: Vec<Vec<f64>> = (0..train.dim())
        .map(|a| {
            let mut col: Vec<f64> = instances.iter().map(|i| i.features[a]).collect();
            quantile_edges(&mut col, params.bins)
        })
        .collect();
    let patterns: Vec<Pattern> = instances
        .iter()
        .map(|inst| {
            inst.features
                .iter()
                .zip(&edges)
                .map(|(x, e)| e.partition_point(|edge| edge <= x) as u8)
                .collect()
        })
        .collect();

    // relation -> pattern -> member positions (ascending)
    let mut by_relation: BTreeMap<usize, BTreeMap<Pattern, Vec<usize>>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_relation
            .entry(inst.observed_label)
            .or_default()
            .entry(patterns[i].clone())
            .or_default()
            .push(i);
    }
    let relations: Vec<usize> = by_relation.keys().copied().collect();

    let ranked = |rel: usize| -> Vec<(Pattern, usize)> {
        let mut v: Vec<(Pattern, usize)> = by_relation[&rel]
            .iter()
            .map(|(p, m)| (p.clone(), m.len()))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    };

    let target = (libm::round(params.target_fraction * n as f64) as usize).clamp(1, n);
    let mut sel = Selector {
        target,
        chosen: BTreeSet::new(),
        selected: Vec::new(),
        is_selected: vec![false; n],
    };

    // Seeds, interleaved across relations by frequency rank.
    let seeds: Vec<Vec<(Pattern, usize)>> = relations
        .iter()
        .map(|&r| {
            let all = ranked(r);
            let take = numeric::ceil_fraction(params.seed_fraction, all.len()).max(1);
            all.into_iter().take(take).collect()
        })
        .collect();
    let max_seeds = seeds.iter().map(Vec::len).max().unwrap_or(0);
    'seed: for rank in 0..max_seeds {
        for (ri, &r) in relations.iter().enumerate() {
            if sel.full() {
                break 'seed;
            }
            if let Some((p, _)) = seeds[ri].get(rank) {
                let members = by_relation[&r][p].clone();
                sel.add(r, p, &members);
            }
        }
    }

    let mut loops = 0;
    let mut exhausted = false;
    while !sel.full() {
        loops += 1;
        let mut picks: Vec<Vec<Pattern>> = Vec::with_capacity(relations.len());
        for &r in &relations {
            // Co-occurrence counts of unchosen patterns inside bags that
            // already contribute a selected instance.
            let mut score: BTreeMap<&Pattern, usize> = BTreeMap::new();
            for (b, bag) in train.bags().iter().enumerate() {
                if bag.relation_label != r {
                    continue;
                }
                let members = train.bag_members(b);
                if !members.iter().any(|&i| sel.is_selected[i]) {
                    continue;
                }
                for &i in members {
                    if !sel.is_selected[i] && !sel.chosen.contains(&(r, patterns[i].clone())) {
                        *score.entry(&patterns[i]).or_default() += 1;
                    }
                }
            }
            let freq = |p: &Pattern| by_relation[&r][p].len();
            let mut cands: Vec<(&Pattern, usize)> = score.into_iter().collect();
            cands.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| freq(b.0).cmp(&freq(a.0)))
                    .then_with(|| a.0.cmp(b.0))
            });
            let mut chosen: Vec<Pattern> = cands
                .into_iter()
                .take(params.max_new_patterns)
                .map(|(p, _)| p.clone())
                .collect();
            if chosen.is_empty() {
                // No co-occurrence signal left: fall back to frequency order.
                chosen = ranked(r)
                    .into_iter()
                    .filter(|(p, _)| !sel.chosen.contains(&(r, p.clone())))
                    .take(params.max_new_patterns)
                    .map(|(p, _)| p)
                    .collect();
            }
            picks.push(chosen);
        }
        if picks.iter().all(Vec::is_empty) {
            exhausted = true;
            log::warn!(
                "validation set: pattern space exhausted at {} of {} instances",
                sel.selected.len(),
                target
            );
            break;
        }
        for slot in 0..params.max_new_patterns {
            for (ri, &r) in relations.iter().enumerate() {
                if let Some(p) = picks[ri].get(slot) {
                    let members = by_relation[&r][p].clone();
                    sel.add(r, p, &members);
                }
            }
        }
    }

    let mut validation: Vec<u64> = sel
        .selected
        .iter()
        .map(|&i| instances[i].instance_id)
        .collect();
    validation.sort_unstable();
    let train_ids = instances
        .iter()
        .enumerate()
        .filter(|(i, _)| !sel.is_selected[*i])
        .map(|(_, inst)| inst.instance_id)
        .collect();
    Ok(ValidationSplit {
        validation,
        train: train_ids,
        loops,
        exhausted,
    })
}
