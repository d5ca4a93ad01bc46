//! Bag-structured datasets.
//!
//! A [`Dataset`] owns instances and the bags that group them. Class 0 is the
//! NA ("no relation") class by convention. Datasets are immutable once built;
//! all invariants are checked in [`Dataset::from_records`].

mod featurize;
mod synthetic;
mod validation;

pub use featurize::{Featurizer, HashedBagOfWords};

pub use synthetic::{generate_synthetic_ds, BagSizeShape, BagSizeSpec, NoiseSpec};
pub use validation::{build_validation_set, ValidationParams, ValidationSplit};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;

pub const NA_CLASS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub instance_id: u64,
    pub bag_id: u64,
    pub features: Vec<f64>,
    /// The distant-supervision label: always the bag's relation.
    pub observed_label: usize,
    /// True label, known only for synthetic data.
    pub gold_label: Option<usize>,
    pub split: Split,
}

impl Instance {
    pub fn is_noisy(&self) -> Option<bool> {
        self.gold_label.map(|g| g != self.observed_label)
    }
}

impl Example for Instance {
    fn features(&self) -> &[f64] {
        &self.features
    }
    fn label(&self) -> usize {
        self.observed_label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: u64,
    pub relation_label: usize,
    pub entity_pair_id: String,
    pub instance_ids: Vec<u64>,
}

/// One flat record per instance, the unit of the JSONL dataset format.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub instance_id: u64,
    pub bag_id: u64,
    pub entity_pair_id: String,
    pub relation: usize,
    pub features: Vec<f64>,
    pub gold_relation: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    dim: usize,
    instances: Vec<Instance>,
    bags: Vec<Bag>,
    /// Positions into `instances`, parallel to `bags`.
    members: Vec<Vec<usize>>,
}

impl Dataset {
    /// Validates every instance and bag invariant and builds the bag index.
    ///
    /// `num_classes` defaults to one more than the largest label seen (at
    /// least 2). Bags keep the order in which their ids first appear.
    pub fn from_records(records: Vec<DatasetRecord>, num_classes: Option<usize>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let dim = first.features.len();
        let record_err = |index: usize, r: &DatasetRecord, field: &'static str, reason: String| {
            Error::Record {
                index,
                instance_id: r.instance_id,
                field,
                reason,
            }
        };
        if dim == 0 {
            return Err(record_err(0, first, "features", "empty feature vector".into()));
        }
        let max_label = records
            .iter()
            .flat_map(|r| core::iter::once(r.relation).chain(r.gold_relation))
            .max()
            .unwrap_or(0);
        let num_classes = match num_classes {
            Some(k) if k <= max_label => {
                let (i, r) = records
                    .iter()
                    .enumerate()
                    .find(|(_, r)| r.relation >= k || r.gold_relation.is_some_and(|g| g >= k))
                    .expect("some record carries the max label");
                let field = if r.relation >= k { "relation" } else { "gold_relation" };
                return Err(record_err(i, r, field, format!("label out of range [0, {k})")));
            }
            Some(k) => k,
            None => (max_label + 1).max(2),
        };

        let mut seen_ids = BTreeMap::new();
        let mut bag_pos: BTreeMap<u64, usize> = BTreeMap::new();
        let mut bags: Vec<Bag> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut instances = Vec::with_capacity(records.len());

        for (index, r) in records.into_iter().enumerate() {
            if r.features.len() != dim {
                return Err(record_err(
                    index,
                    &r,
                    "features",
                    format!("dimension {} differs from {dim}", r.features.len()),
                ));
            }
            if let Some(a) = r.features.iter().position(|x| !x.is_finite()) {
                return Err(record_err(index, &r, "features", format!("entry {a} is not finite")));
            }
            if seen_ids.insert(r.instance_id, index).is_some() {
                return Err(record_err(index, &r, "instance_id", "duplicate instance id".into()));
            }
            let pos = instances.len();
            match bag_pos.get(&r.bag_id) {
                Some(&b) => {
                    let bag = &mut bags[b];
                    if bag.relation_label != r.relation {
                        return Err(record_err(
                            index,
                            &r,
                            "relation",
                            format!(
                                "bag {} has relation {}, record says {}",
                                r.bag_id, bag.relation_label, r.relation
                            ),
                        ));
                    }
                    if bag.entity_pair_id != r.entity_pair_id {
                        return Err(record_err(
                            index,
                            &r,
                            "entity_pair_id",
                            format!("bag {} belongs to entity pair {:?}", r.bag_id, bag.entity_pair_id),
                        ));
                    }
                    bag.instance_ids.push(r.instance_id);
                    members[b].push(pos);
                }
                None => {
                    bag_pos.insert(r.bag_id, bags.len());
                    bags.push(Bag {
                        bag_id: r.bag_id,
                        relation_label: r.relation,
                        entity_pair_id: r.entity_pair_id.clone(),
                        instance_ids: alloc::vec![r.instance_id],
                    });
                    members.push(alloc::vec![pos]);
                }
            }
            instances.push(Instance {
                instance_id: r.instance_id,
                bag_id: r.bag_id,
                features: r.features,
                observed_label: r.relation,
                gold_label: r.gold_relation,
                split: r.split,
            });
        }

        Ok(Dataset {
            num_classes,
            dim,
            instances,
            bags,
            members,
        })
    }

    pub fn to_records(&self) -> Vec<DatasetRecord> {
        let pairs: BTreeMap<u64, &str> = self
            .bags
            .iter()
            .map(|b| (b.bag_id, b.entity_pair_id.as_str()))
            .collect();
        self.instances
            .iter()
            .map(|i| DatasetRecord {
                instance_id: i.instance_id,
                bag_id: i.bag_id,
                entity_pair_id: pairs[&i.bag_id].to_string(),
                relation: i.observed_label,
                features: i.features.clone(),
                gold_relation: i.gold_label,
                split: i.split,
            })
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Positions (into [`Dataset::instances`]) of the members of bag number `b`.
    pub fn bag_members(&self, b: usize) -> &[usize] {
        &self.members[b]
    }

    pub fn bag_instances(&self, b: usize) -> impl Iterator<Item = &Instance> + '_ {
        self.members[b].iter().map(move |&i| &self.instances[i])
    }

    pub fn has_gold(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|i| i.gold_label.is_some())
    }

    /// Fraction of instances whose gold label equals the observed label, over
    /// instances in positive (non-NA) bags.
    pub fn positive_clean_fraction(&self) -> Option<f64> {
        let mut clean = 0usize;
        let mut total = 0usize;
        for i in &self.instances {
            if i.observed_label == NA_CLASS {
                continue;
            }
            total += 1;
            if !i.is_noisy()? {
                clean += 1;
            }
        }
        (total > 0).then(|| clean as f64 / total as f64)
    }

    /// The instances of one split, with bags restricted to those members.
    /// Bags left without members are dropped.
    pub fn subset(&self, split: Split) -> Dataset {
        self.filter(|i| i.split == split)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Instance) -> bool) -> Dataset {
        let mut instances = Vec::new();
        let mut bags = Vec::new();
        let mut members = Vec::new();
        for (bag, mem) in self.bags.iter().zip(&self.members) {
            let kept: Vec<usize> = mem
                .iter()
                .copied()
                .filter(|&i| keep(&self.instances[i]))
                .collect();
            if kept.is_empty() {
                continue;
            }
            let start = instances.len();
            bags.push(Bag {
                bag_id: bag.bag_id,
                relation_label: bag.relation_label,
                entity_pair_id: bag.entity_pair_id.clone(),
                instance_ids: kept.iter().map(|&i| self.instances[i].instance_id).collect(),
            });
            members.push((start..start + kept.len()).collect());
            instances.extend(kept.iter().map(|&i| self.instances[i].clone()));
        }
        Dataset {
            num_classes: self.num_classes,
            dim: self.dim,
            instances,
            bags,
            members,
        }
    }

    /// Returns a copy in which the listed instances carry `split`.
    pub fn with_split(&self, ids: &[u64], split: Split) -> Dataset {
        let set: alloc::collections::BTreeSet<u64> = ids.iter().copied().collect();
        let mut out = self.clone();
        for inst in &mut out.instances {
            if set.contains(&inst.instance_id) {
                inst.split = split;
            }
        }
        out
    }
}
