//! Epoch loop with per-bag influence subsampling, plus the FULL / ONE / AVE
//! baselines that share its batching, shuffling and optimizer.
//!
//! Every epoch visits the training bags once in a shuffled order, in batches
//! of `batch_bags`. In the REIF strategies each bag is scored with the
//! inverse-HVP vector `s` from the end of the previous epoch, subsampled,
//! and the union of the kept instances takes one gradient step. After the
//! epoch, the validation loss is recorded and `s` is recomputed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, NA_CLASS};
use crate::error::{Error, Result};
use crate::influence::{self, InverseHvp, LissaParams};
use crate::model::{self, Example, LabeledPoint, SoftmaxModel};
use crate::numeric::{self, Stream};
use crate::sampling::{self, SamplerConfig, SamplingMode, ScoredBag, ScoredInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "REIF-P-BiB")]
    ReifPBib,
    #[serde(rename = "REIF-D-BiB")]
    ReifDBib,
    #[serde(rename = "REIF-P-PH")]
    ReifPPh,
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "ONE")]
    One,
    #[serde(rename = "AVE")]
    Ave,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ReifPBib,
        Strategy::ReifDBib,
        Strategy::ReifPPh,
        Strategy::Full,
        Strategy::One,
        Strategy::Ave,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ReifPBib => "REIF-P-BiB",
            Strategy::ReifDBib => "REIF-D-BiB",
            Strategy::ReifPPh => "REIF-P-PH",
            Strategy::Full => "FULL",
            Strategy::One => "ONE",
            Strategy::Ave => "AVE",
        }
    }

    /// Case-insensitive.
    pub fn parse(s: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Strategy::Full | Strategy::One | Strategy::Ave)
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How influence is scored before the first `s` exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Epoch1Policy {
    /// `Φ = 0` for everyone, so `π = 0.5`.
    Uniform,
    /// Compute `s` at the initial (zero) model before training.
    WarmS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    Constant,
    /// `lr_t = initial / √t`.
    InvSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRate {
    pub initial: f64,
    pub decay: Decay,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate {
            initial: 0.1,
            decay: Decay::InvSqrt,
        }
    }
}

impl LearningRate {
    pub fn at(&self, epoch: usize) -> f64 {
        match self.decay {
            Decay::Constant => self.initial,
            Decay::InvSqrt => self.initial / numeric::sqrt(epoch as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_bags: usize,
    /// `seed` and `mode` here are overridden by the run's seed and strategy.
    pub sampler: SamplerConfig,
    pub lissa: LissaParams,
    pub learning_rate: LearningRate,
    pub lambda_reg: f64,
    pub seed: u64,
    pub strategy: Strategy,
    pub epoch1_policy: Epoch1Policy,
    /// Solve exactly when LiSSA diverges instead of failing the run.
    pub exact_fallback: bool,
    /// Keep a per-instance log of every selection decision.
    pub record_selections: bool,
    /// Score against the summed rather than the mean validation loss, i.e.
    /// sample with `α·m` where `m` is the validation size.
    pub validation_sum: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 30,
            batch_bags: 16,
            sampler: SamplerConfig::default(),
            lissa: LissaParams {
                max_iters: 2000,
                ..LissaParams::default()
            },
            learning_rate: LearningRate::default(),
            lambda_reg: 1e-2,
            seed: 0,
            strategy: Strategy::ReifPBib,
            epoch1_policy: Epoch1Policy::Uniform,
            exact_fallback: false,
            record_selections: false,
            validation_sum: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_bags == 0 {
            return Err(Error::contract("batch_bags must be at least 1"));
        }
        if !(self.learning_rate.initial > 0.0) || !self.learning_rate.initial.is_finite() {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::contract("lambda_reg must be non-negative"));
        }
        self.sampler.validate()
    }

    fn sampler_for_run(&self, validation_size: usize) -> SamplerConfig {
        let scale = if self.validation_sum { validation_size as f64 } else { 1.0 };
        SamplerConfig {
            seed: self.seed,
            alpha: self.sampler.alpha * scale,
            mode: match self.strategy {
                Strategy::ReifDBib => SamplingMode::DeterministicBib,
                Strategy::ReifPPh => SamplingMode::ProbabilisticPosthoc,
                _ => SamplingMode::ProbabilisticBib,
            },
            ..self.sampler
        }
    }

    fn lissa_for_epoch(&self, epoch: usize) -> LissaParams {
        LissaParams {
            seed: numeric::derive_seed(self.seed, Stream::Lissa, &[epoch as u64]),
            ..self.lissa
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseHvpStats {
    pub iterations: usize,
    pub converged: bool,
    /// The exact solver replaced a diverged LiSSA run.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean validation loss at the end of the epoch.
    pub val_loss: f64,
    /// Mean loss of the selected examples, each at the parameters of the
    /// step it took part in.
    pub subset_loss: f64,
    pub selected: usize,
    /// `s` refreshed at the end of this epoch; absent on the last epoch.
    pub inverse_hvp: Option<InverseHvpStats>,
    /// Gold-clean share of the selected instances in positive bags.
    pub clean_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub epoch: usize,
    pub instance_id: u64,
    pub bag_id: u64,
    pub phi: f64,
    pub pi: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub strategy: Option<Strategy>,
    pub epochs: Vec<EpochRecord>,
    pub selections: Vec<SelectionRecord>,
    /// The last `s` computed during the run.
    pub last_inverse_hvp: Option<InverseHvp>,
    /// Pool size and kept count of a post-hoc run's one-shot selection.
    pub posthoc_kept: Option<(usize, usize)>,
    /// Filled in by callers with a clock.
    pub wall_clock_secs: Option<f64>,
    pub notes: Vec<String>,
}

impl TrainHistory {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }
}

/// Runs one of the REIF strategies.
pub fn reif_train(train: &Dataset, val: &Dataset, config: &RunConfig) -> Result<(SoftmaxModel, TrainHistory)> {
    if config.strategy.is_baseline() {
        return Err(Error::contract(alloc::format!(
            "{} is a baseline; use baseline_train",
            config.strategy
        )));
    }
    train_any(train, val, config)
}

/// Runs FULL, ONE or AVE.
pub fn baseline_train(train: &Dataset, val: &Dataset, config: &RunConfig) -> Result<(SoftmaxModel, TrainHistory)> {
    if !config.strategy.is_baseline() {
        return Err(Error::contract(alloc::format!(
            "{} is not a baseline; use reif_train",
            config.strategy
        )));
    }
    train_any(train, val, config)
}

/// Dispatches on `config.strategy`.
pub fn train_any(train: &Dataset, val: &Dataset, config: &RunConfig) -> Result<(SoftmaxModel, TrainHistory)> {
    config.validate()?;
    check_inputs(train, val)?;
    let mut history = TrainHistory {
        strategy: Some(config.strategy),
        ..TrainHistory::default()
    };
    let model = if config.strategy == Strategy::ReifPPh {
        post_hoc_run(train, val, config, &mut history)?
    } else {
        epoch_loop(train, val, config, config.strategy, &mut history)?
    };
    Ok((model, history))
}

fn check_inputs(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if val.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch {
            what: "validation feature dimension",
            expected: train.dim(),
            found: val.dim(),
        });
    }
    if train.num_classes() != val.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "validation class count",
            expected: train.num_classes(),
            found: val.num_classes(),
        });
    }
    Ok(())
}

/// `s = H⁻¹ ∇L_val` at `model`, over the full training set.
fn refresh_s(
    model: &SoftmaxModel,
    train: &[Instance],
    val: &[Instance],
    config: &RunConfig,
    epoch: usize,
) -> Result<(InverseHvp, InverseHvpStats)> {
    let v = influence::aggregate_validation_gradient(model, val)?;
    let lissa = config.lissa_for_epoch(epoch);
    let (mut s, fell_back) = match influence::lissa_inverse_hvp(model, train, &v, config.lambda_reg, &lissa) {
        Ok(s) => (s, false),
        Err(Error::LissaDiverged { iteration, norm, limit }) if config.exact_fallback => {
            log::warn!(
                "epoch {epoch}: LiSSA diverged at iteration {iteration} (norm {norm:.3e} > {limit:.3e}); solving exactly"
            );
            let s = influence::exact_inverse_hvp(model, train, &v, config.lambda_reg, lissa.damping)?;
            (s, true)
        }
        Err(e) => return Err(e),
    };
    s.epoch = epoch;
    let stats = InverseHvpStats {
        iterations: s.iterations,
        converged: s.converged,
        fell_back,
    };
    Ok((s, stats))
}

/// `Φ_i = −sᵀ∇ℓ_i` at the current parameters. `s` may come from an earlier
/// parameter state; that drift is part of the algorithm.
fn drifted_phis(model: &SoftmaxModel, members: &[&Instance], s: &[f64]) -> Result<Vec<f64>> {
    let g = model::batch_gradients(model, members)?;
    Ok(g.times(s).into_iter().map(|x| -x).collect())
}

/// One step of `β ← β − lr (mean ∇ℓ + λβ)` over `batch`; returns the summed
/// pre-step loss.
fn gradient_step<E: Example>(model: &mut SoftmaxModel, batch: &[E], lambda: f64, lr: f64) -> Result<f64> {
    let k = model.num_classes();
    let mut grad: Vec<f64> = model.beta().iter().map(|b| lambda * b).collect();
    let mut scratch = vec![0.0; k];
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for e in batch {
        loss += model.accumulate_gradient(e.features(), e.label(), w, &mut scratch, &mut grad);
    }
    numeric::axpy(-lr, &grad, model.beta_mut());
    if !loss.is_finite() || model.beta().iter().any(|b| !b.is_finite()) {
        return Err(Error::Diverged {
            iteration: 0,
            detail: "non-finite loss or parameters after a gradient step".into(),
        });
    }
    Ok(loss)
}

struct EpochTally {
    loss: f64,
    selected: usize,
    clean: usize,
    positive: usize,
}

impl EpochTally {
    fn count(&mut self, inst: &Instance) {
        self.selected += 1;
        if inst.observed_label != NA_CLASS {
            if let Some(noisy) = inst.is_noisy() {
                self.positive += 1;
                if !noisy {
                    self.clean += 1;
                }
            }
        }
    }
}

fn epoch_loop(
    train: &Dataset,
    val: &Dataset,
    config: &RunConfig,
    strategy: Strategy,
    history: &mut TrainHistory,
) -> Result<SoftmaxModel> {
    let mut model = SoftmaxModel::zeros(train.dim(), train.num_classes())?;
    let instances = train.instances();
    let val_set = val.instances();
    let sampler = config.sampler_for_run(val_set.len());
    let reif = matches!(strategy, Strategy::ReifPBib | Strategy::ReifDBib);

    let mut s: Option<InverseHvp> = None;
    if reif && config.epoch1_policy == Epoch1Policy::WarmS {
        s = Some(refresh_s(&model, instances, val_set, config, 0)?.0);
    }

    let mut order: Vec<usize> = (0..train.bags().len()).collect();
    let mut proba = vec![0.0; train.num_classes()];
    for epoch in 1..=config.epochs {
        let mut rng = numeric::substream(config.seed, Stream::Shuffle, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let lr = config.learning_rate.at(epoch);
        let mut tally = EpochTally { loss: 0.0, selected: 0, clean: 0, positive: 0 };

        for chunk in order.chunks(config.batch_bags) {
            if strategy == Strategy::Ave {
                let reps: Vec<LabeledPoint> = chunk.iter().map(|&b| bag_average(train, b)).collect();
                tally.loss += gradient_step(&mut model, &reps, config.lambda_reg, lr)?;
                tally.selected += reps.len();
                continue;
            }
            let mut batch: Vec<&Instance> = Vec::new();
            for &b in chunk {
                let bag = &train.bags()[b];
                let members: Vec<&Instance> = train.bag_instances(b).collect();
                match strategy {
                    Strategy::Full | Strategy::ReifPPh => batch.extend(&members),
                    Strategy::One => {
                        let mut best = 0;
                        let mut best_p = f64::NEG_INFINITY;
                        for (j, inst) in members.iter().enumerate() {
                            model.proba_into(&inst.features, &mut proba);
                            if proba[bag.relation_label] > best_p {
                                best_p = proba[bag.relation_label];
                                best = j;
                            }
                        }
                        batch.push(members[best]);
                    }
                    Strategy::ReifPBib | Strategy::ReifDBib => {
                        let phis = match &s {
                            Some(s) => drifted_phis(&model, &members, &s.s)?,
                            None => vec![0.0; members.len()],
                        };
                        let scored = ScoredBag {
                            bag_id: bag.bag_id,
                            instance_ids: bag.instance_ids.clone(),
                            phis,
                        };
                        let mut bag_rng = sampling::bag_stream(config.seed, epoch as u64, bag.bag_id);
                        let picked = sampling::sample_bag(&scored, &sampler, &mut bag_rng)?;
                        if config.record_selections {
                            let mut next = picked.iter().peekable();
                            for (j, inst) in members.iter().enumerate() {
                                let kept = next.peek() == Some(&&j);
                                if kept {
                                    next.next();
                                }
                                history.selections.push(SelectionRecord {
                                    epoch,
                                    instance_id: inst.instance_id,
                                    bag_id: bag.bag_id,
                                    phi: scored.phis[j],
                                    pi: sampling::sigmoid_probability(scored.phis[j], sampler.alpha),
                                    kept,
                                });
                            }
                        }
                        batch.extend(picked.iter().map(|&j| members[j]));
                    }
                    Strategy::Ave => unreachable!(),
                }
            }
            for inst in &batch {
                tally.count(inst);
            }
            tally.loss += gradient_step(&mut model, &batch, config.lambda_reg, lr)?;
        }

        let val_loss = model::mean_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: epoch,
                detail: "validation loss is not finite".into(),
            });
        }
        let mut stats = None;
        if reif && epoch < config.epochs {
            let (fresh, st) = refresh_s(&model, instances, val_set, config, epoch)?;
            s = Some(fresh);
            stats = Some(st);
        }
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            val_loss,
            subset_loss: tally.loss / tally.selected as f64,
            selected: tally.selected,
            inverse_hvp: stats,
            clean_fraction: (tally.positive > 0).then(|| tally.clean as f64 / tally.positive as f64),
        });
    }
    if s.is_some() {
        history.last_inverse_hvp = s;
    }
    Ok(model)
}

/// One example per bag: the mean feature vector, labeled with the bag's relation.
fn bag_average(train: &Dataset, b: usize) -> LabeledPoint {
    let mut mean = vec![0.0; train.dim()];
    let members = train.bag_members(b);
    for &i in members {
        numeric::axpy(1.0, &train.instances()[i].features, &mut mean);
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|x| *x /= n);
    LabeledPoint::new(mean, train.bags()[b].relation_label)
}

/// Train on everything, score every instance once, draw `⌈r·n⌉` from the
/// pool, then retrain from scratch on the draw.
fn post_hoc_run(train: &Dataset, val: &Dataset, config: &RunConfig, history: &mut TrainHistory) -> Result<SoftmaxModel> {
    let mut warmup = TrainHistory::default();
    let full = epoch_loop(train, val, config, Strategy::Full, &mut warmup)?;
    let (s, _) = refresh_s(&full, train.instances(), val.instances(), config, 0)?;
    let phis = influence::influence_values(&s, train.instances(), &full)?;
    let scored: Vec<ScoredInstance> = train
        .instances()
        .iter()
        .zip(&phis)
        .map(|(inst, &phi)| ScoredInstance {
            instance_id: inst.instance_id,
            bag_id: inst.bag_id,
            phi,
        })
        .collect();
    let selection = sampling::post_hoc_sample(&scored, &config.sampler_for_run(val.len()), 0)?;
    if config.record_selections {
        let mut next = selection.positions.iter().peekable();
        for (j, sc) in scored.iter().enumerate() {
            let kept = next.peek() == Some(&&j);
            if kept {
                next.next();
            }
            history.selections.push(SelectionRecord {
                epoch: 0,
                instance_id: sc.instance_id,
                bag_id: sc.bag_id,
                phi: sc.phi,
                pi: selection.probabilities_used[&sc.instance_id],
                kept,
            });
        }
    }
    history.posthoc_kept = Some((scored.len(), selection.kept.len()));
    let kept: alloc::collections::BTreeSet<u64> = selection.kept.iter().copied().collect();
    let subset = train.filter(|i| kept.contains(&i.instance_id));
    let bags_lost = train.bags().len() - subset.bags().len();
    if bags_lost > 0 {
        history
            .notes
            .push(alloc::format!("post-hoc draw left {bags_lost} bags without instances"));
    }
    let model = epoch_loop(&subset, val, config, Strategy::Full, history)?;
    history.last_inverse_hvp = Some(s);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_ds, BagSizeShape, BagSizeSpec, NoiseSpec, Split};

    fn small() -> (Dataset, Dataset) {
        let spec = NoiseSpec {
            num_relations: 3,
            feature_dim: 2,
            num_bags: 40,
            num_test_bags: 10,
            bag_size: BagSizeSpec { min: 1, max: 4, shape: BagSizeShape::Uniform },
            noise_rate: 0.0,
            seed: 5,
            ..NoiseSpec::default()
        };
        let ds = generate_synthetic_ds(&spec).unwrap();
        (ds.subset(Split::Train), ds.subset(Split::Test))
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.as_str()), Some(s));
        }
        assert_eq!(Strategy::parse("reif-p-bib"), Some(Strategy::ReifPBib));
        assert_eq!(Strategy::parse("nope"), None);
    }

    #[test]
    fn entry_points_check_strategy_kind() {
        let (train, val) = small();
        let cfg = RunConfig { epochs: 1, ..RunConfig::default() };
        assert!(baseline_train(&train, &val, &cfg).is_err());
        let cfg = RunConfig { strategy: Strategy::Full, ..cfg };
        assert!(reif_train(&train, &val, &cfg).is_err());
    }

    #[test]
    fn single_epoch_uniform_skips_influence() {
        let (train, val) = small();
        let cfg = RunConfig { epochs: 1, ..RunConfig::default() };
        let (_, h) = reif_train(&train, &val, &cfg).unwrap();
        assert_eq!(h.epochs.len(), 1);
        assert!(h.epochs[0].inverse_hvp.is_none());
        assert!(h.last_inverse_hvp.is_none());
    }

    #[test]
    fn one_equals_full_on_singleton_bags() {
        let spec = NoiseSpec {
            num_relations: 3,
            feature_dim: 2,
            num_bags: 30,
            num_test_bags: 5,
            bag_size: BagSizeSpec { min: 1, max: 1, shape: BagSizeShape::Uniform },
            noise_rate: 0.0,
            ..NoiseSpec::default()
        };
        let ds = generate_synthetic_ds(&spec).unwrap();
        let (train, val) = (ds.subset(Split::Train), ds.subset(Split::Test));
        let cfg = RunConfig { epochs: 3, strategy: Strategy::Full, ..RunConfig::default() };
        let (full, hf) = baseline_train(&train, &val, &cfg).unwrap();
        let (one, ho) = baseline_train(&train, &val, &RunConfig { strategy: Strategy::One, ..cfg }).unwrap();
        assert_eq!(full, one);
        assert_eq!(hf.epochs, ho.epochs);
    }
}
