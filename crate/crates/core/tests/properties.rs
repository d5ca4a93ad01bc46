mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use reif_core::data::{
    build_validation_set, generate_synthetic_ds, BagSizeShape, BagSizeSpec, NoiseSpec, Split, ValidationParams,
};
use reif_core::eval::{pr_curve, precision_at_n, BagPrediction};
use reif_core::influence::{exact_inverse_hvp, influence_scores};
use reif_core::model::{hessian_vector_product, train_erm, ErmConfig, LabeledPoint, SoftmaxModel};
use reif_core::numeric::ceil_fraction;
use reif_core::sampling::{
    batch_in_bag_sample, sigmoid_derivative, sigmoid_probability, SamplerConfig, SamplingMode, ScoredBag,
};

fn vec_of(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn model_and_points(d: usize, k: usize, n: usize) -> impl Strategy<Value = (SoftmaxModel, Vec<LabeledPoint>)> {
    (vec_of(d * k, 3.0), prop::collection::vec((vec_of(d, 3.0), 0..k), n)).prop_map(move |(beta, pts)| {
        let m = SoftmaxModel::from_beta(d, k, beta).unwrap();
        (m, pts.into_iter().map(|(x, y)| LabeledPoint::new(x, y)).collect())
    })
}

fn scored_bags() -> impl Strategy<Value = Vec<ScoredBag>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 1..12), 1..8).prop_map(|bags| {
        let mut next = 0u64;
        bags.into_iter()
            .enumerate()
            .map(|(b, phis)| {
                let ids = (0..phis.len() as u64).map(|i| next + i).collect();
                next += phis.len() as u64;
                ScoredBag { bag_id: b as u64, instance_ids: ids, phis }
            })
            .collect()
    })
}

fn predictions() -> impl Strategy<Value = (Vec<BagPrediction>, BTreeMap<u64, usize>)> {
    prop::collection::vec((1..4usize, 0..8u32, 0..4usize), 1..40).prop_map(|rows| {
        let preds = rows
            .iter()
            .enumerate()
            .map(|(b, &(rel, s, _))| BagPrediction {
                bag_id: b as u64,
                scores: vec![],
                top_relation: rel,
                top_score: s as f64 / 7.0,
            })
            .collect();
        let gold = rows.iter().enumerate().map(|(b, &(_, _, g))| (b as u64, g)).collect();
        (preds, gold)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution(beta in vec_of(12, 50.0), x in vec_of(3, 50.0)) {
        let m = SoftmaxModel::from_beta(3, 4, beta).unwrap();
        let p = m.predict_proba(&x).unwrap();
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_shared_logit_shift(beta in vec_of(8, 3.0), x in vec_of(2, 3.0), c in -100.0..100.0f64) {
        // Adding c·u_a to every class column shifts all logits by c·x_a.
        let mut shifted = beta.clone();
        for k in 0..4 {
            shifted[k] += c;
        }
        let p = SoftmaxModel::from_beta(2, 4, beta).unwrap().predict_proba(&x).unwrap();
        let q = SoftmaxModel::from_beta(2, 4, shifted).unwrap().predict_proba(&x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hvp_is_symmetric_and_psd((m, pts) in model_and_points(3, 3, 6), u in vec_of(9, 2.0), v in vec_of(9, 2.0)) {
        let hu = hessian_vector_product(&m, &pts, &u).unwrap();
        let hv = hessian_vector_product(&m, &pts, &v).unwrap();
        let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
        prop_assert!((uhv - vhu).abs() <= 1e-9 * (1.0 + uhv.abs()));
        let vhv: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        prop_assert!(vhv >= -1e-12);
    }

    #[test]
    fn sigmoid_is_decreasing_and_bounded(a in -50.0..50.0f64, b in -50.0..50.0f64, alpha in 0.01..10.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid_probability(lo, alpha) >= sigmoid_probability(hi, alpha));
        let p = sigmoid_probability(a, alpha);
        prop_assert!((0.0..=1.0).contains(&p));
        let d = sigmoid_derivative(a, alpha);
        prop_assert!(d <= 0.0 && d >= -alpha / 4.0 - 1e-15);
    }

    #[test]
    fn bib_keeps_quota_in_every_bag(bags in scored_bags(), ratio in 0.01..1.0f64, seed in 0..1000u64, det in any::<bool>()) {
        let mode = if det { SamplingMode::DeterministicBib } else { SamplingMode::ProbabilisticBib };
        let cfg = SamplerConfig { ratio, seed, mode, ..SamplerConfig::default() };
        let res = batch_in_bag_sample(&bags, &cfg, 0).unwrap();
        let total: usize = bags.iter().map(|b| b.phis.len()).sum();
        let mut kept_sum = 0;
        for b in &bags {
            let (kept, size) = res.per_bag_counts[&b.bag_id];
            prop_assert_eq!(size, b.phis.len());
            prop_assert_eq!(kept, ceil_fraction(ratio, size).max(1).min(size));
            let in_bag = res.kept.iter().filter(|id| b.instance_ids.contains(id)).count();
            prop_assert_eq!(in_bag, kept);
            kept_sum += kept;
        }
        prop_assert_eq!(res.kept.len(), kept_sum);
        prop_assert!(res.kept.len() <= total);
        prop_assert!(res.kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_bib_keeps_lowest_scores(bags in scored_bags(), ratio in 0.01..1.0f64) {
        let cfg = SamplerConfig { ratio, mode: SamplingMode::DeterministicBib, ..SamplerConfig::default() };
        let res = batch_in_bag_sample(&bags, &cfg, 0).unwrap();
        let kept: BTreeSet<u64> = res.kept.iter().copied().collect();
        for b in &bags {
            let kept_max = b.instance_ids.iter().zip(&b.phis).filter(|(i, _)| kept.contains(i)).map(|(_, p)| *p).fold(f64::MIN, f64::max);
            let dropped_min = b.instance_ids.iter().zip(&b.phis).filter(|(i, _)| !kept.contains(i)).map(|(_, p)| *p).fold(f64::MAX, f64::min);
            prop_assert!(kept_max <= dropped_min);
        }
    }

    #[test]
    fn influence_is_linear_in_s((m, pts) in model_and_points(2, 3, 5), v in vec_of(6, 1.0), c in -4.0..4.0f64) {
        let inst = as_instances(&pts, 0);
        let s = exact_inverse_hvp(&m, &pts, &v, 0.1, 0.0).unwrap();
        let mut scaled = s.clone();
        scaled.s.iter_mut().for_each(|x| *x *= c);
        let a = influence_scores(&s, &inst, &m, 1.0).unwrap().phis();
        let b = influence_scores(&scaled, &inst, &m, 1.0).unwrap().phis();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn negative_influence_means_higher_keep_probability((m, pts) in model_and_points(2, 3, 6), v in vec_of(6, 1.0)) {
        let inst = as_instances(&pts, 0);
        let s = exact_inverse_hvp(&m, &pts, &v, 0.1, 0.0).unwrap();
        let rep = influence_scores(&s, &inst, &m, 1.0).unwrap();
        for e in &rep.entries {
            prop_assert_eq!(e.phi < 0.0, e.pi > 0.5);
        }
    }

    #[test]
    fn pr_curve_is_valid((preds, gold) in predictions()) {
        if let Ok(curve) = pr_curve(&preds, &gold) {
            prop_assert!(curve.points.windows(2).all(|w| w[0].recall <= w[1].recall && w[0].threshold > w[1].threshold));
            prop_assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall)));
            prop_assert!((0.0..=1.0).contains(&curve.auc));
        }
    }

    #[test]
    fn patn_hits_never_decrease((preds, gold) in predictions()) {
        let mut last = 0.0;
        for n in 1..=preds.len() {
            let hits = precision_at_n(&preds, &gold, n).unwrap() * n as f64;
            prop_assert!(hits + 1e-9 >= last);
            last = hits;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_positive_bag_keeps_a_clean_member(seed in 0..10_000u64, noise in 0.0..0.8f64) {
        let spec = NoiseSpec {
            num_bags: 40,
            num_test_bags: 10,
            noise_rate: noise,
            bag_size: BagSizeSpec { min: 5, max: 8, shape: BagSizeShape::Uniform },
            seed,
            ..NoiseSpec::default()
        };
        let ds = generate_synthetic_ds(&spec).unwrap();
        for (b, bag) in ds.bags().iter().enumerate() {
            if bag.relation_label != 0 {
                prop_assert!(ds.bag_instances(b).any(|i| i.is_noisy() == Some(false)));
            }
            for i in ds.bag_instances(b) {
                prop_assert_eq!(i.observed_label, bag.relation_label);
            }
        }
    }

    #[test]
    fn na_share_tracks_spec(seed in 0..10_000u64, na in 0.1..0.9f64) {
        let spec = NoiseSpec { num_bags: 200, num_test_bags: 0, na_fraction: na, seed, ..NoiseSpec::default() };
        let ds = generate_synthetic_ds(&spec).unwrap();
        let na_bags = ds.bags().iter().filter(|b| b.relation_label == 0).count();
        prop_assert!((na_bags as f64 / 200.0 - na).abs() <= 0.01);
    }

    #[test]
    fn validation_split_is_disjoint(seed in 0..10_000u64) {
        let spec = NoiseSpec { num_bags: 60, num_test_bags: 0, seed, ..NoiseSpec::default() };
        let ds = generate_synthetic_ds(&spec).unwrap();
        let split = build_validation_set(&ds, &ValidationParams::default()).unwrap();
        let val: BTreeSet<u64> = split.validation.iter().copied().collect();
        prop_assert!(split.train.iter().all(|i| !val.contains(i)));
        prop_assert_eq!(val.len() + split.train.len(), ds.len());
        let applied = split.apply(&ds);
        prop_assert_eq!(applied.subset(Split::Validation).len(), val.len());
    }

    #[test]
    fn erm_is_deterministic((_, pts) in model_and_points(2, 3, 12)) {
        let cfg = ErmConfig::default();
        let a = train_erm(&pts, 3, &cfg).unwrap();
        let b = train_erm(&pts, 3, &cfg).unwrap();
        prop_assert_eq!(a.model, b.model);
    }
}
