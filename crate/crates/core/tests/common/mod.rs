#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reif_core::data::{Instance, Split};
use reif_core::model::{LabeledPoint, SoftmaxModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box–Muller, kept local so tests do not share code with the generator.
    let u1: f64 = 1.0 - r.random::<f64>();
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_model(r: &mut ChaCha8Rng, d: usize, k: usize, scale: f64) -> SoftmaxModel {
    let beta = (0..d * k).map(|_| scale * gauss(r)).collect();
    SoftmaxModel::from_beta(d, k, beta).unwrap()
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Vec<LabeledPoint> {
    (0..n)
        .map(|_| {
            let y = r.random_range(0..k);
            let x = (0..d).map(|a| gauss(r) + if a % k == y { 1.0 } else { 0.0 }).collect();
            LabeledPoint::new(x, y)
        })
        .collect()
}

pub fn as_instances(points: &[LabeledPoint], first_id: u64) -> Vec<Instance> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| Instance {
            instance_id: first_id + i as u64,
            bag_id: first_id + i as u64,
            features: p.features.clone(),
            observed_label: p.label,
            gold_label: None,
            split: Split::Train,
        })
        .collect()
}

/// Mean loss, recomputed without any library helper beyond `predict_proba`.
pub fn mean_loss_of(beta: &[f64], d: usize, k: usize, pts: &[LabeledPoint]) -> f64 {
    let m = SoftmaxModel::from_beta(d, k, beta.to_vec()).unwrap();
    pts.iter()
        .map(|p| -m.predict_proba(&p.features).unwrap()[p.label].ln())
        .sum::<f64>()
        / pts.len() as f64
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Dense `A x` for a row-major square matrix.
pub fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}
