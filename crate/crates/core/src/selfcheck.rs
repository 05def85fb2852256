//! Self-check suite for the loss functions: closed-form identities, the
//! batch-hard mining against exhaustive triplet enumeration, and gradient
//! checks at random smooth points.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::losses::{
    batch_hard_triplet, batch_hard_triplet_grad, bce, bce_grad, cross_entropy, cross_entropy_grad, euclidean,
    grad_check, smooth_l1, smooth_l1_grad, LabeledBatch, ObjectnessSample,
};
use crate::model::LossConfig;
use crate::rng::PlanRng;

pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const CONTINUITY_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckOptions {
    pub seed: u64,
    pub config: LossConfig,
    /// Random points per gradient check.
    pub points: usize,
    /// Random batches for the mining check.
    pub triplet_batches: usize,
    /// Scales the analytic smooth-L1 gradient; a negative control for the
    /// harness.
    pub gradient_fault: Option<f64>,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        Self { seed: 0, config: LossConfig::default(), points: 100, triplet_batches: 200, gradient_fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn outcome(name: &str, max_error: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome { name: name.into(), max_error, tolerance, passed: max_error < tolerance }
}

pub fn run_self_checks(opts: &SelfCheckOptions) -> Vec<CheckOutcome> {
    let beta = opts.config.beta;
    let eps = opts.config.epsilon;
    let margin = opts.config.margin;
    let mut rng = PlanRng::new(opts.seed);
    let mut out = Vec::new();

    let zero = [0.0; 4];
    let v = smooth_l1(&[1.0, 0.0, 0.0, 0.0], &zero, beta).unwrap_or(f64::NAN);
    let expect = 1.0 - beta / 2.0;
    out.push(outcome("smooth_l1 linear branch at d=1", (v - expect).abs(), IDENTITY_TOLERANCE));

    let lo = smooth_l1(&[beta - 1e-9, 0.0, 0.0, 0.0], &zero, beta).unwrap_or(f64::NAN);
    let hi = smooth_l1(&[beta + 1e-9, 0.0, 0.0, 0.0], &zero, beta).unwrap_or(f64::NAN);
    out.push(outcome("smooth_l1 continuity at beta", (hi - lo).abs(), CONTINUITY_TOLERANCE));

    let b = bce(ObjectnessSample { o: 0.5, o_hat: 1.0 }, eps);
    out.push(outcome("bce at o=0.5", (b - core::f64::consts::LN_2).abs(), IDENTITY_TOLERANCE));

    let ce = cross_entropy(&[0.25; 4], 1).unwrap_or(f64::NAN);
    out.push(outcome("cross_entropy uniform over 4 classes", (ce - libm::log(4.0)).abs(), IDENTITY_TOLERANCE));

    let mut worst = 0.0f64;
    for _ in 0..opts.triplet_batches {
        let batch = random_batch(&mut rng);
        let fast = batch_hard_triplet(&batch, margin).unwrap_or(f64::NAN);
        worst = worst.max((fast - all_triplets(&batch, margin)).abs());
    }
    out.push(outcome("batch_hard_triplet vs all triplets", worst, IDENTITY_TOLERANCE));

    let fault = opts.gradient_fault.unwrap_or(1.0);
    let mut worst = 0.0f64;
    for _ in 0..opts.points {
        let gt: [f64; 4] = core::array::from_fn(|_| rng.uniform(-2.0, 2.0));
        let mut x = [0.0; 4];
        for (xi, gi) in x.iter_mut().zip(&gt) {
            let d = loop {
                let d = rng.uniform(-1.0, 1.0);
                if (d.abs() - beta).abs() > 1e-3 {
                    break d;
                }
            };
            *xi = gi + d;
        }
        let f = |p: &[f64]| smooth_l1(&to4(p), &gt, beta).unwrap_or(f64::NAN);
        let g = |p: &[f64]| {
            smooth_l1_grad(&to4(p), &gt, beta).map(|g| g.iter().map(|v| v * fault).collect()).unwrap_or_default()
        };
        worst = worst.max(grad_check(f, g, &x, 1e-6));
    }
    out.push(outcome("smooth_l1 gradient", worst, GRADIENT_TOLERANCE));

    let mut worst = 0.0f64;
    for _ in 0..opts.points {
        let o = rng.uniform(0.05, 0.95);
        let label = (rng.below(2)) as f64;
        let f = |p: &[f64]| bce(ObjectnessSample { o: p[0], o_hat: label }, eps);
        let g = |p: &[f64]| vec![bce_grad(ObjectnessSample { o: p[0], o_hat: label }, eps)];
        worst = worst.max(grad_check(f, g, &[o], 1e-6));
    }
    out.push(outcome("bce gradient", worst, GRADIENT_TOLERANCE));

    let mut worst = 0.0f64;
    for _ in 0..opts.points {
        let classes = 2 + rng.index(9);
        let label = rng.index(classes);
        let logits: Vec<f64> = (0..classes).map(|_| 2.0 * rng.normal()).collect();
        let f = |p: &[f64]| cross_entropy(p, label).unwrap_or(f64::NAN);
        let g = |p: &[f64]| cross_entropy_grad(p, label).unwrap_or_default();
        worst = worst.max(grad_check(f, g, &logits, 1e-6));
    }
    out.push(outcome("cross_entropy gradient", worst, GRADIENT_TOLERANCE));

    let mut worst = 0.0f64;
    for _ in 0..opts.points {
        let batch = loop {
            let b = random_batch(&mut rng);
            if is_smooth_point(&b, margin, 1e-3) {
                break b;
            }
        };
        let dim = batch.dim();
        let labels = batch.labels().to_vec();
        let flat: Vec<f64> = batch.features().iter().flatten().copied().collect();
        let rebuild = |p: &[f64]| LabeledBatch::new(p.chunks(dim).map(|c| c.to_vec()).collect(), labels.clone());
        let f = |p: &[f64]| rebuild(p).and_then(|b| batch_hard_triplet(&b, margin)).unwrap_or(f64::NAN);
        let g = |p: &[f64]| {
            rebuild(p)
                .and_then(|b| batch_hard_triplet_grad(&b, margin))
                .map(|g| g.into_iter().flatten().collect())
                .unwrap_or_default()
        };
        worst = worst.max(grad_check(f, g, &flat, 1e-6));
    }
    out.push(outcome("batch_hard_triplet gradient", worst, GRADIENT_TOLERANCE));

    out
}

fn to4(p: &[f64]) -> [f64; 4] {
    [p[0], p[1], p[2], p[3]]
}

/// `n` subjects × `k` samples in `d` dimensions, `n, k ∈ [2, 4]`, `d ∈ [1, 8]`.
fn random_batch(rng: &mut PlanRng) -> LabeledBatch<u32> {
    let n = 2 + rng.index(3);
    let k = 2 + rng.index(3);
    let d = 1 + rng.index(8);
    let mut features = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n * k);
    for s in 0..n {
        for _ in 0..k {
            features.push((0..d).map(|_| rng.normal()).collect());
            labels.push(s as u32);
        }
    }
    LabeledBatch::new(features, labels).expect("well-formed random batch")
}

/// Reference value: for each anchor, the largest hinge over every
/// (positive, negative) pair, averaged.
fn all_triplets(batch: &LabeledBatch<u32>, margin: f64) -> f64 {
    let f = batch.features();
    let l = batch.labels();
    let n = f.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut best = f64::NEG_INFINITY;
        for p in (0..n).filter(|&p| p != a && l[p] == l[a]) {
            for q in (0..n).filter(|&q| l[q] != l[a]) {
                let h = (euclidean(&f[a], &f[p]) - euclidean(&f[a], &f[q]) + margin).max(0.0);
                best = best.max(h);
            }
        }
        total += best;
    }
    total / n as f64
}

/// True when no distance is near zero, every anchor's mined positive and
/// negative win by more than `gap`, and no hinge sits within `gap` of zero.
fn is_smooth_point(batch: &LabeledBatch<u32>, margin: f64, gap: f64) -> bool {
    let f = batch.features();
    let l = batch.labels();
    let n = f.len();
    for a in 0..n {
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for j in (0..n).filter(|&j| j != a) {
            let d = euclidean(&f[a], &f[j]);
            if d < gap {
                return false;
            }
            if l[j] == l[a] {
                pos.push(d);
            } else {
                neg.push(d);
            }
        }
        pos.sort_by(|x, y| y.total_cmp(x));
        neg.sort_by(f64::total_cmp);
        if pos.len() > 1 && pos[0] - pos[1] < gap {
            return false;
        }
        if neg.len() > 1 && neg[1] - neg[0] < gap {
            return false;
        }
        if (pos[0] - neg[0] + margin).abs() < gap {
            return false;
        }
    }
    let distinct: BTreeSet<u32> = l.iter().copied().collect();
    distinct.len() >= 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes_everything() {
        let results = run_self_checks(&SelfCheckOptions::default());
        assert_eq!(results.len(), 9);
        for r in &results {
            assert!(r.passed, "{} failed: {} >= {}", r.name, r.max_error, r.tolerance);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let opts =
            SelfCheckOptions { gradient_fault: Some(1.01), points: 20, triplet_batches: 5, ..Default::default() };
        let results = run_self_checks(&opts);
        let bad: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        assert_eq!(bad, vec!["smooth_l1 gradient"]);
    }
}
