//! Training objectives of the detector and the recognition head, as pure
//! scalar functions with closed-form gradients.
//!
//! Box regression uses the standard smoothed L1 (quadratic `d²/(2β)` below
//! `β`, linear above), which is continuous at `|d| = β`. Objectness is a
//! binary cross-entropy on a probability; [`objectness_probability`] adapts
//! a two-logit (background, object) head to it.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Display;

use crate::error::{domain, validation, Error, Result};

fn finite_all(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

/// Smoothed L1 summed over the four box coordinates.
pub fn smooth_l1(pred: &[f64; 4], gt: &[f64; 4], beta: f64) -> Result<f64> {
    check_smooth_l1(pred, gt, beta)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| smooth_l1_term(p - g, beta)).sum())
}

/// Gradient of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: &[f64; 4], gt: &[f64; 4], beta: f64) -> Result<[f64; 4]> {
    check_smooth_l1(pred, gt, beta)?;
    let mut g = [0.0; 4];
    for i in 0..4 {
        let d = pred[i] - gt[i];
        g[i] = if d.abs() < beta { d / beta } else { d.signum() };
    }
    Ok(g)
}

fn check_smooth_l1(pred: &[f64; 4], gt: &[f64; 4], beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(domain(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    if !finite_all(pred) || !finite_all(gt) {
        return Err(domain("non-finite box coordinate"));
    }
    Ok(())
}

#[inline]
fn smooth_l1_term(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        d * d / (2.0 * beta)
    } else {
        a - beta / 2.0
    }
}

/// One objectness prediction and its label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectnessSample {
    pub o: f64,
    pub o_hat: f64,
}

impl ObjectnessSample {
    pub fn new(o: f64, o_hat: f64) -> Result<Self> {
        if !o.is_finite() {
            return Err(domain("objectness probability is not finite"));
        }
        if o_hat != 0.0 && o_hat != 1.0 {
            return Err(domain(format!("objectness label must be 0 or 1, got {o_hat}")));
        }
        Ok(Self { o, o_hat })
    }
}

/// Binary cross-entropy with the probability clamped to `[ε, 1-ε]`.
pub fn bce(sample: ObjectnessSample, epsilon: f64) -> f64 {
    let o = sample.o.clamp(epsilon, 1.0 - epsilon);
    -(sample.o_hat * libm::log(o) + (1.0 - sample.o_hat) * libm::log(1.0 - o))
}

/// d(bce)/do inside the clamp range; zero where the clamp is active.
pub fn bce_grad(sample: ObjectnessSample, epsilon: f64) -> f64 {
    if sample.o < epsilon || sample.o > 1.0 - epsilon {
        return 0.0;
    }
    let o = sample.o;
    -sample.o_hat / o + (1.0 - sample.o_hat) / (1.0 - o)
}

/// Object-class probability from a `(background, object)` logit pair.
pub fn objectness_probability(logits: [f64; 2]) -> f64 {
    let m = logits[0].max(logits[1]);
    let e0 = libm::exp(logits[0] - m);
    let e1 = libm::exp(logits[1] - m);
    e1 / (e0 + e1)
}

/// Detector objective: unweighted sum of box regression, objectness and
/// classification terms.
pub fn detector_loss(l1: f64, l_obj: f64, l_det: f64) -> f64 {
    l1 + l_obj + l_det
}

/// Softmax cross-entropy over subject logits, via log-sum-exp with the
/// maximum subtracted.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_logits(logits, label)?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// Gradient of [`cross_entropy`]: `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    check_logits(logits, label)?;
    let lse = log_sum_exp(logits);
    let mut g: Vec<f64> = logits.iter().map(|&z| libm::exp(z - lse)).collect();
    g[label] -= 1.0;
    Ok(g)
}

fn check_logits(logits: &[f64], label: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(domain(format!("cross-entropy needs at least 2 classes, got {}", logits.len())));
    }
    if label >= logits.len() {
        return Err(domain(format!("label {label} out of range for {} classes", logits.len())));
    }
    if !finite_all(logits) {
        return Err(domain("non-finite logit"));
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

/// Recognition objective: subject cross-entropy plus the pairwise term.
pub fn recognition_loss(l_cls: f64, l_pair: f64) -> f64 {
    l_cls + l_pair
}

/// Features of one batch with their subject labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<L> {
    features: Vec<Vec<f64>>,
    labels: Vec<L>,
}

impl<L: PartialEq + Display> LabeledBatch<L> {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<L>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(validation(format!("{} feature rows but {} labels", features.len(), labels.len())));
        }
        if features.len() < 2 {
            return Err(validation("a batch needs at least two samples"));
        }
        let d = features[0].len();
        for f in &features {
            if f.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: f.len() });
            }
            if !finite_all(f) {
                return Err(validation("non-finite feature"));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }
    pub fn labels(&self) -> &[L] {
        &self.labels
    }
    pub fn len(&self) -> usize {
        self.features.len()
    }
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.features[0].len()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Hardest positive and hardest negative of each anchor. The first index
/// wins ties.
struct Mined {
    pos: Vec<(usize, f64)>,
    neg: Vec<(usize, f64)>,
}

fn mine<L: PartialEq + Display>(batch: &LabeledBatch<L>) -> Result<Mined> {
    let n = batch.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&batch.features[i], &batch.features[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    let mut any_negative = false;
    for a in 0..n {
        let mut hp: Option<(usize, f64)> = None;
        let mut hn: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if batch.labels[j] == batch.labels[a] {
                if hp.map_or(true, |(_, b)| d > b) {
                    hp = Some((j, d));
                }
            } else if hn.map_or(true, |(_, b)| d < b) {
                hn = Some((j, d));
            }
        }
        let hp = hp.ok_or_else(|| Error::NoPositive(batch.labels[a].to_string()))?;
        if hn.is_some() {
            any_negative = true;
        }
        pos.push(hp);
        neg.push(hn.unwrap_or((a, f64::INFINITY)));
    }
    if !any_negative {
        return Err(Error::NoNegative);
    }
    Ok(Mined { pos, neg })
}

/// Batch-hard triplet loss with Euclidean distance: for each anchor, the
/// hinge on (farthest positive − nearest negative + margin), averaged over
/// anchors.
pub fn batch_hard_triplet<L: PartialEq + Display>(batch: &LabeledBatch<L>, margin: f64) -> Result<f64> {
    let mined = mine(batch)?;
    let total: f64 = mined.pos.iter().zip(&mined.neg).map(|(&(_, dp), &(_, dn))| (dp - dn + margin).max(0.0)).sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`batch_hard_triplet`] with respect to every feature row.
///
/// Undefined where two mined samples coincide or where the hinge or the
/// mining choice sits on a tie; callers checking it numerically avoid those
/// points.
#[allow(clippy::needless_range_loop)]
pub fn batch_hard_triplet_grad<L: PartialEq + Display>(batch: &LabeledBatch<L>, margin: f64) -> Result<Vec<Vec<f64>>> {
    let mined = mine(batch)?;
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let mut grad = vec![vec![0.0; batch.dim()]; n];
    for a in 0..n {
        let (p, dp) = mined.pos[a];
        let (q, dn) = mined.neg[a];
        if dp - dn + margin <= 0.0 {
            continue;
        }
        // +d(a,p): (a-p)/|a-p| on a, the opposite on p; -d(a,q) likewise.
        for k in 0..batch.dim() {
            let fa = batch.features[a][k];
            if dp > 0.0 {
                let u = (fa - batch.features[p][k]) / dp * scale;
                grad[a][k] += u;
                grad[p][k] -= u;
            }
            if dn > 0.0 {
                let v = (fa - batch.features[q][k]) / dn * scale;
                grad[a][k] -= v;
                grad[q][k] += v;
            }
        }
    }
    Ok(grad)
}

/// Largest componentwise error between an analytic gradient and central
/// differences `(f(x+h·e) − f(x−h·e)) / 2h`.
///
/// The error is relative for components whose magnitude exceeds one and
/// absolute below that, so vanishing gradients do not blow up the ratio.
pub fn grad_check<F, G>(f: F, grad: G, point: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(point);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x);
        x[i] = orig - step;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults::SMOOTH_L1_BETA as BETA;
    use alloc::string::String;

    const LN2: f64 = core::f64::consts::LN_2;

    #[test]
    fn smooth_l1_examples() {
        let z = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(smooth_l1(&z, &z, BETA).unwrap(), 0.0);
        let v = smooth_l1(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], BETA).unwrap();
        assert!((v - (1.0 - 1.0 / 18.0)).abs() < 1e-12);
        // both branches give beta/2 at the joint
        let quad = BETA * BETA / (2.0 * BETA);
        let lin = BETA - BETA / 2.0;
        assert!((quad - lin).abs() < 1e-15);
        let at = smooth_l1(&[BETA, 0.0, 0.0, 0.0], &[0.0; 4], BETA).unwrap();
        assert!((at - 1.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_rejects_bad_input() {
        assert!(smooth_l1(&[f64::NAN, 0.0, 0.0, 0.0], &[0.0; 4], BETA).is_err());
        assert!(smooth_l1(&[0.0; 4], &[0.0; 4], 0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let eps = 1e-7;
        assert!((bce(ObjectnessSample::new(0.5, 1.0).unwrap(), eps) - LN2).abs() < 1e-12);
        assert!((bce(ObjectnessSample::new(0.5, 0.0).unwrap(), eps) - LN2).abs() < 1e-12);
        assert!((bce(ObjectnessSample::new(0.9, 1.0).unwrap(), eps) - 0.105_360_515_657_826_3).abs() < 1e-12);
        let perfect = bce(ObjectnessSample::new(1.0, 1.0).unwrap(), eps);
        assert!((0.0..1e-6).contains(&perfect));
        assert!(bce(ObjectnessSample::new(0.0, 1.0).unwrap(), eps).is_finite());
        assert!(ObjectnessSample::new(0.3, 0.5).is_err());
    }

    #[test]
    fn two_logit_adapter() {
        assert!((objectness_probability([0.0, 0.0]) - 0.5).abs() < 1e-15);
        assert!(objectness_probability([-800.0, 800.0]) > 0.999_999);
    }

    #[test]
    fn detector_and_recognition_sums() {
        assert_eq!(detector_loss(0.0, 0.0, 0.0), 0.0);
        assert_eq!(detector_loss(1.0, 2.0, 3.0), 6.0);
        assert_eq!(recognition_loss(0.0, 0.0), 0.0);
        assert!((recognition_loss(1.386294, 1.3) - 2.686294).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = cross_entropy(&[0.3; 4], 2).unwrap();
        assert!((v - libm::log(4.0)).abs() < 1e-12);
        let v = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert!((v - 0.313_261_687_518_222_8).abs() < 1e-12);
        let v = cross_entropy(&[1000.0, 0.0, -5.0], 0).unwrap();
        assert!((0.0..1e-12).contains(&v));
        assert!(cross_entropy(&[1.0, 2.0], 2).is_err());
        assert!(cross_entropy(&[1.0], 0).is_err());
    }

    fn batch(values: &[f64], labels: &[&str]) -> LabeledBatch<String> {
        LabeledBatch::new(values.iter().map(|&v| vec![v]).collect(), labels.iter().map(|s| String::from(*s)).collect())
            .unwrap()
    }

    #[test]
    fn triplet_examples() {
        let b = batch(&[0.0, 1.0, 10.0, 10.5], &["A", "A", "B", "B"]);
        assert_eq!(batch_hard_triplet(&b, 0.3).unwrap(), 0.0);
        let b = batch(&[0.0, 2.0, 1.0, 3.0], &["A", "A", "B", "B"]);
        assert!((batch_hard_triplet(&b, 0.3).unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn triplet_preconditions() {
        let b = batch(&[0.0, 1.0, 5.0], &["A", "A", "B"]);
        assert_eq!(batch_hard_triplet(&b, 0.3), Err(Error::NoPositive("B".into())));
        let b = batch(&[0.0, 1.0, 5.0], &["A", "A", "A"]);
        assert_eq!(batch_hard_triplet(&b, 0.3), Err(Error::NoNegative));
        assert!(LabeledBatch::new(vec![vec![1.0]], vec![1u32]).is_err());
        assert!(LabeledBatch::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1u32, 2]).is_err());
    }

    #[test]
    fn grad_check_basics() {
        let e = grad_check(|x| x[0] * x[0], |x| vec![2.0 * x[0]], &[1.0], 1e-5);
        assert!(e < 1e-8, "{e}");
        let e = grad_check(|_| 3.0, |x| vec![0.0; x.len()], &[0.2, -4.0], 1e-5);
        assert!(e < 1e-12);
        let e = grad_check(|x| x[0] * x[0], |x| vec![2.2 * x[0]], &[1.0], 1e-5);
        assert!(e > 0.05);
    }
}
