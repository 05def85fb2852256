use bodymetric_core::defaults::{PROB_EPSILON, SMOOTH_L1_BETA, TRIPLET_MARGIN};
use bodymetric_core::losses::{
    batch_hard_triplet, batch_hard_triplet_grad, bce, bce_grad, cross_entropy, cross_entropy_grad, grad_check,
    smooth_l1, smooth_l1_grad, LabeledBatch, ObjectnessSample,
};
use bodymetric_core::Error;
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over anchors of the worst hinge over every (positive, negative) pair.
fn all_triplets(features: &[Vec<f64>], labels: &[u32], margin: f64) -> f64 {
    let n = features.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut worst = 0.0f64;
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let h = dist(&features[a], &features[p]) - dist(&features[a], &features[q]) + margin;
                worst = worst.max(h);
            }
        }
        total += worst;
    }
    total / n as f64
}

/// Batches where every label occurs at least twice and at least two labels
/// are present.
fn arb_batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u32>)> {
    (2usize..=4, 1usize..=8).prop_flat_map(|(classes, d)| {
        prop::collection::vec(2usize..=4, classes).prop_flat_map(move |sizes| {
            let labels: Vec<u32> = sizes.iter().enumerate().flat_map(|(c, &s)| vec![c as u32; s]).collect();
            let b = labels.len();
            (prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), b), Just(labels))
        })
    })
}

proptest! {
    #[test]
    fn triplet_matches_exhaustive((f, l) in arb_batch(), margin in 0.0..1.0f64) {
        let batch = LabeledBatch::new(f.clone(), l.clone()).unwrap();
        prop_assert_eq!(batch_hard_triplet(&batch, margin).unwrap(), all_triplets(&f, &l, margin));
    }

    #[test]
    fn triplet_invariant_under_rigid_motion((f, l) in arb_batch(), angle in 0.0..std::f64::consts::TAU, shift in -5.0..5.0f64) {
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<Vec<f64>> = f
            .iter()
            .map(|v| {
                let mut w = v.clone();
                if w.len() >= 2 {
                    w[0] = c * v[0] - s * v[1];
                    w[1] = s * v[0] + c * v[1];
                }
                w.iter().map(|x| x + shift).collect()
            })
            .collect();
        let before = batch_hard_triplet(&LabeledBatch::new(f, l.clone()).unwrap(), TRIPLET_MARGIN).unwrap();
        let after = batch_hard_triplet(&LabeledBatch::new(moved, l).unwrap(), TRIPLET_MARGIN).unwrap();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn triplet_nonnegative((f, l) in arb_batch()) {
        let loss = batch_hard_triplet(&LabeledBatch::new(f, l).unwrap(), TRIPLET_MARGIN).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn smooth_l1_gradient(p in prop::array::uniform4(-3.0..3.0f64), g in prop::array::uniform4(-3.0..3.0f64)) {
        // stay clear of the branch switch at |d| = beta
        prop_assume!(p.iter().zip(&g).all(|(a, b)| ((a - b).abs() - SMOOTH_L1_BETA).abs() > 1e-3));
        let f = |x: &[f64]| smooth_l1(&[x[0], x[1], x[2], x[3]], &g, SMOOTH_L1_BETA).unwrap();
        let df = |x: &[f64]| smooth_l1_grad(&[x[0], x[1], x[2], x[3]], &g, SMOOTH_L1_BETA).unwrap().to_vec();
        prop_assert!(grad_check(f, df, &p, 1e-6) < 1e-5);
    }

    #[test]
    fn bce_gradient(o in 0.01..0.99f64, label in 0u8..2) {
        let y = label as f64;
        let f = |x: &[f64]| bce(ObjectnessSample::new(x[0], y).unwrap(), PROB_EPSILON);
        let df = |x: &[f64]| vec![bce_grad(ObjectnessSample::new(x[0], y).unwrap(), PROB_EPSILON)];
        prop_assert!(grad_check(f, df, &[o], 1e-7) < 1e-5);
    }

    #[test]
    fn cross_entropy_gradient(z in prop::collection::vec(-10.0..10.0f64, 2..12), pick in any::<prop::sample::Index>()) {
        let label = pick.index(z.len());
        let f = |x: &[f64]| cross_entropy(x, label).unwrap();
        let df = |x: &[f64]| cross_entropy_grad(x, label).unwrap();
        prop_assert!(grad_check(f, df, &z, 1e-6) < 1e-5);
    }

    #[test]
    fn cross_entropy_shift_invariant(z in prop::collection::vec(-10.0..10.0f64, 2..12), c in -500.0..500.0f64) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = cross_entropy(&z, 0).unwrap();
        let b = cross_entropy(&shifted, 0).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn triplet_gradient_matches_differences() {
    let f = [[0.0, 0.1], [0.9, -0.2], [0.3, 0.8], [-0.7, 0.55]];
    let labels = vec![0u32, 0, 1, 1];
    let shape = |x: &[f64]| LabeledBatch::new(x.chunks(2).map(<[f64]>::to_vec).collect(), labels.clone()).unwrap();
    let flat: Vec<f64> = f.concat();
    let loss = |x: &[f64]| batch_hard_triplet(&shape(x), 1.0).unwrap();
    let grad = |x: &[f64]| batch_hard_triplet_grad(&shape(x), 1.0).unwrap().concat();
    assert!(loss(&flat) > 0.0);
    assert!(grad_check(loss, grad, &flat, 1e-6) < 1e-5);
}

#[test]
fn singleton_label_has_no_positive() {
    let b = LabeledBatch::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec!["a", "a", "b"]).unwrap();
    assert!(matches!(batch_hard_triplet(&b, 0.3), Err(Error::NoPositive(l)) if l == "b"));
    let same = LabeledBatch::new(vec![vec![0.0], vec![1.0]], vec!["a", "a"]).unwrap();
    assert!(matches!(batch_hard_triplet(&same, 0.3), Err(Error::NoNegative)));
}
