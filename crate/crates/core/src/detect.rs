//! Detection scoring: IoU, greedy per-frame matching, and precision /
//! recall / F1 per dataset tag and pooled.
//!
//! Pooled figures are micro-averaged: counts are summed over every frame
//! of every tag before the ratios are taken. They are not the mean of the
//! per-tag F1 values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use serde::Serialize;

use crate::error::{validation, Result};
use crate::model::{BoundingBox, DetectionRecord, DetectionStore, GroundTruthRecord, GroundTruthStore, MediaIndex};

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x().max(b.x());
    let ih = a.bottom().min(b.bottom()) - a.y().max(b.y());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    // Areas from corner differences, like the intersection, so that a box
    // compared with itself gives exactly 1.
    let area = |r: &BoundingBox| (r.right() - r.x()) * (r.bottom() - r.y());
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl Add for MatchCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Greedy one-to-one matching within a single frame.
///
/// Predictions are visited by descending score; ties go to the smaller box,
/// then to input order. Each prediction claims the unmatched ground truth
/// with the highest IoU (first in input order on IoU ties) when that IoU is
/// at least `threshold`.
pub fn match_frame(preds: &[&DetectionRecord], gts: &[&GroundTruthRecord], threshold: f64) -> MatchCounts {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        preds[j].score.total_cmp(&preds[i].score).then(preds[i].bbox.area().total_cmp(&preds[j].bbox.area()))
    });

    let mut taken = vec![false; gts.len()];
    let mut tp = 0u64;
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&preds[p].bbox, &gt.bbox);
            if v >= threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    MatchCounts { tp, fp: preds.len() as u64 - tp, fn_: gts.len() as u64 - tp }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 from counts.
///
/// A zero denominator yields 1.0 when all counts are zero (a silent
/// detector on an empty frame is correct) and 0.0 otherwise.
pub fn prf1(c: MatchCounts) -> Prf1 {
    let empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            if empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    // 2PR/(P+R) rewritten over integer counts.
    Prf1 {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for GroupMetrics {
    fn from(counts: MatchCounts) -> Self {
        let m = prf1(counts);
        Self { counts, precision: m.precision, recall: m.recall, f1: m.f1 }
    }
}

/// Per-tag and pooled metrics. Every metric vector is aligned with
/// `thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub thresholds: Vec<f64>,
    pub per_group: BTreeMap<String, Vec<GroupMetrics>>,
    pub pooled: Vec<GroupMetrics>,
}

impl DetectionReport {
    pub fn group(&self, tag: &str, threshold_idx: usize) -> Option<&GroupMetrics> {
        self.per_group.get(tag).and_then(|v| v.get(threshold_idx))
    }

    /// Unweighted mean of per-group F1 at one threshold. Reported only for
    /// contrast with the pooled value.
    pub fn macro_f1(&self, threshold_idx: usize) -> f64 {
        if self.per_group.is_empty() {
            return self.pooled[threshold_idx].f1;
        }
        let sum: f64 = self.per_group.values().map(|v| v[threshold_idx].f1).sum();
        sum / self.per_group.len() as f64
    }
}

pub fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(validation("at least one IoU threshold is required"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(validation(format!("IoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

/// Matches every frame present in either store and aggregates counts per
/// dataset tag and over all tags.
///
/// Every media id that appears must resolve to a tag in `media`.
pub fn evaluate_detections(
    dets: &DetectionStore,
    gts: &GroundTruthStore,
    thresholds: &[f64],
    media: &MediaIndex,
) -> Result<DetectionReport> {
    check_thresholds(thresholds)?;

    let mut keys = BTreeSet::new();
    keys.extend(gts.frames().map(|(k, _)| k.clone()));
    keys.extend(dets.frames().map(|(k, _)| k.clone()));

    let mut per_group: BTreeMap<String, Vec<MatchCounts>> = BTreeMap::new();
    for key in &keys {
        let frame_gts = gts.frame(key);
        let tag = media.tag(&key.media_id).ok_or_else(|| {
            let role = if frame_gts.is_empty() { "detection" } else { "ground-truth" };
            validation(format!("{role} media {} has no dataset tag", key.media_id))
        })?;
        let frame_dets = dets.frame(key);
        let slot = per_group.entry(tag.into()).or_insert_with(|| vec![MatchCounts::default(); thresholds.len()]);
        for (i, &t) in thresholds.iter().enumerate() {
            slot[i] += match_frame(&frame_dets, &frame_gts, t);
        }
    }

    let mut pooled = vec![MatchCounts::default(); thresholds.len()];
    for counts in per_group.values() {
        for (p, c) in pooled.iter_mut().zip(counts) {
            *p += *c;
        }
    }

    Ok(DetectionReport {
        thresholds: thresholds.to_vec(),
        per_group: per_group.into_iter().map(|(k, v)| (k, v.into_iter().map(GroupMetrics::from).collect())).collect(),
        pooled: pooled.into_iter().map(GroupMetrics::from).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defaults::IOU_THRESHOLDS;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(b: BoundingBox, s: f64) -> DetectionRecord {
        DetectionRecord::new("m", 0, b, s).unwrap()
    }

    fn gt(b: BoundingBox, subject: &str) -> GroundTruthRecord {
        GroundTruthRecord::new("m", 0, b, subject)
    }

    #[test]
    fn iou_worked_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 1.0, 1.0)), 0.0);
        // touching edges share no interior
        assert_eq!(iou(&a, &bx(10.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn match_at_two_thresholds() {
        // 10x10 gt, prediction shifted so that IoU = 0.6: overlap 10*w / (200 - 10*w) = 0.6 -> w = 7.5
        let g = gt(bx(0.0, 0.0, 10.0, 10.0), "s");
        let p = det(bx(2.5, 0.0, 10.0, 10.0), 0.9);
        assert!((iou(&p.bbox, &g.bbox) - 0.6).abs() < 1e-12);
        assert_eq!(match_frame(&[&p], &[&g], 0.5), MatchCounts::new(1, 0, 0));
        assert_eq!(match_frame(&[&p], &[&g], 0.7), MatchCounts::new(0, 1, 1));
        assert_eq!(match_frame(&[], &[&g], 0.5), MatchCounts::new(0, 0, 1));
    }

    #[test]
    fn higher_score_claims_first() {
        let g = gt(bx(0.0, 0.0, 10.0, 10.0), "s");
        let weak_exact = det(bx(0.0, 0.0, 10.0, 10.0), 0.3);
        let strong_loose = det(bx(2.0, 0.0, 10.0, 10.0), 0.9);
        let c = match_frame(&[&weak_exact, &strong_loose], &[&g], 0.5);
        assert_eq!(c, MatchCounts::new(1, 1, 0));
        // at 0.7 the strong prediction (IoU 8/12) fails and leaves the gt to the exact one
        let c = match_frame(&[&weak_exact, &strong_loose], &[&g], 0.7);
        assert_eq!(c, MatchCounts::new(1, 1, 0));
    }

    #[test]
    fn prf1_conventions() {
        let m = prf1(MatchCounts::new(1, 1, 1));
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let m = prf1(MatchCounts::new(2, 0, 0));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf1(MatchCounts::new(0, 0, 0));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf1(MatchCounts::new(0, 0, 3));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn untagged_ground_truth_is_an_error() {
        let gts = GroundTruthStore::new(vec![gt(bx(0.0, 0.0, 1.0, 1.0), "s")]).unwrap();
        let err = evaluate_detections(&DetectionStore::default(), &gts, &IOU_THRESHOLDS, &MediaIndex::new());
        assert!(err.is_err());
    }

    #[test]
    fn thresholds_must_be_in_unit_interval() {
        assert!(check_thresholds(&[]).is_err());
        assert!(check_thresholds(&[0.0]).is_err());
        assert!(check_thresholds(&[1.1]).is_err());
        assert!(check_thresholds(&[1.0, 0.35]).is_ok());
    }
}
