//! Seeded planners: dataset-balanced media draws, identity-balanced
//! `n × k` batches, and strided frame windows.
//!
//! All randomness flows through [`PlanRng`], so a plan is a pure function
//! of its inputs and seed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{validation, Error, Result};
use crate::model::MediaRecord;
use crate::rng::PlanRng;

/// Per-dataset and per-item sampling probabilities.
///
/// Each item of dataset `dᵢ` gets weight `1/|dᵢ|`; after normalising over
/// all items every dataset carries the same total mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetWeights {
    per_dataset: BTreeMap<String, f64>,
    /// Probability of one item of each dataset (all items of a dataset share it).
    item_probability: BTreeMap<String, f64>,
    members: BTreeMap<String, Vec<String>>,
}

impl DatasetWeights {
    /// Weights over explicit members, keyed by dataset tag.
    pub fn from_members(members: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyDataset("no datasets given".into()));
        }
        if let Some((tag, _)) = members.iter().find(|(_, m)| m.is_empty()) {
            return Err(Error::EmptyDataset(format!("dataset {tag} has no items")));
        }
        let datasets = members.len() as f64;
        let per_dataset = members.keys().map(|t| (t.clone(), 1.0 / datasets)).collect();
        let item_probability = members.iter().map(|(t, m)| (t.clone(), 1.0 / (m.len() as f64 * datasets))).collect();
        Ok(Self { per_dataset, item_probability, members })
    }

    /// Groups media by dataset tag, keeping input order within each tag.
    pub fn from_media(media: &[MediaRecord]) -> Result<Self> {
        let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for m in media {
            members.entry(m.dataset_tag.clone()).or_default().push(m.media_id.clone());
        }
        Self::from_members(members)
    }

    pub fn per_dataset(&self) -> &BTreeMap<String, f64> {
        &self.per_dataset
    }

    pub fn members(&self) -> &BTreeMap<String, Vec<String>> {
        &self.members
    }

    /// Probability of drawing one particular item of `tag`.
    pub fn item_probability(&self, tag: &str) -> Option<f64> {
        self.item_probability.get(tag).copied()
    }

    /// `(media_id, probability)` for every item, in tag then member order.
    pub fn per_item(&self) -> impl Iterator<Item = (&str, f64)> {
        self.members.iter().flat_map(move |(t, m)| {
            let p = self.item_probability[t];
            m.iter().map(move |id| (id.as_str(), p))
        })
    }

    pub fn dataset_of(&self, media_id: &str) -> Option<&str> {
        self.members.iter().find(|(_, m)| m.iter().any(|x| x == media_id)).map(|(t, _)| t.as_str())
    }
}

/// Balanced weights for datasets known only by size. Item ids are
/// synthesised as `"{tag}#{index}"`.
pub fn dataset_balanced_weights(sizes: &BTreeMap<String, usize>) -> Result<DatasetWeights> {
    if let Some((tag, _)) = sizes.iter().find(|(_, &n)| n == 0) {
        return Err(Error::EmptyDataset(format!("dataset {tag} has size 0")));
    }
    let members = sizes.iter().map(|(t, &n)| (t.clone(), (0..n).map(|i| format!("{t}#{i}")).collect())).collect();
    DatasetWeights::from_members(members)
}

/// `count` independent draws from the per-item distribution.
pub fn sample_media(weights: &DatasetWeights, count: usize, seed: u64) -> Vec<String> {
    let mut rng = PlanRng::new(seed);
    sample_media_with(weights, count, &mut rng)
}

pub fn sample_media_with(weights: &DatasetWeights, count: usize, rng: &mut PlanRng) -> Vec<String> {
    let items: Vec<(&str, f64)> = weights.per_item().collect();
    let mut cdf = Vec::with_capacity(items.len());
    let mut acc = 0.0;
    for (_, p) in &items {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    (0..count)
        .map(|_| {
            let u = rng.unit_f64() * total;
            let i = cdf.partition_point(|&c| c <= u).min(items.len() - 1);
            String::from(items[i].0)
        })
        .collect()
}

/// Identity-balanced batches: `n` subjects, `k` media each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchPlan {
    pub n: usize,
    pub k: usize,
    /// Each batch lists `n·k` media ids, subject by subject.
    pub batches: Vec<Vec<String>>,
    /// Subject of each `k`-run in the matching batch.
    pub subjects: Vec<Vec<String>>,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.n * self.k
    }
}

/// Builds `num_batches` batches from a subject → media index.
///
/// Subjects are drawn uniformly without replacement; media are drawn
/// without replacement when a subject has at least `k` of them and with
/// replacement otherwise.
pub fn pk_batches(
    index: &BTreeMap<String, Vec<String>>,
    n: usize,
    k: usize,
    num_batches: usize,
    seed: u64,
) -> Result<BatchPlan> {
    let mut rng = PlanRng::new(seed);
    pk_batches_with(index, n, k, num_batches, &mut rng)
}

pub fn pk_batches_with(
    index: &BTreeMap<String, Vec<String>>,
    n: usize,
    k: usize,
    num_batches: usize,
    rng: &mut PlanRng,
) -> Result<BatchPlan> {
    if n < 2 || k < 2 {
        return Err(validation(format!("n and k must both be at least 2, got n={n} k={k}")));
    }
    let subjects: Vec<&String> = index.iter().filter(|(_, m)| !m.is_empty()).map(|(s, _)| s).collect();
    if subjects.len() < n {
        return Err(Error::Infeasible { needed: n, available: subjects.len() });
    }

    let mut batches = Vec::with_capacity(num_batches);
    let mut batch_subjects = Vec::with_capacity(num_batches);
    let mut pool = subjects.clone();
    for _ in 0..num_batches {
        pool.copy_from_slice(&subjects);
        rng.partial_shuffle(&mut pool, n);
        let mut batch = Vec::with_capacity(n * k);
        for s in &pool[..n] {
            let media = &index[*s];
            if media.len() >= k {
                let mut order: Vec<usize> = (0..media.len()).collect();
                rng.partial_shuffle(&mut order, k);
                batch.extend(order[..k].iter().map(|&i| media[i].clone()));
            } else {
                batch.extend((0..k).map(|_| media[rng.index(media.len())].clone()));
            }
        }
        batches.push(batch);
        batch_subjects.push(pool[..n].iter().map(|s| (*s).clone()).collect());
    }
    Ok(BatchPlan { n, k, batches, subjects: batch_subjects })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Random consecutive run of `T` strided frames, zero-padded if short.
    Train,
    /// Every strided frame; `T` is ignored.
    Test,
    /// `min(T, |S|)` strided frames chosen uniformly without replacement,
    /// kept in temporal order and padded. With stride 1 and `T = 5` this is
    /// the "five random frames per video" detector-training draw.
    UniformSubset,
}

/// Source-frame indices of one clip; `-1` marks padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameWindow {
    pub indices: Vec<i64>,
    pub mask: Vec<u8>,
}

impl FrameWindow {
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

pub fn frame_window(frame_count: u64, stride: u64, window: usize, mode: WindowMode, seed: u64) -> Result<FrameWindow> {
    let mut rng = PlanRng::new(seed);
    frame_window_with(frame_count, stride, window, mode, &mut rng)
}

pub fn frame_window_with(
    frame_count: u64,
    stride: u64,
    window: usize,
    mode: WindowMode,
    rng: &mut PlanRng,
) -> Result<FrameWindow> {
    if frame_count == 0 || stride == 0 || window == 0 {
        return Err(validation(format!(
            "frame_count, stride and window must be positive (got {frame_count}, {stride}, {window})"
        )));
    }
    let strided: Vec<i64> = (0..frame_count).step_by(stride as usize).map(|f| f as i64).collect();
    let picked: Vec<i64> = match mode {
        WindowMode::Test => strided,
        WindowMode::Train if strided.len() > window => {
            let start = rng.index(strided.len() - window + 1);
            strided[start..start + window].to_vec()
        }
        WindowMode::Train => strided,
        WindowMode::UniformSubset => {
            let mut pos: Vec<usize> = (0..strided.len()).collect();
            let take = window.min(strided.len());
            rng.partial_shuffle(&mut pos, take);
            let mut chosen = pos[..take].to_vec();
            chosen.sort_unstable();
            chosen.into_iter().map(|i| strided[i]).collect()
        }
    };
    let total = if mode == WindowMode::Test { picked.len() } else { window };
    let mut indices = picked;
    let mut mask = vec![1u8; indices.len()];
    indices.resize(total, -1);
    mask.resize(total, 0);
    Ok(FrameWindow { indices, mask })
}

/// Test-time stride for a dataset tag: one frame in 300 for the indoor and
/// close-range collections, one in 150 elsewhere.
pub fn default_test_stride(tag: &str) -> u64 {
    match tag {
        "struct" | "rand" | "close_range" => 300,
        _ => 150,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(t, n)| (String::from(*t), *n)).collect()
    }

    #[test]
    fn balanced_weights_by_hand() {
        let w = dataset_balanced_weights(&sizes(&[("A", 1), ("B", 3)])).unwrap();
        assert_eq!(w.per_dataset()["A"], 0.5);
        assert_eq!(w.per_dataset()["B"], 0.5);
        assert_eq!(w.item_probability("A"), Some(0.5));
        assert!((w.item_probability("B").unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let w = dataset_balanced_weights(&sizes(&[("A", 2), ("B", 2)])).unwrap();
        assert!(w.per_item().all(|(_, p)| p == 0.25));
        assert!(matches!(dataset_balanced_weights(&sizes(&[("A", 0), ("B", 3)])), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn single_item_repeats() {
        let w = dataset_balanced_weights(&sizes(&[("only", 1)])).unwrap();
        let draws = sample_media(&w, 5, 9);
        assert!(draws.iter().all(|d| d == "only#0"));
    }

    #[test]
    fn short_subject_repeats_media() {
        let mut index = BTreeMap::new();
        index.insert("a".into(), vec!["a1".into(), "a2".into()]);
        index.insert("b".into(), (0..6).map(|i| format!("b{i}")).collect());
        let plan = pk_batches(&index, 2, 4, 3, 1).unwrap();
        for batch in &plan.batches {
            assert_eq!(batch.len(), 8);
            assert_eq!(batch.iter().filter(|m| m.starts_with('a')).count(), 4);
            let mut b: Vec<_> = batch.iter().filter(|m| m.starts_with('b')).collect();
            b.sort();
            b.dedup();
            assert_eq!(b.len(), 4);
        }
    }

    #[test]
    fn too_few_subjects() {
        let index: BTreeMap<String, Vec<String>> = (0..3).map(|i| (format!("s{i}"), vec![format!("m{i}")])).collect();
        assert_eq!(pk_batches(&index, 5, 2, 1, 0), Err(Error::Infeasible { needed: 5, available: 3 }));
        assert!(pk_batches(&index, 1, 2, 1, 0).is_err());
    }

    #[test]
    fn test_mode_takes_every_stride() {
        let w = frame_window(900, 300, 2, WindowMode::Test, 0).unwrap();
        assert_eq!(w.indices, vec![0, 300, 600]);
        assert_eq!(w.mask, vec![1, 1, 1]);
    }

    #[test]
    fn train_mode_pads_short_clips() {
        let w = frame_window(9, 3, 5, WindowMode::Train, 0).unwrap();
        assert_eq!(w.indices, vec![0, 3, 6, -1, -1]);
        assert_eq!(w.mask, vec![1, 1, 1, 0, 0]);
        let still = frame_window(1, 300, 5, WindowMode::Train, 0).unwrap();
        assert_eq!(still.indices, vec![0, -1, -1, -1, -1]);
        assert_eq!(still.valid(), 1);
    }

    #[test]
    fn train_mode_takes_consecutive_run() {
        for seed in 0..50 {
            let w = frame_window(100, 10, 4, WindowMode::Train, seed).unwrap();
            assert_eq!(w.valid(), 4);
            assert!(w.indices.windows(2).all(|p| p[1] - p[0] == 10));
        }
    }

    #[test]
    fn uniform_subset_is_sorted() {
        let w = frame_window(40, 1, 5, WindowMode::UniformSubset, 3).unwrap();
        assert_eq!(w.valid(), 5);
        assert!(w.indices.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn stride_defaults() {
        assert_eq!(default_test_stride("struct"), 300);
        assert_eq!(default_test_stride("close_range"), 300);
        assert_eq!(default_test_stride("500m"), 150);
        assert_eq!(default_test_stride("uav"), 150);
    }
}
