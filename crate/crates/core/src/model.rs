//! Domain records, validated constructors and the immutable stores the
//! metric modules read from.
//!
//! Identifiers are plain strings compared byte for byte. Stores are built
//! once and expose only shared accessors, so they can be read from any
//! number of workers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(validation(format!("non-finite box coordinate ({x}, {y}, {w}, {h})")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(validation(format!("box width and height must be positive, got w={w} h={h}")));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from `(x1, y1, x2, y2)` corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(x, y, w, h)` as a plain vector, the layout the box-regression loss
    /// works on.
    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// `(media_id, frame)` key used to group records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameKey {
    pub media_id: String,
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub media_id: String,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub score: f64,
    pub dataset_tag: Option<String>,
}

impl DetectionRecord {
    pub fn new(media_id: impl Into<String>, frame: u64, bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(validation(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Self { media_id: media_id.into(), frame, bbox, score, dataset_tag: None })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.dataset_tag = Some(tag.into());
        self
    }

    pub fn key(&self) -> FrameKey {
        FrameKey { media_id: self.media_id.clone(), frame: self.frame }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub media_id: String,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub subject_id: String,
    pub dataset_tag: Option<String>,
}

impl GroundTruthRecord {
    pub fn new(media_id: impl Into<String>, frame: u64, bbox: BoundingBox, subject_id: impl Into<String>) -> Self {
        Self { media_id: media_id.into(), frame, bbox, subject_id: subject_id.into(), dataset_tag: None }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.dataset_tag = Some(tag.into());
        self
    }

    pub fn key(&self) -> FrameKey {
        FrameKey { media_id: self.media_id.clone(), frame: self.frame }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediaRecord {
    pub media_id: String,
    pub subject_id: String,
    pub dataset_tag: String,
    pub modality: Modality,
    pub frame_count: u64,
}

impl MediaRecord {
    pub fn new(
        media_id: impl Into<String>,
        subject_id: impl Into<String>,
        dataset_tag: impl Into<String>,
        modality: Modality,
        frame_count: u64,
    ) -> Result<Self> {
        let media_id = media_id.into();
        if frame_count == 0 {
            return Err(validation(format!("media {media_id}: frame_count must be positive")));
        }
        if modality == Modality::Image && frame_count != 1 {
            return Err(validation(format!("media {media_id}: an image has exactly one frame, got {frame_count}")));
        }
        Ok(Self { media_id, subject_id: subject_id.into(), dataset_tag: dataset_tag.into(), modality, frame_count })
    }
}

/// Detections grouped by frame.
#[derive(Debug, Clone, Default)]
pub struct DetectionStore {
    records: Vec<DetectionRecord>,
    frames: BTreeMap<FrameKey, Vec<usize>>,
}

impl DetectionStore {
    pub fn new(records: Vec<DetectionRecord>) -> Self {
        let mut frames: BTreeMap<FrameKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            frames.entry(r.key()).or_default().push(i);
        }
        Self { records, frames }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn records(&self) -> &[DetectionRecord] {
        &self.records
    }

    pub fn frames(&self) -> impl Iterator<Item = (&FrameKey, Vec<&DetectionRecord>)> {
        self.frames.iter().map(move |(k, idx)| (k, idx.iter().map(|&i| &self.records[i]).collect()))
    }

    pub fn frame(&self, key: &FrameKey) -> Vec<&DetectionRecord> {
        self.frames.get(key).map(|idx| idx.iter().map(|&i| &self.records[i]).collect()).unwrap_or_default()
    }
}

/// Ground truth grouped by frame; at most one box per subject per frame.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthStore {
    records: Vec<GroundTruthRecord>,
    frames: BTreeMap<FrameKey, Vec<usize>>,
}

impl GroundTruthStore {
    pub fn new(records: Vec<GroundTruthRecord>) -> Result<Self> {
        let mut frames: BTreeMap<FrameKey, Vec<usize>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert((r.media_id.as_str(), r.frame, r.subject_id.as_str())) {
                return Err(validation(format!(
                    "duplicate ground truth for subject {} in media {} frame {}",
                    r.subject_id, r.media_id, r.frame
                )));
            }
            frames.entry(r.key()).or_default().push(i);
        }
        Ok(Self { records, frames })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn records(&self) -> &[GroundTruthRecord] {
        &self.records
    }

    pub fn frames(&self) -> impl Iterator<Item = (&FrameKey, Vec<&GroundTruthRecord>)> {
        self.frames.iter().map(move |(k, idx)| (k, idx.iter().map(|&i| &self.records[i]).collect()))
    }

    pub fn frame(&self, key: &FrameKey) -> Vec<&GroundTruthRecord> {
        self.frames.get(key).map(|idx| idx.iter().map(|&i| &self.records[i]).collect()).unwrap_or_default()
    }
}

/// Maps media ids to dataset tags.
///
/// Tags can come from a media listing or from the `dataset_tag` carried on
/// detection and ground-truth lines. Conflicting tags for one media id are
/// rejected. Tags outside any predefined taxonomy are accepted as-is.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MediaIndex {
    tags: BTreeMap<String, String>,
}

impl MediaIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, media_id: &str, tag: &str) -> Result<()> {
        match self.tags.get(media_id) {
            Some(existing) if existing != tag => {
                Err(validation(format!("media {media_id} tagged both {existing} and {tag}")))
            }
            Some(_) => Ok(()),
            None => {
                self.tags.insert(media_id.into(), tag.into());
                Ok(())
            }
        }
    }

    pub fn from_media(media: &[MediaRecord]) -> Result<Self> {
        let mut index = Self::new();
        for m in media {
            index.insert(&m.media_id, &m.dataset_tag)?;
        }
        Ok(index)
    }

    /// Adds the tags carried on detection and ground-truth lines.
    pub fn absorb(&mut self, dets: &DetectionStore, gts: &GroundTruthStore) -> Result<()> {
        for d in dets.records() {
            if let Some(t) = &d.dataset_tag {
                self.insert(&d.media_id, t)?;
            }
        }
        for g in gts.records() {
            if let Some(t) = &g.dataset_tag {
                self.insert(&g.media_id, t)?;
            }
        }
        Ok(())
    }

    pub fn tag(&self, media_id: &str) -> Option<&str> {
        self.tags.get(media_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub media_id: String,
    pub vector: Vec<f64>,
}

/// Fixed-dimension embeddings addressed by media id.
///
/// Vectors are held in `f64`; the binary file format stores `f32`, so
/// values read from such a file round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    lookup: BTreeMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut ids = Vec::with_capacity(records.len());
        let mut data = Vec::with_capacity(records.len() * dim);
        let mut lookup = BTreeMap::new();
        for (i, r) in records.into_iter().enumerate() {
            if r.vector.len() != dim {
                return Err(validation(format!(
                    "embedding {} has dimension {}, store dimension is {dim}",
                    r.media_id,
                    r.vector.len()
                )));
            }
            if let Some(bad) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(validation(format!("embedding {} component {bad} is not finite", r.media_id)));
            }
            if lookup.insert(r.media_id.clone(), i).is_some() {
                return Err(validation(format!("duplicate embedding for media {}", r.media_id)));
            }
            data.extend_from_slice(&r.vector);
            ids.push(r.media_id);
        }
        Ok(Self { dim, ids, data, lookup })
    }

    /// Infers the dimension from the first record (0 for an empty list).
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        Self::new(dim, records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn contains(&self, media_id: &str) -> bool {
        self.lookup.contains_key(media_id)
    }

    pub fn get(&self, media_id: &str) -> Option<&[f64]> {
        self.lookup.get(media_id).map(|&i| self.vector_at(i))
    }

    pub fn id_at(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector_at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        (0..self.len()).map(move |i| (self.id_at(i), self.vector_at(i)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub subject_id: String,
    pub media_ids: Vec<String>,
    #[serde(default)]
    pub distractor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub probe_id: String,
    pub media_id: String,
    #[serde(default)]
    pub true_subject_id: Option<String>,
}

/// Gallery enrolment and probe list of one identification protocol.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProtocolManifest {
    pub gallery: Vec<GalleryEntry>,
    pub probes: Vec<ProbeEntry>,
}

impl ProtocolManifest {
    /// Column of the probe's mate in gallery order, if the probe is a mate
    /// search.
    pub fn mate_index(&self, probe: &ProbeEntry) -> Option<usize> {
        let truth = probe.true_subject_id.as_deref()?;
        self.gallery.iter().position(|g| g.subject_id == truth)
    }

    pub fn probe(&self, probe_id: &str) -> Option<&ProbeEntry> {
        self.probes.iter().find(|p| p.probe_id == probe_id)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    /// Referenced media ids with no embedding, sorted and deduplicated.
    pub missing_media: Vec<String>,
    pub mate_probes: Vec<String>,
    pub non_mate_probes: Vec<String>,
    pub gallery_subjects: usize,
    pub distractor_count: usize,
    pub duplicate_gallery_subjects: Vec<String>,
    pub duplicate_probe_ids: Vec<String>,
    /// Probes whose true subject is enrolled as a distractor.
    pub distractor_mates: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.missing_media.is_empty()
            && self.duplicate_gallery_subjects.is_empty()
            && self.duplicate_probe_ids.is_empty()
            && self.distractor_mates.is_empty()
    }
}

/// Cross-checks a manifest against an embedding store. Never fails; every
/// problem found is listed in the report.
pub fn validate_protocol(manifest: &ProtocolManifest, embeddings: &EmbeddingStore) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut missing = BTreeSet::new();
    let mut subjects: BTreeMap<&str, bool> = BTreeMap::new();
    let mut dup_subjects = BTreeSet::new();

    for g in &manifest.gallery {
        if subjects.insert(&g.subject_id, g.distractor).is_some() {
            dup_subjects.insert(g.subject_id.clone());
        }
        if g.distractor {
            report.distractor_count += 1;
        }
        for m in &g.media_ids {
            if !embeddings.contains(m) {
                missing.insert(m.clone());
            }
        }
    }
    report.gallery_subjects = manifest.gallery.len();

    let mut probe_ids = BTreeSet::new();
    let mut dup_probes = BTreeSet::new();
    for p in &manifest.probes {
        if !probe_ids.insert(p.probe_id.as_str()) {
            dup_probes.insert(p.probe_id.clone());
        }
        if !embeddings.contains(&p.media_id) {
            missing.insert(p.media_id.clone());
        }
        match p.true_subject_id.as_deref().and_then(|s| subjects.get(s)) {
            Some(&is_distractor) => {
                report.mate_probes.push(p.probe_id.clone());
                if is_distractor {
                    report.distractor_mates.push(p.probe_id.clone());
                }
            }
            None => report.non_mate_probes.push(p.probe_id.clone()),
        }
    }

    report.missing_media = missing.into_iter().collect();
    report.duplicate_gallery_subjects = dup_subjects.into_iter().collect();
    report.duplicate_probe_ids = dup_probes.into_iter().collect();
    report
}

/// Hyper-parameters of the training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub margin: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: crate::defaults::SMOOTH_L1_BETA,
            margin: crate::defaults::TRIPLET_MARGIN,
            epsilon: crate::defaults::PROB_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Validation(format!("margin must be non-negative, got {}", self.margin)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Validation(format!("epsilon must lie in (0, 0.5), got {}", self.epsilon)));
        }
        Ok(())
    }
}
