//! Gallery templates, probe-vs-gallery scoring and the identification
//! metric suite.
//!
//! Conventions shared by every metric:
//!
//! * Higher scores mean more similar, for both metrics.
//! * A mate's rank is pessimistic: every other gallery entry scoring at
//!   least as high as the mate is ranked ahead of it.
//! * Verification accepts a pair iff `score > τ`, where `τ` is an order
//!   statistic of the impostor scores (no interpolation).
//! * Open-set search raises an alarm iff the top gallery score is `≥ τ`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, protocol, Error, Result};
use crate::model::{EmbeddingStore, ProtocolManifest};

/// Probe rows scored per kernel call. Fixed so that parallel callers that
/// split work on block boundaries reproduce the sequential result bit for
/// bit.
pub const SCORE_BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Normalise each media vector, average, renormalise.
    #[default]
    Mean,
    /// Keep every normalised media vector; a probe's score against the
    /// subject is its best score over them.
    MaxScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    /// `-‖p̂ − t‖` between the normalised probe and a unit template.
    NegEuclidean,
}

/// Unit-norm representation of one enrolled subject.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectTemplate {
    pub subject_id: String,
    /// One vector for [`Aggregation::Mean`], one per media otherwise.
    pub vectors: Vec<Vec<f64>>,
    pub media_count: usize,
}

impl SubjectTemplate {
    pub fn vector(&self) -> &[f64] {
        &self.vectors[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

pub fn aggregate_gallery(subject_id: &str, media_vectors: &[&[f64]], method: Aggregation) -> Result<SubjectTemplate> {
    let first =
        media_vectors.first().ok_or_else(|| Error::Validation(format!("subject {subject_id} has no media vectors")))?;
    let dim = first.len();
    if dim == 0 {
        return Err(domain("zero-dimensional embedding"));
    }
    let mut unit = Vec::with_capacity(media_vectors.len());
    for v in media_vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
        }
        unit.push(normalized(v).ok_or_else(|| Error::DegenerateTemplate(subject_id.into()))?);
    }
    let vectors = match method {
        Aggregation::MaxScore => unit,
        Aggregation::Mean => {
            let mut mean = vec![0.0; dim];
            for u in &unit {
                for (m, x) in mean.iter_mut().zip(u) {
                    *m += x;
                }
            }
            let k = unit.len() as f64;
            mean.iter_mut().for_each(|m| *m /= k);
            if norm(&mean) < 1e-12 {
                return Err(Error::DegenerateTemplate(subject_id.into()));
            }
            vec![normalized(&mean).ok_or_else(|| Error::DegenerateTemplate(subject_id.into()))?]
        }
    };
    Ok(SubjectTemplate { subject_id: subject_id.into(), vectors, media_count: media_vectors.len() })
}

/// Templates for every gallery entry of a manifest, in manifest order.
pub fn build_gallery(
    manifest: &ProtocolManifest,
    store: &EmbeddingStore,
    method: Aggregation,
) -> Result<Vec<SubjectTemplate>> {
    manifest
        .gallery
        .iter()
        .map(|g| {
            let vectors = g
                .media_ids
                .iter()
                .map(|m| store.get(m).ok_or_else(|| protocol(format!("gallery media {m} has no embedding"))))
                .collect::<Result<Vec<_>>>()?;
            aggregate_gallery(&g.subject_id, &vectors, method)
        })
        .collect()
}

/// Probe embeddings, one row per probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl ProbeSet {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) || norm(&v) == 0.0 {
                return Err(domain(format!("probe {id} has a zero or non-finite vector")));
            }
            data.extend_from_slice(&v);
            ids.push(id);
        }
        Ok(Self { ids, dim, data })
    }

    /// One row per manifest probe, labelled by probe id.
    pub fn from_manifest(manifest: &ProtocolManifest, store: &EmbeddingStore) -> Result<Self> {
        let rows = manifest
            .probes
            .iter()
            .map(|p| {
                store
                    .get(&p.media_id)
                    .map(|v| (p.probe_id.clone(), v.to_vec()))
                    .ok_or_else(|| protocol(format!("probe media {} has no embedding", p.media_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(store.dim(), rows)
    }

    /// Every record of a store, labelled by media id.
    pub fn from_store(store: &EmbeddingStore) -> Result<Self> {
        Self::new(store.dim(), store.iter().map(|(id, v)| (id.into(), v.to_vec())).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    /// Row-major probe data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Probe × gallery similarity scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<String>,
    cols: Vec<String>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != rows.len() * cols.len() {
            return Err(domain(format!(
                "score buffer has {} values for a {}x{} matrix",
                scores.len(),
                rows.len(),
                cols.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(domain("non-finite score"));
        }
        Ok(Self { rows, cols, scores })
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }
    pub fn cols(&self) -> &[String] {
        &self.cols
    }
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.cols.len();
        &self.scores[i * g..(i + 1) * g]
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols.len() + j]
    }

    /// Same matrix restricted to the rows that are mate searches.
    pub fn mate_rows(&self, manifest: &ProtocolManifest) -> Result<Self> {
        let mates = resolve_mates(self, manifest)?;
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for (i, m) in mates.iter().enumerate() {
            if m.is_some() {
                rows.push(self.rows[i].clone());
                scores.extend_from_slice(self.row(i));
            }
        }
        Ok(Self { rows, cols: self.cols.clone(), scores })
    }
}

/// Flattened, normalised gallery ready for blocked scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    metric: Metric,
    dim: usize,
    subject_ids: Vec<String>,
    /// One row per stored template vector.
    vectors: Vec<f64>,
    owner: Vec<usize>,
    one_per_subject: bool,
}

impl Scorer {
    pub fn new(gallery: &[SubjectTemplate], metric: Metric) -> Result<Self> {
        let first = gallery.first().ok_or_else(|| protocol("empty gallery"))?;
        let dim = first.dim();
        let mut vectors = Vec::new();
        let mut owner = Vec::new();
        for (j, t) in gallery.iter().enumerate() {
            for v in &t.vectors {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
                }
                vectors.extend_from_slice(v);
                owner.push(j);
            }
        }
        Ok(Self {
            metric,
            dim,
            subject_ids: gallery.iter().map(|t| t.subject_id.clone()).collect(),
            one_per_subject: owner.len() == gallery.len(),
            vectors,
            owner,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn subjects(&self) -> usize {
        self.subject_ids.len()
    }
    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Scores a block of raw probe rows into `out` (`rows × subjects`).
    pub fn score_block(&self, probes: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let rows = probes.len() / d;
        let g = self.subjects();
        debug_assert_eq!(out.len(), rows * g);
        let mut unit = Vec::with_capacity(probes.len());
        for r in probes.chunks_exact(d) {
            let n = norm(r);
            unit.extend(r.iter().map(|x| x / n));
        }
        let to_score = |dot: f64| match self.metric {
            Metric::Cosine => dot.clamp(-1.0, 1.0),
            Metric::NegEuclidean => -libm::sqrt((2.0 - 2.0 * dot).max(0.0)),
        };
        if self.one_per_subject {
            self.dots(&unit, rows, out);
            out.iter_mut().for_each(|s| *s = to_score(*s));
            return;
        }
        let v = self.owner.len();
        let mut dots = vec![0.0; rows * v];
        self.dots(&unit, rows, &mut dots);
        for r in 0..rows {
            let row_out = &mut out[r * g..(r + 1) * g];
            row_out.iter_mut().for_each(|s| *s = f64::NEG_INFINITY);
            for (c, &dot) in dots[r * v..(r + 1) * v].iter().enumerate() {
                let s = to_score(dot);
                let slot = &mut row_out[self.owner[c]];
                if s > *slot {
                    *slot = s;
                }
            }
        }
    }

    /// `dest = unit (rows×d) · vectorsᵀ (d×v)`.
    fn dots(&self, unit: &[f64], rows: usize, dest: &mut [f64]) {
        let d = self.dim;
        let v = self.owner.len();
        assert!(unit.len() == rows * d && dest.len() == rows * v && self.vectors.len() == v * d);
        // SAFETY: the three buffers are exactly the sizes implied by the
        // dimensions and strides asserted above.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                v,
                1.0,
                unit.as_ptr(),
                d as isize,
                1,
                self.vectors.as_ptr(),
                1,
                d as isize,
                0.0,
                dest.as_mut_ptr(),
                v as isize,
                1,
            );
        }
    }

    /// Scores every probe, block by block.
    pub fn score(&self, probes: &ProbeSet) -> Result<ScoreMatrix> {
        if probes.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: probes.dim() });
        }
        let g = self.subjects();
        let mut scores = vec![0.0; probes.len() * g];
        for (block, out) in
            probes.data().chunks(SCORE_BLOCK_ROWS * self.dim).zip(scores.chunks_mut(SCORE_BLOCK_ROWS * g))
        {
            self.score_block(block, out);
        }
        ScoreMatrix::new(probes.ids().to_vec(), self.subject_ids.clone(), scores)
    }
}

/// Probe-by-gallery similarity matrix.
pub fn score(probes: &ProbeSet, gallery: &[SubjectTemplate], metric: Metric) -> Result<ScoreMatrix> {
    Scorer::new(gallery, metric)?.score(probes)
}

/// Mate column of every row, `None` for non-mate searches.
pub fn resolve_mates(matrix: &ScoreMatrix, manifest: &ProtocolManifest) -> Result<Vec<Option<usize>>> {
    let probes: BTreeMap<&str, Option<&str>> =
        manifest.probes.iter().map(|p| (p.probe_id.as_str(), p.true_subject_id.as_deref())).collect();
    let cols: BTreeMap<&str, usize> = matrix.cols().iter().enumerate().map(|(j, c)| (c.as_str(), j)).collect();
    matrix
        .rows()
        .iter()
        .map(|r| {
            let truth = probes.get(r.as_str()).ok_or_else(|| protocol(format!("row {r} is not a manifest probe")))?;
            Ok(truth.and_then(|t| cols.get(t).copied()))
        })
        .collect()
}

/// `1 + #{j ≠ mate : s_j ≥ s_mate}`.
pub fn pessimistic_rank(row: &[f64], mate: usize) -> usize {
    let s = row[mate];
    1 + row.iter().enumerate().filter(|&(j, &v)| j != mate && v >= s).count()
}

/// Pessimistic mate rank of every row; every row must be a mate search.
pub fn mate_ranks(matrix: &ScoreMatrix, manifest: &ProtocolManifest) -> Result<Vec<usize>> {
    if matrix.rows().is_empty() {
        return Err(protocol("no probes to evaluate"));
    }
    let mates = resolve_mates(matrix, manifest)?;
    mates
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let m = m.ok_or_else(|| protocol(format!("probe {} is a non-mate search", matrix.rows()[i])))?;
            Ok(pessimistic_rank(matrix.row(i), m))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }
}

/// Cumulative match characteristic for ranks `1..=max_rank`.
pub fn cmc(matrix: &ScoreMatrix, manifest: &ProtocolManifest, max_rank: usize) -> Result<Curve> {
    if max_rank == 0 {
        return Err(domain("max_rank must be at least 1"));
    }
    let ranks = mate_ranks(matrix, manifest)?;
    let mut hist = vec![0usize; max_rank + 1];
    for r in &ranks {
        if *r <= max_rank {
            hist[*r] += 1;
        }
    }
    let n = ranks.len() as f64;
    let mut acc = 0usize;
    let points = (1..=max_rank)
        .map(|r| {
            acc += hist[r];
            CurvePoint { x: r as f64, y: acc as f64 / n, threshold: None }
        })
        .collect();
    Ok(Curve { x_label: "Rank".into(), y_label: "Identification accuracy".into(), points })
}

/// Fraction of mate searches whose mate ranks within `k`.
pub fn rank_k_accuracy(matrix: &ScoreMatrix, manifest: &ProtocolManifest, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(domain("rank must be at least 1"));
    }
    let ranks = mate_ranks(matrix, manifest)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TarPoint {
    pub far_target: f64,
    /// `-∞` when the target admits every impostor.
    pub threshold: f64,
    pub tar: f64,
    pub achieved_far: f64,
}

/// Genuine and impostor scores of a protocol, sorted for threshold queries.
///
/// Genuine: each mate search against its mate's column. Impostor: every
/// search against every column that is not its mate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSplit {
    genuine_asc: Vec<f64>,
    impostor_desc: Vec<f64>,
}

impl ScoreSplit {
    pub fn new(matrix: &ScoreMatrix, manifest: &ProtocolManifest) -> Result<Self> {
        let mates = resolve_mates(matrix, manifest)?;
        let mut genuine = Vec::new();
        let mut impostor = Vec::with_capacity(matrix.scores().len());
        for (i, m) in mates.iter().enumerate() {
            let row = matrix.row(i);
            match *m {
                Some(c) => {
                    genuine.push(row[c]);
                    impostor.extend_from_slice(&row[..c]);
                    impostor.extend_from_slice(&row[c + 1..]);
                }
                None => impostor.extend_from_slice(row),
            }
        }
        if genuine.is_empty() {
            return Err(protocol("no genuine scores: the protocol has no mate searches"));
        }
        if impostor.is_empty() {
            return Err(protocol("no impostor scores"));
        }
        genuine.sort_unstable_by(f64::total_cmp);
        impostor.sort_unstable_by(|a, b| b.total_cmp(a));
        Ok(Self { genuine_asc: genuine, impostor_desc: impostor })
    }

    pub fn genuine_count(&self) -> usize {
        self.genuine_asc.len()
    }
    pub fn impostor_count(&self) -> usize {
        self.impostor_desc.len()
    }

    /// Operating point for one target false accept rate.
    ///
    /// With `m = ⌊f·N⌋`, the threshold is the `(m+1)`-th largest impostor
    /// score, so at most `m` impostors (those strictly above it) are
    /// accepted. When `m ≥ N` every score is accepted.
    pub fn at_far(&self, far_target: f64) -> Result<TarPoint> {
        if !(0.0..=1.0).contains(&far_target) {
            return Err(domain(format!("FAR target {far_target} outside [0, 1]")));
        }
        let n = self.impostor_desc.len();
        let m = libm::floor(far_target * n as f64) as usize;
        let threshold = if m < n { self.impostor_desc[m] } else { f64::NEG_INFINITY };
        let accepted_imp = self.impostor_desc.partition_point(|&s| s > threshold);
        let rejected_gen = self.genuine_asc.partition_point(|&s| s <= threshold);
        Ok(TarPoint {
            far_target,
            threshold,
            tar: (self.genuine_asc.len() - rejected_gen) as f64 / self.genuine_asc.len() as f64,
            achieved_far: accepted_imp as f64 / n as f64,
        })
    }

    pub fn tar_at_far(&self, far_targets: &[f64]) -> Result<Vec<TarPoint>> {
        far_targets.iter().map(|&f| self.at_far(f)).collect()
    }

    /// ROC as `(achieved FAR, TAR)` over the given targets, one point per
    /// distinct achieved FAR.
    pub fn roc(&self, far_targets: &[f64]) -> Result<Curve> {
        let mut pts = self.tar_at_far(far_targets)?;
        pts.sort_by(|a, b| a.achieved_far.total_cmp(&b.achieved_far).then(b.tar.total_cmp(&a.tar)));
        pts.dedup_by(|later, earlier| later.achieved_far == earlier.achieved_far);
        Ok(Curve {
            x_label: "False accept rate".into(),
            y_label: "True accept rate".into(),
            points: pts
                .into_iter()
                .map(|p| CurvePoint { x: p.achieved_far, y: p.tar, threshold: Some(p.threshold) })
                .collect(),
        })
    }
}

pub fn tar_at_far(matrix: &ScoreMatrix, manifest: &ProtocolManifest, far_targets: &[f64]) -> Result<Vec<TarPoint>> {
    ScoreSplit::new(matrix, manifest)?.tar_at_far(far_targets)
}

/// Log-spaced FAR grid (ten points per decade) down to the resolution of
/// `impostors` scores, merged with the reporting defaults.
pub fn default_roc_targets(impostors: usize) -> Vec<f64> {
    let mut out: Vec<f64> = crate::defaults::FAR_TARGETS.to_vec();
    for i in 0..=90 {
        let f = libm::pow(10.0, -(i as f64) / 10.0);
        if f * impostors as f64 >= 1.0 || i == 0 {
            out.push(f);
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSpec {
    List(Vec<f64>),
    /// Every distinct observed non-mate top score and mate score, plus `+∞`.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpenSetPoint {
    pub threshold: f64,
    pub fpir: f64,
    pub fnir: f64,
}

/// FPIR and FNIR at each threshold, in the order the thresholds were given
/// (descending for a sweep).
///
/// FPIR(τ): non-mate searches whose top score is `≥ τ`. FNIR(τ): mate
/// searches whose mate scores below `τ` or ranks beyond `rank_cap`.
pub fn open_set_points(
    matrix: &ScoreMatrix,
    manifest: &ProtocolManifest,
    thresholds: &ThresholdSpec,
    rank_cap: Option<usize>,
) -> Result<Vec<OpenSetPoint>> {
    if rank_cap == Some(0) {
        return Err(domain("rank cap must be at least 1"));
    }
    let mates = resolve_mates(matrix, manifest)?;
    let mut tops = Vec::new();
    let mut in_cap = Vec::new();
    let mut mate_scores = Vec::new();
    let mut beyond_cap = 0usize;
    for (i, m) in mates.iter().enumerate() {
        let row = matrix.row(i);
        match *m {
            Some(c) => {
                mate_scores.push(row[c]);
                if rank_cap.is_some_and(|cap| pessimistic_rank(row, c) > cap) {
                    beyond_cap += 1;
                } else {
                    in_cap.push(row[c]);
                }
            }
            None => tops.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        }
    }
    if tops.is_empty() {
        return Err(protocol("no non-mate searches"));
    }
    if mate_scores.is_empty() {
        return Err(protocol("no mate searches"));
    }
    tops.sort_unstable_by(f64::total_cmp);
    in_cap.sort_unstable_by(f64::total_cmp);

    let taus: Vec<f64> = match thresholds {
        ThresholdSpec::List(v) => v.clone(),
        ThresholdSpec::Sweep => {
            let mut v: Vec<f64> = tops.iter().chain(&mate_scores).copied().collect();
            v.push(f64::INFINITY);
            v.sort_unstable_by(|a, b| b.total_cmp(a));
            v.dedup();
            v
        }
    };
    let nn = tops.len() as f64;
    let nm = mate_scores.len() as f64;
    taus.into_iter()
        .map(|tau| {
            if tau.is_nan() {
                return Err(domain("NaN threshold"));
            }
            let alarms = tops.len() - tops.partition_point(|&s| s < tau);
            let misses = beyond_cap + in_cap.partition_point(|&s| s < tau);
            Ok(OpenSetPoint { threshold: tau, fpir: alarms as f64 / nn, fnir: misses as f64 / nm })
        })
        .collect()
}

/// FNIR against FPIR, sorted by FPIR with one point (the lowest FNIR) per
/// distinct FPIR.
pub fn fnir_fpir(
    matrix: &ScoreMatrix,
    manifest: &ProtocolManifest,
    thresholds: &ThresholdSpec,
    rank_cap: Option<usize>,
) -> Result<Curve> {
    let mut pts = open_set_points(matrix, manifest, thresholds, rank_cap)?;
    pts.sort_by(|a, b| a.fpir.total_cmp(&b.fpir).then(a.fnir.total_cmp(&b.fnir)));
    pts.dedup_by(|later, earlier| later.fpir == earlier.fpir);
    Ok(Curve {
        x_label: "False positive identification rate".into(),
        y_label: "False negative identification rate".into(),
        points: pts.into_iter().map(|p| CurvePoint { x: p.fpir, y: p.fnir, threshold: Some(p.threshold) }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GalleryEntry, ProbeEntry};
    use alloc::string::ToString;

    fn manifest(gallery: &[&str], probes: &[(&str, Option<&str>)]) -> ProtocolManifest {
        ProtocolManifest {
            gallery: gallery
                .iter()
                .map(|s| GalleryEntry { subject_id: s.to_string(), media_ids: vec![], distractor: false })
                .collect(),
            probes: probes
                .iter()
                .map(|(p, t)| ProbeEntry {
                    probe_id: p.to_string(),
                    media_id: p.to_string(),
                    true_subject_id: t.map(|t| t.to_string()),
                })
                .collect(),
        }
    }

    fn matrix(m: &ProtocolManifest, scores: &[f64]) -> ScoreMatrix {
        ScoreMatrix::new(
            m.probes.iter().map(|p| p.probe_id.clone()).collect(),
            m.gallery.iter().map(|g| g.subject_id.clone()).collect(),
            scores.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn aggregation_examples() {
        let t = aggregate_gallery("s", &[&[3.0, 4.0]], Aggregation::Mean).unwrap();
        assert_eq!(t.vector(), &[0.6, 0.8]);
        let t = aggregate_gallery("s", &[&[1.0, 0.0], &[0.0, 1.0]], Aggregation::Mean).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((t.vector()[0] - h).abs() < 1e-15 && (t.vector()[1] - h).abs() < 1e-15);
        let e = aggregate_gallery("s", &[&[1.0, 0.0], &[-1.0, 0.0]], Aggregation::Mean);
        assert_eq!(e, Err(Error::DegenerateTemplate("s".into())));
        let t = aggregate_gallery("s", &[&[1.0, 0.0], &[-2.0, 0.0]], Aggregation::MaxScore).unwrap();
        assert_eq!(t.vectors.len(), 2);
        assert!(aggregate_gallery("s", &[], Aggregation::Mean).is_err());
    }

    #[test]
    fn cosine_scores() {
        let g = vec![
            aggregate_gallery("a", &[&[1.0, 0.0]], Aggregation::Mean).unwrap(),
            aggregate_gallery("b", &[&[0.0, 2.0]], Aggregation::Mean).unwrap(),
        ];
        let p = ProbeSet::new(2, vec![("p".into(), vec![5.0, 0.0])]).unwrap();
        let m = score(&p, &g, Metric::Cosine).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        let m = score(&p, &g, Metric::NegEuclidean).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert!((m.get(0, 1) + core::f64::consts::SQRT_2).abs() < 1e-12);
        let bad = ProbeSet::new(3, vec![("p".into(), vec![1.0, 0.0, 0.0])]).unwrap();
        assert!(matches!(score(&bad, &g, Metric::Cosine), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn max_score_takes_best_media() {
        let g = vec![aggregate_gallery("a", &[&[1.0, 0.0], &[0.0, 1.0]], Aggregation::MaxScore).unwrap()];
        let p = ProbeSet::new(2, vec![("p".into(), vec![0.0, 3.0])]).unwrap();
        assert_eq!(score(&p, &g, Metric::Cosine).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn cmc_two_probe_example() {
        // p1's mate (a) is top; p2's mate (c) is third.
        let m = manifest(&["a", "b", "c"], &[("p1", Some("a")), ("p2", Some("c"))]);
        let s = matrix(&m, &[0.9, 0.2, 0.1, 0.8, 0.7, 0.3]);
        assert_eq!(cmc(&s, &m, 4).unwrap().ys(), vec![0.5, 0.5, 1.0, 1.0]);
        assert_eq!(rank_k_accuracy(&s, &m, 2).unwrap(), 0.5);
        assert_eq!(rank_k_accuracy(&s, &m, 3).unwrap(), 1.0);
    }

    #[test]
    fn ties_count_against_the_mate() {
        assert_eq!(pessimistic_rank(&[0.5, 0.5, 0.1], 0), 2);
        assert_eq!(pessimistic_rank(&[0.5, 0.4, 0.1], 0), 1);
    }

    #[test]
    fn cmc_rejects_non_mates() {
        let m = manifest(&["a"], &[("p1", Some("a")), ("p2", None)]);
        let s = matrix(&m, &[0.9, 0.1]);
        assert!(matches!(cmc(&s, &m, 1), Err(Error::Protocol(_))));
        let mates = s.mate_rows(&m).unwrap();
        assert_eq!(cmc(&mates, &m, 1).unwrap().ys(), vec![1.0]);
    }

    #[test]
    fn tar_worked_example() {
        // genuine {0.9, 0.5}; impostor {0.7, 0.1}
        let m = manifest(&["a", "b"], &[("p1", Some("a")), ("p2", Some("b"))]);
        let s = matrix(&m, &[0.9, 0.7, 0.1, 0.5]);
        let pts = tar_at_far(&s, &m, &[0.5, 0.01]).unwrap();
        assert_eq!((pts[0].threshold, pts[0].tar, pts[0].achieved_far), (0.1, 1.0, 0.5));
        assert_eq!((pts[1].threshold, pts[1].tar, pts[1].achieved_far), (0.7, 0.5, 0.0));
        let all = tar_at_far(&s, &m, &[1.0]).unwrap();
        assert_eq!((all[0].tar, all[0].achieved_far), (1.0, 1.0));
    }

    #[test]
    fn tar_zero_when_genuine_below_impostor() {
        let m = manifest(&["a", "b"], &[("p1", Some("a"))]);
        let s = matrix(&m, &[0.1, 0.9]);
        assert_eq!(tar_at_far(&s, &m, &[0.0]).unwrap()[0].tar, 0.0);
    }

    #[test]
    fn open_set_worked_example() {
        // mates score 0.9 and 0.4; non-mate tops 0.6 and 0.2
        let m = manifest(&["a", "b"], &[("p1", Some("a")), ("p2", Some("b")), ("n1", None), ("n2", None)]);
        let s = matrix(&m, &[0.9, 0.1, 0.5, 0.4, 0.6, 0.3, 0.2, 0.1]);
        let pts = open_set_points(&s, &m, &ThresholdSpec::List(vec![0.5, -1.0, 2.0]), None).unwrap();
        assert_eq!((pts[0].fpir, pts[0].fnir), (0.5, 0.5));
        assert_eq!((pts[1].fpir, pts[1].fnir), (1.0, 0.0));
        assert_eq!((pts[2].fpir, pts[2].fnir), (0.0, 1.0));
        // rank cap 1 turns the second mate into a miss at any threshold
        let capped = open_set_points(&s, &m, &ThresholdSpec::List(vec![0.5, -1.0]), Some(1)).unwrap();
        assert_eq!(capped[0].fnir, 0.5);
        assert_eq!(capped[1].fnir, 0.5);
    }

    #[test]
    fn open_set_needs_non_mates() {
        let m = manifest(&["a"], &[("p1", Some("a"))]);
        let s = matrix(&m, &[0.9]);
        assert!(matches!(fnir_fpir(&s, &m, &ThresholdSpec::Sweep, None), Err(Error::Protocol(_))));
    }

    #[test]
    fn roc_grid_reaches_resolution() {
        let g = default_roc_targets(1000);
        assert!(g.contains(&1e-3) && g.contains(&1.0));
        assert!(g.iter().all(|&f| f * 1000.0 >= 1.0 || f == 1e-4));
    }
}
