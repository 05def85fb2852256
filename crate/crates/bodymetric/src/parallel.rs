//! Multi-threaded scoring on fixed block boundaries.
//!
//! Work is split into blocks of [`SCORE_BLOCK_ROWS`] probes, the same
//! partition the sequential scorer uses, so the matrix is bitwise identical
//! for every thread count.

use bodymetric_core::identify::{ProbeSet, ScoreMatrix, Scorer, SCORE_BLOCK_ROWS};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Scores on a pool of `threads` workers (`0` lets rayon pick).
pub fn score_parallel(scorer: &Scorer, probes: &ProbeSet, threads: usize) -> Result<ScoreMatrix> {
    if probes.dim() != scorer.dim() {
        return Err(bodymetric_core::Error::DimensionMismatch { expected: scorer.dim(), found: probes.dim() }.into());
    }
    let d = scorer.dim();
    let g = scorer.subjects();
    let mut scores = vec![0.0; probes.len() * g];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| {
        probes
            .data()
            .par_chunks(SCORE_BLOCK_ROWS * d)
            .zip(scores.par_chunks_mut(SCORE_BLOCK_ROWS * g))
            .for_each(|(block, out)| scorer.score_block(block, out));
    });
    Ok(ScoreMatrix::new(probes.ids().to_vec(), scorer.subject_ids().to_vec(), scores)?)
}
