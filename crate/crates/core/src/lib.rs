//! Measurement core for long-range whole-body biometric systems.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. It provides:
//!
//! * [`model`]: validated domain records and immutable stores.
//! * [`detect`]: IoU, greedy per-frame matching and precision/recall/F1
//!   reporting per dataset tag and pooled over all tags.
//! * [`losses`]: detector and recognition training objectives with their
//!   closed-form gradients, plus a finite-difference checker.
//! * [`sampling`]: seedable planners for dataset-balanced media draws,
//!   identity-balanced batches and strided frame windows.
//! * [`identify`]: gallery templates, similarity scoring and the closed-set
//!   (CMC, rank-k) and open-set (TAR@FAR, FNIR/FPIR) metric suite.
//!
//! The `std` feature (on by default) only enables runtime CPU feature
//! detection in the matrix kernel used for scoring.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod detect;
pub mod error;
pub mod identify;
pub mod losses;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod selfcheck;

pub use error::{Error, Result};

/// Defaults that mirror the published evaluation setup.
pub mod defaults {
    /// IoU thresholds used for detection F1 tables.
    pub const IOU_THRESHOLDS: [f64; 3] = [0.35, 0.5, 0.7];
    /// False-accept-rate operating points for TAR@FAR.
    pub const FAR_TARGETS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
    /// Ranks reported for identification accuracy.
    pub const RANKS: [usize; 4] = [1, 5, 10, 20];
    /// Smoothed-L1 transition point.
    pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
    /// Triplet hinge margin.
    pub const TRIPLET_MARGIN: f64 = 0.3;
    /// Probability clamp applied before logarithms.
    pub const PROB_EPSILON: f64 = 1e-7;
    /// Subjects per recognition batch.
    pub const BATCH_SUBJECTS: usize = 4;
    /// Media per subject in a recognition batch.
    pub const MEDIA_PER_SUBJECT: usize = 4;
    /// Test-time frame strides: the long one for indoor and close-range
    /// collections, the short one for everything else.
    pub const TEST_STRIDES: [u64; 2] = [150, 300];
}
