//! Runtime safety monitoring for small classifiers.
//!
//! The crate wraps a trainable feed-forward classifier with a set of diverse,
//! redundant error detectors (out-of-distribution, uncertainty, distribution
//! shift, universal-perturbation) and combines the binary verdicts of the
//! voter-eligible detectors through configurable k-out-of-n voting. An
//! evaluation harness quantifies the false-positive / false-negative
//! trade-offs of each voter configuration on seeded synthetic data.
//!
//! Layout:
//!
//! - [`model`]: the monitored MLP with softmax variants, a reject-class
//!   head, seeded training, MC-dropout sampling and ensemble combination.
//! - [`detectors`]: fit-then-score detectors (isolation forest, LOF,
//!   Mahalanobis, hidden-layer monitor, KL shift detector, LO-GLRT, ...),
//!   each producing a [`detectors::DetectorVerdict`].
//! - [`voter`]: 1oo3 / 2oo3 / general koon decision logic.
//! - [`harness`]: synthetic data generators, confusion metrics,
//!   overconfidence and error-cascade analyses, end-to-end evaluation.

pub mod dataset;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod seeding;
pub mod voter;

pub use error::{Error, Result};
