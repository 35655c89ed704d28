//! Confidence-threshold-reduction training at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff tensor engine, multi-layer
//! classifiers with multi-sample dropout, the loss family used for
//! confidence-threshold reduction (mask-guided divergence for natural
//! training, standard-deviation-augmented cross-entropy / KL for adversarial
//! training), gradient attacks with pluggable losses (FGSM, PGD, MIFGSM,
//! APGD and their STD-loss variants), training loops for natural and
//! adversarial methods, and a confidence-threshold analysis suite.

pub mod analysis;
pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
