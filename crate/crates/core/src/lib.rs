//! Machine unlearning for small tabular classifiers.
//!
//! The crate trains fully-connected networks ([`nn`]), estimates diagonal
//! Fisher importances ([`fisher`]), removes a forget set's influence with
//! selective synaptic dampening and its adaptive variant ([`unlearn`]),
//! measures residual memorization with a membership-inference attack
//! ([`mia`]) and runs the label-error correction study ([`harness`]).
//!
//! Per-sample work (gradients, losses, scenarios) runs on rayon when the
//! `parallel` feature is enabled. Reductions use a fixed chunk order, so
//! outputs are bitwise identical with and without it.

pub mod data;
pub mod error;
pub mod fisher;
pub mod format;
pub mod harness;
pub mod mia;
pub mod nn;
pub mod par;
pub mod stats;
pub mod unlearn;

pub use error::{Error, Result};
