//! Auditing machine unlearning through model sensitivity.
//!
//! A model provider claims to have forgotten some training samples. The
//! auditor probe-trains copies of the original and the returned model on
//! class data it controls and measures how far the parameters move. Removing
//! data from a class raises that class's sensitivity, which exposes servers
//! that ignore requests, forget fewer samples than asked, or forget different
//! samples than the ones requested.
//!
//! Modules, bottom up:
//! - [`nnet`]: small MLPs with exact gradients and deterministic SGD
//! - [`datasets`]: labeled data with stable IDs, synthetic tasks, IDX loading
//! - [`unlearning`]: retraining, SISA sharding and amnesiac relabeling
//! - [`adversary`]: honest and dishonest server behaviours
//! - [`sensitivity`]: per-class sensitivity extraction
//! - [`metrics`]: class, volume and sample verification
//! - [`harness`]: seeded benchmark batteries and reports

pub mod adversary;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nnet;
pub mod seed;
pub mod sensitivity;
pub mod unlearning;
mod wire;

pub use error::{Error, Result};
