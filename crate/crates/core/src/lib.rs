//! Deterministic federated-learning simulator.
//!
//! Participants train a small dense classifier on private tabular shards and
//! a server combines their parameters by sample-weighted averaging. Uploads
//! travel in the clear, after DP-SGD local training, or sealed with a
//! logistic-map XOR keystream. A missing column at one
//! participant can be imputed from a donor's encrypted feature summary.

pub mod cipher;
pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
