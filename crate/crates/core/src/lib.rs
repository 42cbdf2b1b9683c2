//! Pathway-informed graph attention for gene expression dynamics.
//!
//! Genes are nodes of a relation-typed graph (activatory, inhibitory, self);
//! a multi-head attention model restricted to the permitted edges predicts
//! the next expression measurement from a sliding window of prior ones.
//! The crate also carries the synthetic p53 feedback-loop simulator, the
//! leave-one-condition-out harness, edge interventions and no-prior
//! interaction discovery.

pub mod dataset;
pub mod discovery;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod models;
pub mod report;
pub mod simulator;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
