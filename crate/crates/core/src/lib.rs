//! Cleaning pipeline turning raw TED award-notice tables into the FOPPA
//! relational database.
//!
//! The stages run in this order: [`ingest`] parses the raw CSV and splits
//! jointly described agents, [`criteria`] repairs award criteria,
//! [`normalize`] cleans names and addresses, [`identify`] recovers missing
//! SIRETs from a SIRENE-style [`registry`], [`merge`] clusters the remaining
//! occurrences and resolves one identifier per cluster, and [`emit`] writes
//! the six output tables. [`evaluate`] scores the identification and
//! clustering steps against known identifiers.
//!
//! [`pipeline`] glues the stages together through on-disk checkpoints.

pub mod config;
pub mod criteria;
pub mod emit;
pub mod error;
pub mod evaluate;
pub mod identify;
pub mod ingest;
pub mod merge;
pub mod normalize;
pub mod pipeline;
pub mod registry;
pub mod synth;
mod text;

pub use error::{Error, Result};
pub use registry::{Identifier, Siret};
