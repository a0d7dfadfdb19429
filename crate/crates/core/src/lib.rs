//! Desk-scale federated self-play fine-tuning simulator.
//!
//! The crate wires together a tabular autoregressive token model, a
//! feedback-driven interaction phase that sorts completions into win and
//! lose trace sets, a dual objective (likelihood on wins, confidence-gated
//! tail unlikelihood on loses), a warmup+cosine AdamW-style optimizer, and
//! a win-weighted federated averaging loop — plus a numerical lab that
//! audits the log-probability margin guarantee the dual objective induces.

pub mod config;
pub mod error;
pub mod federation;
pub mod interaction;
pub mod loss;
pub mod margin;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tasks;

pub use error::{Result, SpearError};
