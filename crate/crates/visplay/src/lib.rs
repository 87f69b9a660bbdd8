//! Self-evolving questioner/reasoner co-training with GRPO on a synthetic
//! scene microworld.
//!
//! Two small autoregressive policies, cloned from one base model, co-evolve
//! through self-play iterations: the questioner learns to pose challenging
//! but well-formed questions about generated scenes, the reasoner learns to
//! answer them against its own majority-vote pseudo-labels, and a ground
//! truth oracle scores everything for reporting only.

pub mod config;
pub mod curation;
pub mod error;
pub mod grpo;
pub mod microworld;
pub mod persist;
pub mod policy;
pub mod rewards;
pub mod rngutil;
pub mod selfplay;
pub mod vocab;

pub use error::{Result, VisplayError};
