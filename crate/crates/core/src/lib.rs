//! Desk-scale reward-model laboratory.
//!
//! A small transformer backbone exposes per-layer hidden states; reward heads
//! (progressive query attention and three baselines) turn them into scalar
//! rewards; the loss family covers Bradley-Terry, Bradley-Terry with win-tie
//! pairs, Rao-Kupper ties and a BCE penalty. Synthetic corpora with a latent
//! quality and an exploitable shortcut feature drive training, evaluation,
//! agreement statistics and a group-relative policy simulator that measures
//! reward hacking.

pub mod backbone;
pub mod cli;
pub mod dataflow;
pub mod error;
pub mod grposim;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod numkit;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
