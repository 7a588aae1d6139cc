//! Deterministic simulation engine for hierarchical self-evolving agents.
//!
//! A run streams tasks through a router, lets the chosen agent attempt each
//! task with the tools it has, synthesizes new tools when a capability gap
//! shows up, and, once an agent keeps failing, trains a clone with one of
//! three evolution engines (curriculum bandit, reward-model policy gradient,
//! genetic algorithm). The clone replaces its original only when it beats it
//! on the validation split by a configured margin.
//!
//! Every random draw comes from a [`rng::SeedTree`] substream keyed by what
//! the draw is *for*, never by execution order, so parallel and sequential
//! evaluation produce bit-identical results and runs can be checkpointed and
//! resumed mid-stream.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agentcore;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod harness;
pub mod lifecycle;
pub mod rng;
pub mod router;
pub mod taskenv;
pub mod toolforge;

pub use error::{Error, Result};
