//! Quantile Q-Learning (QQL) for offline reinforcement learning.
//!
//! QQL is a temperature-free variant of extreme Q-learning: instead of
//! tuning the Gumbel temperature `β`, it learns two value functions by
//! quantile regression at levels `α1 = 1 - e^-1` and `α2 = 1 - exp(-e^ω)`
//! and recovers a state-dependent `β(s) = (V̂(s) - V(s)) / ω`.
//!
//! The crate bundles the algorithm with an XQL baseline, behavior cloning,
//! toy environments with exact oracles, Gumbel fitting and testing tools,
//! and a seeded training harness. See the `examples/` directory for one
//! runnable program per capability.

pub mod error;
pub mod gumbel;
pub mod nnet;
pub mod envs;
pub mod losses;
pub mod data;
pub mod agents;
pub mod evalkit;
pub mod trainer;
pub mod cli;

pub use error::{Error, Result};
