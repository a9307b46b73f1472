//! Desk-scale laboratory for process reward modeling as Q-value ranking.
//!
//! The crate provides a synthetic reasoning environment whose optimal
//! Q-values are exactly computable, the comparative ranking losses with
//! analytic gradients, a Monte-Carlo step-annotation pipeline, trainable
//! step scorers, and a best-of-n verification harness. Everything is
//! seed-deterministic: identical seeds give bit-identical corpora, models,
//! and metrics regardless of worker count.

pub mod annotate;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mdp;
pub mod numerics;
pub mod scorer;
pub mod seed;
pub mod shaping;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
