//! Graph learning toolkit for network intrusion detection.
//!
//! Tabular flow records are turned into feature-similarity graphs, optionally
//! augmented, and classified by a family of graph neural networks built on a
//! small reverse-mode autodiff core.

pub mod bench;
pub mod gnn;
pub mod graphkit;
pub mod numcore;
pub mod pipeline;
pub mod rng;
pub mod trainer;
