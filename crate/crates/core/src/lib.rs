//! Stack-augmented graph network that learns to execute recursive
//! depth-first search, with the classical oracle, dataset generation and
//! the training/evaluation harness.

pub mod config;
pub mod encdec;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hints;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod processor;
pub mod runner;
pub mod stack;

pub use error::{CoreError, Result};
