//! Stacking-feasibility prediction: scene deltas, object embeddings, the
//! dataset model, the Ego/EgoObj networks and the experiment harness.

pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod harness;
pub mod models;
pub mod scene;
pub mod synth;

pub use error::{CoreError, Result};
