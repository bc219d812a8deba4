//! Answer ranking for community Q&A dumps: clarifying-question generation,
//! heuristic labeling, a dual-CNN matcher and the evaluation harness.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod neural;
pub mod pipeline;
pub mod qboost;
pub mod ranker;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
