//! Zero-shot cross-domain graph anomaly detection with a persistent dictionary
//! of normal node patterns.

pub mod align;
pub mod cli;
pub mod config;
pub mod dictionary;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fsio;
pub mod graph;
pub mod numerics;
pub mod par;
pub mod reconstruction;
pub mod streams;
pub mod training;

pub use error::{Error, Result};
