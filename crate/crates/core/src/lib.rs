//! Differentially private synthetic traces for an interest-disclosure API.
//!
//! The pipeline: simulate the weekly topics API over a synthetic population,
//! release pair-marginal statistics through a calibrated Gaussian mechanism,
//! fit a uniform mixture of softmax-slot types to those statistics by Adam,
//! sample synthetic topic-set sequences from the fitted model, and verify
//! that trace statistics and cross-site re-identification risk match the
//! source data.
//!
//! Everything downstream of the statistics release touches only the released
//! tables, so the model and every sample drawn from it inherit the
//! differential-privacy guarantee by post-processing.

pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod reid;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod tables;
pub mod taxonomy;
pub mod trainer;
pub mod validation;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use rng::SeededRng;
pub use taxonomy::{Taxonomy, TopicId, TopicSet, TopicSetSequence, Trace};
