//! Sequence-model benchmark for identifying users from VR head and controller
//! motion.
//!
//! The pipeline runs raw poses through body-relative preprocessing and a
//! temporal encoding, cuts fixed-length windows, trains one of eight
//! classifier architectures (including diagonal and MIMO state space models)
//! and scores it with rank-based metrics over growing amounts of test data.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod oracles;
pub mod preprocess;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};
