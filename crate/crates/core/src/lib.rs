//! Caption-guided face recognition: stand-in encoders, textual feature
//! refinement, contextual fusion, two-phase training, synthetic data and
//! biometric evaluation.

pub mod cfam;
pub mod config;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod selftest;
pub mod tfrm;
pub mod trainer;

pub use config::Config;
pub use error::{CgfrError, Result};
