//! Phase-aware video super-resolution for cine cardiac MRI.
//!
//! The crate provides the full desk-scale pipeline: a synthetic
//! beating-heart phantom and dataset container (`dataio`), an
//! acquisition-mimicking degradation pipeline (`degrade`), the cyclic
//! phase code (`phase`), the recurrent super-resolution network with
//! phase fusion and iterative residual refinement (`model`), the
//! deep-supervised objective (`loss`), cardiac-region quality metrics
//! (`metrics`), and the training/evaluation/benchmark tooling
//! (`trainer`, `report`, `plot`, `cli`).

pub mod cli;
pub mod dataio;
pub mod degrade;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod phase;
pub mod plot;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
