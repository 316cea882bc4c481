//! Capacity-aware multimodal learning on synthetic Gaussian data.
//!
//! The pipeline estimates an information budget per modality from
//! unimodal pretraining ([`budget`]), aligns weak modalities to
//! anchor-modality class prototypes ([`align`]), fuses modality features with
//! prior- and uncertainty-weighted gating ([`fusion`]), and blends both
//! objectives over training ([`train`]). [`harness`] runs the benchmark
//! experiments.

pub mod align;
pub mod budget;
pub mod data;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod kv;
pub mod model;
pub mod nn;
pub mod report;
pub mod train;

pub use error::{Error, Result};
