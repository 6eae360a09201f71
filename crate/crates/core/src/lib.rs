//! Repeated-exposure consumption dynamics from listening logs.
//!
//! The pipeline runs `exposure_log` (parse and sessionize plays) →
//! `curve` (per-exposure listening frequency with Wilson bounds) →
//! `probit` (quadratic-latent probit fit by maximum likelihood) →
//! `dynamics` (interest peak, curve shape, cohort comparison). `simgen`
//! produces seeded synthetic logs with a known latent interest.

pub mod cli;
pub mod curve;
pub mod dynamics;
pub mod error;
pub mod exposure_log;
pub mod plot;
pub mod probit;
pub mod report;
pub mod simgen;

pub use error::{Error, Result};
