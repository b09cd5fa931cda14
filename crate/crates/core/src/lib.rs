//! Open-set community diagnostics.
//!
//! Pipeline: [`ingest`] a sample manifest, [`scoring`] per-sample OOD scores,
//! draw seeded pseudo-communities ([`communities`]), sweep thresholds and pick
//! one per strategy ([`calibrate`]), then summarize across seeds and
//! settings ([`robustness`]). [`synthetic`] builds planted data sets for
//! testing the whole chain.

pub mod calibrate;
pub mod communities;
pub mod community_metrics;
pub mod ingest;
pub mod rng;
pub mod robustness;
pub mod sample_metrics;
pub mod scoring;
pub mod synthetic;
