//! Experiment manifests, seed-parallel runners, result records and exports
//! behind the `nalu-lab` binary.

pub mod exports;
pub mod manifest;
pub mod records;
pub mod runner;
