//! Static security analysis of GitHub Actions workflow configurations.
//!
//! Workflows are parsed into a typed model, their `uses:` references are
//! resolved against an offline metadata snapshot and checked against a
//! vulnerability database, and the results are turned into findings and
//! corpus statistics.

pub mod advisory;
pub mod analysis;
pub mod catalog;
pub mod metadata;
pub mod model;
pub mod report;
pub mod rules;
pub mod script_ref;
pub mod staleness;
pub mod stats;
