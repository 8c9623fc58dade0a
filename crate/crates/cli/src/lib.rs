//! Library surface of the experiment driver; the `isonet` binary is a thin
//! argument-parsing layer over these modules.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;
