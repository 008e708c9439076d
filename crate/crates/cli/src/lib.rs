//! Library side of the `stele` command: manifest loading, the pipeline stages and reports.

pub mod failure;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use failure::{Failure, FailureKind, Outcome};
pub use manifest::Manifest;
pub use report::Report;
