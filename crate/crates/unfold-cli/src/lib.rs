//! Library face of the CLI: file formats and report assembly, shared with
//! the integration tests.

pub mod io;
pub mod report;
