//! Command line, file formats and experiment sweep for `claimsrisk-core`.

pub mod cli;
pub mod error;
pub mod io;
pub mod manifest;
pub mod model_file;
pub mod output;
pub mod pipeline;
pub mod svg;
pub mod sweep;
