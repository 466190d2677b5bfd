//! Library surface of the command-line tool; the binary is a thin wrapper
//! so the acceptance tests can drive both the API and the executable.

pub mod config;
pub mod model_cfg;
pub mod ops;
pub mod output;
pub mod svg;
