//! Library surface of the `opl` binary: config/artifact schemas and the
//! pipeline variants, split out so integration tests can drive the exact
//! code paths the CLI runs.

pub mod config;
pub mod pipeline;
