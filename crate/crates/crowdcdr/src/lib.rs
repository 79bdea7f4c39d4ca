//! File formats, configuration, run manifests and the `crowdcdr` command.

pub mod cli;
pub mod config;
pub mod io;
pub mod manifest;
