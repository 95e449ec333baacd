//! Command-line pipeline and HTTP service around `retrofit-core`.

pub mod commands;
pub mod server;
pub mod svg;
