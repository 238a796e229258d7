//! HTTP service and command-line front end for the diagnosis engine.

pub mod api;
pub mod cli;
