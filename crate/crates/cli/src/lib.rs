//! Command-line front end and HTTP service for the factgate pipeline.

pub mod commands;
pub mod config;
pub mod server;
