//! Command-line entry points and the HTTP service for progressive k-NN
//! queries.

pub mod app;
pub mod cli;
pub mod engine;
