pub mod bench;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod index;
pub mod models;
pub mod search;
pub mod series;
pub mod stats;
pub mod stopping;
pub mod summaries;

pub use error::{Error, Result};
