pub mod error;
pub mod feature_store;
pub mod harness;
pub mod models;
pub mod numcore;
pub mod prior_graph;

pub use error::{Error, Result};
