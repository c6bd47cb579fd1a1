//! Per-user post graphs, a dense GCN trained with self-supervised and
//! classification objectives, and four-axis personality prediction.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod hash;
pub mod labels;
pub mod matrix;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod providers;

pub use error::{Error, Result};
