//! File formats, configuration and stage driver for the `mvh` command.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod fsio;
pub mod pgm;
pub mod pipeline;

pub use config::{load_config, parse_config, FileConfig};
pub use error::{AppError, AppResult};
