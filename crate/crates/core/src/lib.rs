pub mod bench;
pub mod config;
pub mod error;
pub mod estimation;
pub mod features;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod subsets;
pub mod synthetic;

pub use error::{Error, Result};
