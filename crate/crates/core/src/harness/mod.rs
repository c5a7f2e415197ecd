//! Configuration, manufactured sources, experiment drivers and output writers.

pub mod config;
pub mod experiments;
pub mod output;
pub mod sources;

pub use config::{RunConfig, SourceSpec};
pub use experiments::*;
