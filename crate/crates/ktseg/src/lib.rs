//! File formats, pipeline stages and the `ktseg` command line on top of
//! [`ktseg_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod synthio;

pub use error::{KtError, Result};
pub use ktseg_core as core;
