pub mod batch;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod forecasters;
pub mod plot;
pub mod posterior;
pub mod prior;
pub mod quad;

pub use error::{Error, Result};
