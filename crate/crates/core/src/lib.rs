pub mod cli;
pub mod config;
pub mod error;
pub mod hermite;
pub mod hierarchy;
pub mod kernel;
pub mod loss;
pub mod mat;
pub mod metrics;
pub mod poly;
pub mod ptf;
pub mod resnet;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
