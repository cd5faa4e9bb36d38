pub mod autodiff;
pub mod body;
pub mod check;
pub mod cli;
pub mod config;
pub mod disc;
pub mod error;
pub mod fields;
pub mod math;
pub mod params;
pub mod rays;
pub mod render;
pub mod text;
pub mod train;
pub mod rng;

pub use error::{Error, Result};
