pub mod autodiff;
pub mod bandit;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod figures;
pub mod models;
pub mod seed;
pub mod training;
mod wire;

pub use error::{Error, Result};
