pub mod config;
pub mod data;
pub mod encoders;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod objective;
pub mod optim;
pub mod persist;
pub mod rng;
pub mod srnn;

pub use error::{Error, Result};
