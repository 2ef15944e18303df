pub mod asymptotics;
pub mod capacity;
pub mod cli;
pub mod domain;
pub mod eigen;
pub mod multigrid;
pub mod noise;
pub mod error;
pub mod operator;
pub mod rng;
pub mod sparse;
pub mod spde;
pub mod stability;

pub use error::{Error, Result};
