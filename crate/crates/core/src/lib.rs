#![no_std]

extern crate alloc;

pub mod agent;
pub mod data;
pub mod elbo;
pub mod error;
pub mod fusion;
pub mod kernel;
pub mod linalg;
pub mod netsim;
pub mod posterior;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
