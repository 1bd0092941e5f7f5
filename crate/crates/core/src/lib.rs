//! Learned latent-space acceleration of ODE simulations.

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod error;
pub mod latent;
pub mod linalg;
pub mod net;
pub mod solvers;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
