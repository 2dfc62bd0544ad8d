#![no_std]
//! Numerics for linear cocycles over hyperbolic base systems.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cocycle;
pub mod dynamics;
pub mod error;
pub mod holonomy;
pub mod linalg;
pub mod livsic;
pub mod lyapnorm;
pub mod math;
pub mod regression;

pub use error::{Error, Result};
