//! Bayesian optimization of CSS quantum error-correcting codes.
//!
//! This crate holds the algorithmic core and builds without `std` (it needs
//! `alloc`). File formats, the command line and threaded execution live in
//! the companion `cssbo` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod code;
pub mod error;
pub mod evaluate;
pub mod decode;
pub mod dense;
pub mod diff;
pub mod embedding;
pub mod gf2;
pub mod kernel;
pub mod noise;
pub mod optimizer;
pub mod surrogate;

pub use error::{Error, Result};
