#![cfg_attr(not(feature = "std"), no_std)]
#![doc = include_str!("../README.md")]

extern crate alloc;

pub mod claims;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub(crate) mod math;
pub mod matrix;
pub mod models;
pub(crate) mod par;
pub mod rng;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
