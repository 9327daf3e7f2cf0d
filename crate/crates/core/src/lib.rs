//! Simulation, learning and baselines for robot portrait view adjustment.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod a2c;
pub mod composer;
pub mod controller;
pub mod env;
pub mod error;
pub mod experiment;
pub mod io;
pub mod oracle;
pub mod panorama;
pub mod tracker;
pub mod world;

pub use error::{Error, Result};
