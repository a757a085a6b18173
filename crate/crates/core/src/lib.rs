//! Simulator and numerics for non-i.i.d. verification of continuous-variable
//! quantum states and Gaussian channels.

pub mod cli;
pub mod error;
pub mod fock;
pub mod harness;
pub mod phasespace;
pub mod planner;
pub mod protocol;
pub mod provers;
pub mod witness;

pub use error::{Error, Result};
