pub mod backends;
pub mod community;
pub mod docmodel;
pub mod error;
pub mod graphbuild;
pub mod harness;
pub mod modeseek;
pub mod prefsynth;
pub mod retrieve;

pub use error::{Error, Result};
