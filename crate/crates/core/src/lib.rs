pub mod cli;
pub mod compositor;
pub mod decode;
pub mod error;
pub mod evalap;
pub mod geometry;
pub mod gtgen;
pub mod io;
pub mod losses;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
