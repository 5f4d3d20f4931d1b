pub mod adapt;
pub mod audio;
pub mod cli;
pub mod classifier;
pub mod error;
pub mod io;
pub mod eval;
pub mod mmd;
pub mod pipeline;
pub mod sample;
pub mod split;
pub mod stream;
pub mod synth;
pub mod tune;

pub use error::{Error, Result};
