pub mod cli;
pub mod cube;
pub mod error;
pub mod forward;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod numeric;
pub mod synth;

pub use error::{Error, Result};
