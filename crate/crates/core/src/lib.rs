pub mod coarse;
pub mod error;
mod filter;
pub mod inversion;
pub mod io;
pub mod maskgen;
pub mod metrics;
pub mod net;
pub mod patch_swap;
pub mod phantom;
pub mod pipeline;
pub mod register;
pub mod symmetry;
pub mod tensor;

pub use error::{Error, Result};
