//! Foggy-scene semantic segmentation toolkit.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gan;
pub(crate) mod fsutil;
pub mod dataio;
pub mod imaging;
pub mod metrics;
pub mod plot;
pub mod segnet;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
