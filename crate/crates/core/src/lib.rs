pub mod augment;
pub mod autograd;
pub mod cascade;
pub mod cli;
pub mod error;
pub mod eval;
pub mod morph;
pub mod nn;
pub mod train;
pub mod volio;

pub use error::{Error, Result};
