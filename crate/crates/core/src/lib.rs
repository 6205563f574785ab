pub mod error;
pub mod kernels;
pub mod models;
pub mod estimate;
pub mod bandwidth;
pub mod inference;
pub mod simulate;

pub use error::{Error, Result};
