pub mod error;
pub mod signal;
pub mod tensor;
pub mod weights;
pub mod policy;
pub mod blocks;
pub mod model;
pub mod ledger;
pub mod verify;
pub mod cli;

pub use error::{DsnError, Result};
