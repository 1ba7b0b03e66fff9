pub mod config;
pub mod consensus;
pub mod error;
pub mod gateway;
pub mod ledger;
pub mod meta;
pub mod pipeline;
pub mod refinement;

pub use error::{Error, Result};
