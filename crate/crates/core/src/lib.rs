pub mod crebm;
pub mod error;
pub mod harness;
pub mod molcore;
pub mod proposer;
pub mod route;
pub mod rxn;
pub mod search;

pub use error::{Error, Result};
