pub mod autodiff;
pub mod bench;
pub mod error;
pub mod kan;
pub mod molgraph;
pub mod mpnn;
pub mod training;

pub use error::{Error, Result};
