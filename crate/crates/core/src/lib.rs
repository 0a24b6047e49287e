pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
