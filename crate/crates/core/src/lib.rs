pub mod benchmark;
pub mod cv;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod fsvm;
pub mod kernel;
pub mod metric;
pub mod radius;
pub mod svm;
pub mod symmat;

pub use error::{FsvmError, Result};
