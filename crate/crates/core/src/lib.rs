pub mod autodiff;
pub mod distance;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod onlstm;
pub mod pipeline;
pub mod prpn;
pub mod synthetic;
pub mod training;
pub mod treebank;

pub use error::{Error, Result};
