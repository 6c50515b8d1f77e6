pub mod backend;
pub mod data;
pub mod domain;
pub mod eval;
pub mod infer;
pub mod lossmath;
pub mod probe;
pub mod prompt;
pub mod seed;

pub use domain::*;
