pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
mod linalg;
pub mod model;
pub mod planner;
pub mod sbl;
pub mod service;

pub use error::{Error, Result};
