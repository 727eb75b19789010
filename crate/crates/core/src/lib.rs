pub mod error;
pub mod gen;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
