pub mod bcs;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod grid;
pub mod pairing;
pub mod report;
pub mod spectral;
pub mod twobody;

pub use error::{Error, Result};
