#![allow(clippy::needless_range_loop)]

pub mod assembly;
mod dd;
pub mod departure;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod plane2d;
pub mod polybasis;
pub mod spectral;
pub mod timestep;

pub use error::{Error, Result};
