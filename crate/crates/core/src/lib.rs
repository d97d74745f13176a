//! Neural radiance field reconstruction for orbital and rover imagery.

pub mod camera;
pub mod config;
pub mod error;
pub mod fetch;
pub mod field;
pub mod filters;
pub mod hashgrid;
pub mod image;
pub mod pipeline;
pub(crate) mod real;
pub mod render;
pub mod synthetic;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
