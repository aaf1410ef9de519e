//! Differentiable mesh rendering through per-facet planar Gaussians.
//!
//! Every triangle becomes one flat anisotropic Gaussian whose covariance is
//! the second moment of the uniform distribution over the triangle. The
//! Gaussians are splatted by a tile-based rasterizer with an analytic
//! backward pass, so image losses produce gradients on mesh vertices.

pub mod error;
pub mod mesh;

pub use error::{Error, Result};
pub mod convert;
pub mod image;
pub mod render;
pub mod objective;
pub mod metrics;
pub mod optimize;
