//! Anisotropic simplicial meshing around point-sampled surfaces.
//!
//! The pipeline turns a raw oriented point cloud into a node-budgeted
//! anisotropic mesh adapted around the implicit surface of the cloud:
//!
//! 1. [`pointcloud`] — load, filter and orient scanned point clouds;
//! 2. [`eimls`] — an extended implicit moving least squares signed field
//!    that is defined over the whole computational domain;
//! 3. [`metric`] — edge-based a-posteriori error estimation and the
//!    node-budget-balanced target metric;
//! 4. [`remesh`] — local-operation remeshing (split/collapse/flip/smooth)
//!    towards unit edge length in the target metric;
//! 5. [`isosurface`] — zero level set extraction for inspection and export.
//!
//! Everything is dimension-generic over `D = 2` or `D = 3`; triangles in 2D,
//! tetrahedra in 3D.

pub mod eimls;
pub mod geom;
pub mod isosurface;
pub mod mesh;
pub mod metric;
pub mod pointcloud;
pub mod remesh;
pub mod spatial;
pub mod synthetic;

mod error;
mod linalg;

pub use error::{Error, Result};
