//! P1 finite elements for div(sigma grad phi) = 0 on rectangular 2D domains.

mod mesh;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{generate_rect_mesh, BoundaryEdge, ContactSpec, Layer, Mesh2D, RectCad, Side, INSULATED};
pub use solve::{
    analytical_plate_field, assemble_stiffness, pcg, solve_boundary_fn, solve_fixed, solve_potential,
    solve_potential_with, Csr, FemSolution, SolverStats, RELATIVE_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum FemError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid material data: {0}")]
    InvalidMaterial(String),
    #[error("unknown boundary tag {0}")]
    UnknownTag(String),
    #[error("system is singular: no Dirichlet constraint")]
    Singular,
    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}
