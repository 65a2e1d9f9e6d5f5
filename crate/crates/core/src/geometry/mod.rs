//! Low-dimensional polyhedral primitives.
//!
//! Everything here works on plain `Vec<f64>` points in ℝⁿ with small `n`
//! (everything downstream stays at four coordinates or fewer). Exactness of
//! verdicts matters more than speed, so the LP is a dense tableau with
//! Bland's rule and cones carry both a generator and a halfspace view.

mod cone;
mod hull;
mod lp;
mod polyhedron;

pub use cone::{cone_contains, cone_distance, cone_includes, cones_equal, minkowski_sum_fg, polar_fg, polar_h, Cone, ConeFg, ConeH};
pub use hull::{hausdorff, hull_distance, hull_residual, sphere_directions};
pub use lp::{lp_solve, LpResult, LpStatus, Sense, TOL_LP};
pub use polyhedron::{normal_cone, project_polyhedron, Halfspace, Polyhedron, MAX_PROJECTION_HALFSPACES, TOL_PROJ};

pub(crate) use lp::{solve_standard, Standard};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("polyhedron is empty")]
    Infeasible,
    #[error("point violates constraint {index} by {violation:e}")]
    PointNotInSet { index: usize, violation: f64 },
    #[error("projection supports at most {max} halfspaces, got {got}")]
    TooManyHalfspaces { max: usize, got: usize },
    #[error("halfspace {0} has a zero normal")]
    ZeroNormal(usize),
    #[error("simplex did not terminate after {0} pivots")]
    LpStalled(usize),
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b))
}

/// Unit vector along `v`, or `None` when `v` is numerically zero.
pub(crate) fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n < 1e-12 {
        None
    } else {
        Some(scale(v, 1.0 / n))
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
