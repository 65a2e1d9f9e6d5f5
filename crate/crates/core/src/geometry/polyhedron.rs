use nalgebra::{DMatrix, DVector};

use super::cone::combinations;
use super::{cone_distance, dist, dot, lp_solve, norm, ConeFg, GeometryError, LpStatus, Sense};

/// Tolerance of the projection characterization check.
pub const TOL_PROJ: f64 = 1e-9;

/// Active-set enumeration visits every subset of at most `n` constraints.
pub const MAX_PROJECTION_HALFSPACES: usize = 12;

/// `{x : ⟨normal, x⟩ <= offset}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn slack(&self, x: &[f64]) -> f64 {
        self.offset - dot(&self.normal, x)
    }
}

/// H-representation; no halfspaces means all of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    dim: usize,
    halfspaces: Vec<Halfspace>,
}

impl Polyhedron {
    pub fn new(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self, GeometryError> {
        for (i, h) in halfspaces.iter().enumerate() {
            if h.normal.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: h.normal.len() });
            }
            if norm(&h.normal) == 0.0 {
                return Err(GeometryError::ZeroNormal(i));
            }
        }
        Ok(Self { dim, halfspaces })
    }

    pub fn whole_space(dim: usize) -> Self {
        Self { dim, halfspaces: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    fn scaled_tol(&self, h: &Halfspace, tol: f64) -> f64 {
        tol * norm(&h.normal).max(1.0) * (1.0 + h.offset.abs())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.halfspaces.iter().all(|h| -h.slack(x) <= self.scaled_tol(h, tol))
    }

    /// First violated constraint, if any.
    fn violation(&self, x: &[f64], tol: f64) -> Option<(usize, f64)> {
        self.halfspaces
            .iter()
            .enumerate()
            .map(|(i, h)| (i, -h.slack(x)))
            .find(|(i, v)| *v > self.scaled_tol(&self.halfspaces[*i], tol))
    }

    pub fn active(&self, x: &[f64], tol: f64) -> Vec<usize> {
        self.halfspaces
            .iter()
            .enumerate()
            .filter(|(_, h)| h.slack(x).abs() <= self.scaled_tol(h, tol))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        Ok(lp_solve(self.dim, &self.halfspaces, None, Sense::Min)?.status == LpStatus::Infeasible)
    }
}

/// Normal cone of a polyhedron at a feasible point: the cone on the normals
/// of the constraints active there.
pub fn normal_cone(p: &Polyhedron, x: &[f64], tol: f64) -> Result<ConeFg, GeometryError> {
    if x.len() != p.dim {
        return Err(GeometryError::DimensionMismatch { expected: p.dim, got: x.len() });
    }
    if let Some((index, violation)) = p.violation(x, tol) {
        return Err(GeometryError::PointNotInSet { index, violation });
    }
    Ok(ConeFg::new(p.dim, p.active(x, tol).into_iter().map(|i| p.halfspaces[i].normal.clone())))
}

/// Euclidean projection by active-set enumeration.
///
/// For every subset `S` of at most `n` constraints the candidate is the
/// nearest point of the affine set `{⟨a_i, y⟩ = b_i, i ∈ S}`. A candidate is
/// accepted when it is feasible and `x − x₀` lies in the cone of the normals
/// active at `x₀`; the projection onto a closed convex set is unique, so
/// among accepted candidates the nearest one is returned.
pub fn project_polyhedron(p: &Polyhedron, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = p.dim;
    if x.len() != n {
        return Err(GeometryError::DimensionMismatch { expected: n, got: x.len() });
    }
    let k = p.halfspaces.len();
    if k > MAX_PROJECTION_HALFSPACES {
        return Err(GeometryError::TooManyHalfspaces { max: MAX_PROJECTION_HALFSPACES, got: k });
    }
    if p.contains(x, 0.0) {
        return Ok(x.to_vec());
    }
    if p.is_empty()? {
        return Err(GeometryError::Infeasible);
    }

    let mut accepted: Option<(f64, Vec<f64>)> = None;
    let mut fallback: Option<(f64, Vec<f64>)> = None;
    for size in 1..=n.min(k) {
        for subset in combinations(k, size) {
            let Some(x0) = affine_projection(p, &subset, x) else { continue };
            if !p.contains(&x0, TOL_PROJ) {
                continue;
            }
            let d = dist(x, &x0);
            if fallback.as_ref().map_or(true, |(bd, _)| d < *bd) {
                fallback = Some((d, x0.clone()));
            }
            let active: Vec<Vec<f64>> =
                p.active(&x0, TOL_PROJ).into_iter().map(|i| p.halfspaces[i].normal.clone()).collect();
            let r: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let resid = cone_distance(n, &active, &r)?;
            if resid <= TOL_PROJ * (1.0 + norm(&r)) * 10.0 && accepted.as_ref().map_or(true, |(bd, _)| d < *bd) {
                accepted = Some((d, x0));
            }
        }
    }
    accepted.or(fallback).map(|(_, x0)| x0).ok_or(GeometryError::Infeasible)
}

/// Nearest point to `x` on `{y : ⟨a_i, y⟩ = b_i, i ∈ subset}`; `None` if the
/// equations are inconsistent.
fn affine_projection(p: &Polyhedron, subset: &[usize], x: &[f64]) -> Option<Vec<f64>> {
    let n = p.dim;
    let s = subset.len();
    let a = DMatrix::from_fn(s, n, |i, j| p.halfspaces[subset[i]].normal[j]);
    let resid = DVector::from_fn(s, |i, _| {
        let h = &p.halfspaces[subset[i]];
        dot(&h.normal, x) - h.offset
    });
    let gram = &a * a.transpose();
    let w = gram.clone().svd(true, true).solve(&resid, 1e-12).ok()?;
    let step = a.transpose() * w;
    let x0: Vec<f64> = (0..n).map(|j| x[j] - step[j]).collect();
    let consistent = subset.iter().all(|&i| {
        let h = &p.halfspaces[i];
        (dot(&h.normal, &x0) - h.offset).abs() <= 1e-9 * (1.0 + h.offset.abs())
    });
    consistent.then_some(x0)
}
