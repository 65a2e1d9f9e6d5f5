//! Directional derivatives, support functions and tangential subdifferentials.

use rand::Rng;
use thiserror::Error;

use crate::expr::{parse, Expr, ExprError};
use crate::geometry::{
    add, dot, hull_residual, lp_solve, max_abs_diff, norm, scale, sphere_directions, unit, GeometryError,
    Halfspace, LpStatus, Sense,
};
use crate::Provenance;

/// Declared stability of a directional derivative.
pub const TOL_DD: f64 = 1e-6;
/// Vertex pruning tolerance for reconstructed subdifferentials.
pub const TOL_GEOM: f64 = 1e-6;
/// Default activity tolerance.
pub const TOL_ACTIVE: f64 = 1e-9;
/// Agreement required between a declared subdifferential and the
/// directional derivative it must support.
pub const TOL_CONSISTENCY: f64 = 1e-5;

const STEPS: usize = 25;
const MAX_REFINEMENTS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TanError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("direction must be nonzero")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("difference quotients did not settle: {sequence:?}")]
    NonConvergent { sequence: Vec<f64> },
    #[error("directional derivative of {name} is not sublinear at the point; its halfspace intersection is {shape}")]
    NotSublinear { name: String, shape: &'static str },
    #[error("subdifferential reconstruction is limited to dimension 3, got {0}")]
    UnsupportedDimension(usize),
    #[error("point is infeasible for {}", violated.iter().map(|(n, v)| format!("{n} = {v:e}")).collect::<Vec<_>>().join(", "))]
    Infeasible { violated: Vec<(String, f64)> },
    #[error("declared subdifferential of {name} gives support {support} in direction {direction:?}, directional derivative is {derivative}")]
    InconsistentSubdiff { name: String, direction: Vec<f64>, support: f64, derivative: f64 },
    #[error("polytope needs at least one vertex")]
    EmptyPolytope,
}

/// Convex hull of finitely many points, stored as a minimal vertex list.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeV {
    vertices: Vec<Vec<f64>>,
}

impl PolytopeV {
    /// Drops duplicates and every point lying in the hull of the others.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, TanError> {
        let Some(dim) = points.first().map(Vec::len) else { return Err(TanError::EmptyPolytope) };
        let mut vs: Vec<Vec<f64>> = Vec::new();
        for p in points {
            if p.len() != dim {
                return Err(TanError::DimensionMismatch { expected: dim, got: p.len() });
            }
            if !vs.iter().any(|q| max_abs_diff(q, &p) <= 1e-12) {
                vs.push(p);
            }
        }
        let mut i = 0;
        while i < vs.len() && vs.len() > 1 {
            let others: Vec<Vec<f64>> =
                vs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v.clone()).collect();
            if hull_residual(&others, &vs[i])? <= 1e-9 {
                vs.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(Self { vertices: vs })
    }

    pub fn singleton(p: Vec<f64>) -> Self {
        Self { vertices: vec![p] }
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> Result<bool, TanError> {
        Ok(hull_residual(&self.vertices, p)? <= tol)
    }

    pub fn hausdorff(&self, other: &PolytopeV) -> f64 {
        crate::geometry::hausdorff(&self.vertices, &other.vertices)
    }
}

/// `max_{v ∈ P} ⟨v, ν⟩`, attained at a vertex.
pub fn support_value(p: &PolytopeV, nu: &[f64]) -> f64 {
    p.vertices.iter().map(|v| dot(v, nu)).fold(f64::NEG_INFINITY, f64::max)
}

/// A named constraint `g(x) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintFn {
    name: String,
    text: String,
    body: Expr,
    exact: Vec<(Vec<f64>, PolytopeV)>,
}

impl ConstraintFn {
    pub fn parse(name: impl Into<String>, text: impl Into<String>) -> Result<Self, ExprError> {
        let text = text.into();
        let body = parse(&text)?;
        Ok(Self { name: name.into(), text, body, exact: Vec::new() })
    }

    /// Attach a known tangential subdifferential at `point`.
    pub fn with_subdiff(mut self, point: Vec<f64>, p: PolytopeV) -> Self {
        self.exact.push((point, p));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    pub fn declared(&self) -> &[(Vec<f64>, PolytopeV)] {
        &self.exact
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.body.eval(x)
    }

    pub fn exact_subdiff(&self, x: &[f64]) -> Option<&PolytopeV> {
        self.exact.iter().find(|(p, _)| p.len() == x.len() && max_abs_diff(p, x) <= 1e-12).map(|(_, s)| s)
    }

    /// Compare every declared subdifferential's support function with the
    /// numerical directional derivative.
    pub fn validate_declared(&self, n_dirs: usize) -> Result<(), TanError> {
        for (point, p) in &self.exact {
            if p.dim() != point.len() {
                return Err(TanError::DimensionMismatch { expected: point.len(), got: p.dim() });
            }
            for nu in sphere_directions(point.len(), n_dirs) {
                let derivative = dir_deriv(self, point, &nu)?;
                let support = support_value(p, &nu);
                if (support - derivative).abs() > TOL_CONSISTENCY * derivative.abs().max(1.0) {
                    return Err(TanError::InconsistentSubdiff {
                        name: self.name.clone(),
                        direction: nu,
                        support,
                        derivative,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One-sided directional derivative `lim_{α↓0} (f(x̄ + αν) − f(x̄))/α`.
///
/// Quotients are taken at `α_k = 0.1·2^{-k}`, `k = 0..24`. Three
/// accelerations are formed from them: one and two Richardson passes
/// (error expansions in integer powers of `α`) and Aitken's Δ² (geometric
/// error, which covers fractional powers such as `α^{1/2}`). The reported
/// value closes the window of four consecutive terms, over all four
/// sequences, with the smallest spread; that spread must stay within
/// `TOL_DD`.
pub fn dir_deriv(f: &ConstraintFn, xbar: &[f64], nu: &[f64]) -> Result<f64, TanError> {
    if nu.len() != xbar.len() {
        return Err(TanError::DimensionMismatch { expected: xbar.len(), got: nu.len() });
    }
    if norm(nu) == 0.0 {
        return Err(TanError::ZeroDirection);
    }
    let f0 = f.eval(xbar)?;
    let mut q = Vec::with_capacity(STEPS);
    for k in 0..STEPS {
        let a = 0.1 * 0.5f64.powi(k as i32);
        let x = add(xbar, &scale(nu, a));
        q.push((f.eval(&x)? - f0) / a);
    }
    let rich1: Vec<f64> = q.windows(2).map(|w| 2.0 * w[1] - w[0]).collect();
    let rich2: Vec<f64> = rich1.windows(2).map(|w| (4.0 * w[1] - w[0]) / 3.0).collect();
    let aitken: Vec<f64> = q
        .windows(3)
        .map(|w| {
            let d1 = w[1] - w[0];
            let d2 = w[2] - w[1];
            let den = d2 - d1;
            if den.abs() <= 1e-14 * (w[2].abs() + 1.0) {
                w[2]
            } else if d2.abs() >= d1.abs() {
                // Not contracting: Δ² would return an antilimit.
                f64::NAN
            } else {
                w[2] - d2 * d2 / den
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for seq in [&q, &rich1, &rich2, &aitken] {
        for w in seq.windows(4) {
            if w.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let spread = hi - lo;
            if best.map_or(true, |(s, _)| spread < s) {
                best = Some((spread, w[3]));
            }
        }
    }
    let Some((spread, value)) = best else { return Err(TanError::NonConvergent { sequence: q }) };
    if spread > TOL_DD * value.abs().max(1.0) {
        return Err(TanError::NonConvergent { sequence: q });
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeVerdict {
    Pass,
    /// `f′(x̄, ·)` broke midpoint convexity or positive homogeneity on this pair.
    Fail { nu: Vec<f64>, nu2: Vec<f64>, reason: &'static str },
}

/// Sample direction pairs and test that `f′(x̄, ·)` is sublinear on them.
pub fn tangential_convexity_probe(
    f: &ConstraintFn,
    xbar: &[f64],
    n_pairs: usize,
    rng: &mut impl Rng,
) -> Result<ProbeVerdict, TanError> {
    let n = xbar.len();
    let d = |v: &[f64]| -> Result<f64, TanError> {
        if norm(v) < 1e-12 {
            Ok(0.0)
        } else {
            dir_deriv(f, xbar, v)
        }
    };
    for _ in 0..n_pairs {
        let nu = random_unit(n, rng);
        let nu2 = random_unit(n, rng);
        let (a, b) = (d(&nu)?, d(&nu2)?);
        let mid: Vec<f64> = nu.iter().zip(&nu2).map(|(x, y)| 0.5 * (x + y)).collect();
        let m = d(&mid)?;
        if m > 0.5 * (a + b) + TOL_DD * (a.abs() + b.abs()).max(1.0) {
            return Ok(ProbeVerdict::Fail { nu, nu2, reason: "midpoint convexity" });
        }
        let twice = d(&scale(&nu, 2.0))?;
        if (twice - 2.0 * a).abs() > TOL_DD * a.abs().max(1.0) * 2.0 {
            return Ok(ProbeVerdict::Fail { nu: nu.clone(), nu2: scale(&nu, 2.0), reason: "positive homogeneity" });
        }
    }
    Ok(ProbeVerdict::Pass)
}

pub(crate) fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    if n == 1 {
        return vec![if rng.gen_bool(0.5) { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return scale(&v, 1.0 / r);
        }
    }
}

/// `∂_T f(x̄) = {x* : ⟨x*, ν⟩ <= f′(x̄, ν) for all ν}` from sampled directions.
///
/// On the line the set is the interval `[−f′(x̄,−1), f′(x̄,1)]`. In the
/// plane `n_dirs` equally spaced directions give an outer polygon; each edge
/// then contributes its outward normal as a further direction until no cut
/// moves the polygon, so polytope subdifferentials are recovered to the
/// precision of the derivative itself. In space, the vertices are the LP
/// maximizers of each sampled direction over the sampled halfspaces.
pub fn reconstruct_subdiff(f: &ConstraintFn, xbar: &[f64], n_dirs: usize) -> Result<PolytopeV, TanError> {
    let n = xbar.len();
    match n {
        1 => {
            let hi = dir_deriv(f, xbar, &[1.0])?;
            let lo = -dir_deriv(f, xbar, &[-1.0])?;
            if lo > hi + TOL_DD {
                return Err(TanError::NotSublinear { name: f.name.clone(), shape: "empty" });
            }
            if hi - lo <= TOL_GEOM {
                Ok(PolytopeV::singleton(vec![0.5 * (lo + hi)]))
            } else {
                Ok(PolytopeV { vertices: vec![vec![lo], vec![hi]] })
            }
        }
        2 => reconstruct_planar(f, xbar, n_dirs.max(4)),
        3 => reconstruct_spatial(f, xbar, n_dirs.max(64)),
        _ => Err(TanError::UnsupportedDimension(n)),
    }
}

fn reconstruct_planar(f: &ConstraintFn, xbar: &[f64], n_dirs: usize) -> Result<PolytopeV, TanError> {
    let mut cuts: Vec<(Vec<f64>, f64)> = Vec::new();
    for nu in sphere_directions(2, n_dirs) {
        let v = dir_deriv(f, xbar, &nu)?;
        cuts.push((nu, v));
    }
    let bound = 2.0 * cuts.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max) + 1.0;
    let mut poly = vec![vec![-bound, -bound], vec![bound, -bound], vec![bound, bound], vec![-bound, bound]];
    for (a, b) in &cuts {
        poly = clip(&poly, a, *b);
    }
    for _ in 0..MAX_REFINEMENTS {
        if poly.len() < 3 {
            break;
        }
        // A vertex off the true set sits between the points where its two
        // edges touch it; the chord through its neighbours approximates that
        // touching chord, and its normal cuts the vertex away.
        let mut added = false;
        let k = poly.len();
        for i in 0..k {
            let (p, v, q) = (&poly[(i + k - 1) % k], &poly[i], &poly[(i + 1) % k]);
            for (a, b) in [(p, q), (v, q)] {
                if crate::geometry::dist(a, b) < 1e-7 {
                    continue;
                }
                let Some(nu) = unit(&[b[1] - a[1], a[0] - b[0]]) else { continue };
                if cuts.iter().any(|(c, _)| max_abs_diff(c, &nu) <= 1e-12) {
                    continue;
                }
                let h = dir_deriv(f, xbar, &nu)?;
                if h < dot(&nu, v).max(dot(&nu, a)).max(dot(&nu, b)) - 1e-7 * h.abs().max(1.0) {
                    added = true;
                    cuts.push((nu, h));
                }
            }
        }
        if !added {
            break;
        }
        for (a, b) in &cuts {
            poly = clip(&poly, a, *b);
        }
    }
    if poly.is_empty() {
        return Err(TanError::NotSublinear { name: f.name.clone(), shape: "empty" });
    }
    if poly.iter().any(|v| v[0].abs() >= 0.99 * bound || v[1].abs() >= 0.99 * bound) {
        return Err(TanError::NotSublinear { name: f.name.clone(), shape: "unbounded" });
    }
    let diam = poly.iter().flat_map(|a| poly.iter().map(move |b| crate::geometry::dist(a, b))).fold(0.0, f64::max);
    if diam <= TOL_GEOM {
        let k = poly.len() as f64;
        return PolytopeV::new(vec![vec![
            poly.iter().map(|v| v[0]).sum::<f64>() / k,
            poly.iter().map(|v| v[1]).sum::<f64>() / k,
        ]]);
    }
    // Drop vertices within TOL_GEOM of the chord through their neighbours.
    let mut changed = true;
    while changed && poly.len() > 1 {
        changed = false;
        for i in 0..poly.len() {
            let k = poly.len();
            let prev = &poly[(i + k - 1) % k];
            let next = &poly[(i + 1) % k];
            if crate::geometry::hull_distance(&[prev.clone(), next.clone()], &poly[i]) <= TOL_GEOM {
                poly.remove(i);
                changed = true;
                break;
            }
        }
    }
    PolytopeV::new(poly)
}

/// Convex polygon ∩ `{⟨a, x⟩ <= b}`.
fn clip(poly: &[Vec<f64>], a: &[f64], b: f64) -> Vec<Vec<f64>> {
    let k = poly.len();
    let mut out = Vec::with_capacity(k + 1);
    for i in 0..k {
        let p = &poly[i];
        let q = &poly[(i + 1) % k];
        let slack = 1e-8 * b.abs().max(1.0);
        let sp = dot(a, p) - b - slack;
        let sq = dot(a, q) - b - slack;
        if sp <= 0.0 {
            out.push(p.clone());
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push(vec![p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out.dedup_by(|x, y| max_abs_diff(x, y) <= 1e-15);
    while out.len() > 1 && max_abs_diff(&out[0], out.last().unwrap()) <= 1e-15 {
        out.pop();
    }
    out
}

fn reconstruct_spatial(f: &ConstraintFn, xbar: &[f64], n_dirs: usize) -> Result<PolytopeV, TanError> {
    let dirs = sphere_directions(3, n_dirs);
    let mut cons = Vec::with_capacity(dirs.len());
    for nu in &dirs {
        cons.push(Halfspace::new(nu.clone(), dir_deriv(f, xbar, nu)?));
    }
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for nu in &dirs {
        let r = lp_solve(3, &cons, Some(nu), Sense::Max)?;
        match r.status {
            LpStatus::Feasible => {
                let w = r.witness.expect("feasible LP has a witness");
                if !pts.iter().any(|p| max_abs_diff(p, &w) <= TOL_GEOM) {
                    pts.push(w);
                }
            }
            LpStatus::Infeasible => return Err(TanError::NotSublinear { name: f.name.clone(), shape: "empty" }),
            LpStatus::Unbounded => {
                return Err(TanError::NotSublinear { name: f.name.clone(), shape: "unbounded" })
            }
        }
    }
    PolytopeV::new(pts)
}

/// Tangential subdifferential at `x̄`: the declared one when present,
/// otherwise a reconstruction.
pub fn subdifferential(f: &ConstraintFn, xbar: &[f64], n_dirs: usize) -> Result<(PolytopeV, Provenance), TanError> {
    match f.exact_subdiff(xbar) {
        Some(p) => Ok((p.clone(), Provenance::Exact)),
        None => Ok((reconstruct_subdiff(f, xbar, n_dirs)?, Provenance::Sampled)),
    }
}

/// Indices `j` with `|g_j(x̄)| <= tol`; every constraint must hold within `tol`.
pub fn active_set(constraints: &[ConstraintFn], xbar: &[f64], tol: f64) -> Result<Vec<usize>, TanError> {
    let mut active = Vec::new();
    let mut violated = Vec::new();
    for (j, g) in constraints.iter().enumerate() {
        let v = g.eval(xbar)?;
        if v > tol {
            violated.push((g.name.clone(), v));
        } else if v.abs() <= tol {
            active.push(j);
        }
    }
    if violated.is_empty() {
        Ok(active)
    } else {
        Err(TanError::Infeasible { violated })
    }
}
