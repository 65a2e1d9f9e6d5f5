//! Best approximation from `K̃ = C ∩ K`: projection, multiplier
//! certificates `x̄ = P_C(x − Σ λ_j η_j)`, strong CHIP and the audit of the
//! three equivalent characterizations of `x̄ = P_K̃(x)`.

use crate::cones::{Attribution, LocalData, PolarAudit, Settings, TOL_EXACT_CONE, TOL_SAMPLED_CONE};
use crate::geometry::{
    add, cone_contains, cones_equal, dist, minkowski_sum_fg, norm, normal_cone, project_polyhedron, scale,
    solve_standard, sub, Cone, ConeFg, GeometryError, Halfspace, Polyhedron, Standard,
};
use crate::instance::{Instance, SetKind};
use crate::oracles::{box_draws, grid_project, GridSpec, Membership};
use crate::{Error, Provenance};

pub const TOL_CERT_EXACT: f64 = 1e-8;
pub const TOL_CERT_SAMPLED: f64 = 1e-3;
/// Feasible pairs tested for midpoint convexity of `K̃`.
pub const CONVEXITY_PAIRS: usize = 200;
/// Grid projections are judged by distance to this tolerance.
pub const TOL_GRID_DISTANCE: f64 = 1e-3;

pub fn tol_cert(p: Provenance) -> f64 {
    match p {
        Provenance::Sampled => TOL_CERT_SAMPLED,
        _ => TOL_CERT_EXACT,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    /// `Exact` from `feasible_hrep`, `Sampled` from the grid.
    pub provenance: Provenance,
}

/// `P_K̃(x)`: exact on `feasible_hrep`, otherwise the grid oracle over the box.
pub fn project_feasible(inst: &Instance, x: &[f64]) -> Result<Projection, Error> {
    if x.len() != inst.n {
        return Err(Error::Input(format!("point has {} coordinates, n = {}", x.len(), inst.n)));
    }
    if let Some(h) = &inst.feasible_hrep {
        return Ok(Projection { point: project_polyhedron(h, x)?, provenance: Provenance::Exact });
    }
    let Some(bbox) = &inst.bbox else {
        return Err(Error::Input("projection needs feasible_hrep or a box".into()));
    };
    let seeds: Vec<Vec<f64>> = inst.anchors.iter().map(|a| a.xbar.clone()).collect();
    let point = grid_project(&inst.oracle(SetKind::KTilde), x, &GridSpec::new(bbox.clone()), &seeds)?;
    Ok(Projection { point, provenance: Provenance::Sampled })
}

/// `x₀ = P_P(x)` iff `x − x₀ ∈ N_P(x₀)`.
pub fn verify_projection(p: &Polyhedron, x: &[f64], x0: &[f64], tol: f64) -> Result<bool, Error> {
    if !p.contains(x0, 1e-9) {
        return Err(Error::Input(format!("{x0:?} is not in the polyhedron")));
    }
    Ok(cone_contains(&Cone::Fg(normal_cone(p, x0, 1e-9)?), &sub(x, x0), tol)?)
}

/// Euclidean distance from `v` to the cone on `rays`, by Moreau: the
/// residual is the projection of `v` onto the polar.
pub fn distance_to_cone(cone: &ConeFg, v: &[f64]) -> Result<f64, GeometryError> {
    if cone.rays().is_empty() {
        return Ok(norm(v));
    }
    let polar = Polyhedron::new(cone.dim(), cone.rays().iter().map(|r| Halfspace::new(r.clone(), 0.0)).collect())?;
    Ok(norm(&project_polyhedron(&polar, v)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambda: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    /// `λ_j = 0`; `η_j` is a placeholder vertex (zeros if unavailable).
    pub inert: Vec<bool>,
    /// `max_j |λ_j g_j(x̄)|`.
    pub residual_cs: f64,
    /// Distance of `x − x̄ − Σ λ_j η_j` from `N_C(x̄)`.
    pub residual_membership: f64,
    pub provenance: Provenance,
    /// Tolerance of every check on this certificate.
    pub tol: f64,
}

impl Certificate {
    pub fn shift(&self) -> Vec<f64> {
        let n = self.eta.first().map_or(0, Vec::len);
        self.lambda.iter().zip(&self.eta).fold(vec![0.0; n], |acc, (l, e)| add(&acc, &scale(e, *l)))
    }
}

/// Write `x − x̄` as `Σ μ_{j,i} v_{j,i} + Σ ρ_k n_k` with `v` the vertices of
/// the active subdifferentials and `n` the rays of `N_C(x̄)`, all
/// coefficients nonnegative. Among exact decompositions the one with the
/// least `Σ ρ`, then the least `Σ μ`, is kept. `None` when the residual of
/// the best decomposition exceeds the certificate tolerance.
pub fn find_certificate(inst: &Instance, local: &LocalData, x: &[f64]) -> Result<Option<Certificate>, Error> {
    let n = inst.n;
    if x.len() != n {
        return Err(Error::Input(format!("point has {} coordinates, n = {}", x.len(), n)));
    }
    let xbar = &local.xbar;
    let provenance = local.provenance();
    let target = sub(x, xbar);
    let tol = local.tol_cert.unwrap_or_else(|| tol_cert(provenance));
    let scale_tol = tol * norm(&target).max(1.0);

    let mut cols: Vec<(Option<usize>, Vec<f64>)> = Vec::new();
    for &j in &local.active {
        if let Some((p, _)) = &local.subdiffs[j] {
            for v in p.vertices() {
                cols.push((Some(j), v.clone()));
            }
        }
    }
    let nc = normal_cone(&inst.c, xbar, 1e-9)?;
    for r in nc.rays() {
        cols.push((None, r.clone()));
    }
    let k = cols.len();
    // z = [coefficients (k), r⁺ (n), r⁻ (n), slack rows...]
    let base = k + 2 * n;
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; base];
            for (c, (_, v)) in cols.iter().enumerate() {
                row[c] = v[i];
            }
            row[k + i] = 1.0;
            row[k + n + i] = -1.0;
            row
        })
        .collect();
    let mut rhs = target.clone();
    let mut width = base;
    let solve = |rows: &[Vec<f64>], rhs: &[f64], cost: Vec<f64>| -> Result<(Vec<f64>, f64), Error> {
        match solve_standard(rows, rhs, &cost)? {
            Standard::Optimal { z, value } => Ok((z, value)),
            _ => Err(GeometryError::Infeasible.into()),
        }
    };
    let residual_cost = |w: usize| (0..w).map(|c| if c >= k && c < base { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let (_, residual) = solve(&rows, &rhs, residual_cost(width))?;
    if residual > scale_tol {
        return Ok(None);
    }
    // Freeze each stage's optimum with a slack column before the next one.
    let freeze = |rows: &mut Vec<Vec<f64>>, rhs: &mut Vec<f64>, width: &mut usize, cost: &[f64], value: f64| {
        for r in rows.iter_mut() {
            r.push(0.0);
        }
        let mut row = cost.to_vec();
        row.resize(*width, 0.0);
        row.push(1.0);
        rows.push(row);
        rhs.push(value + 1e-9 * value.abs().max(1e-3));
        *width += 1;
    };
    let c0 = residual_cost(width);
    freeze(&mut rows, &mut rhs, &mut width, &c0, residual);
    let c1: Vec<f64> = (0..width).map(|c| if c < k && cols[c].0.is_none() { 1.0 } else { 0.0 }).collect();
    let (_, rho) = solve(&rows, &rhs, c1.clone())?;
    freeze(&mut rows, &mut rhs, &mut width, &c1, rho);
    let c2: Vec<f64> = (0..width).map(|c| if c < k && cols[c].0.is_some() { 1.0 } else { 0.0 }).collect();
    let (z, _) = solve(&rows, &rhs, c2)?;

    let m = inst.constraints.len();
    let mut lambda = vec![0.0; m];
    let mut weighted = vec![vec![0.0; n]; m];
    for (c, (owner, v)) in cols.iter().enumerate() {
        if let Some(j) = owner {
            lambda[*j] += z[c];
            weighted[*j] = add(&weighted[*j], &scale(v, z[c]));
        }
    }
    let mut eta = Vec::with_capacity(m);
    let mut inert = Vec::with_capacity(m);
    for j in 0..m {
        if lambda[j] > 0.0 {
            eta.push(scale(&weighted[j], 1.0 / lambda[j]));
            inert.push(false);
        } else {
            lambda[j] = 0.0;
            let first = local.subdiffs[j].as_ref().and_then(|(p, _)| p.vertices().first().cloned());
            eta.push(first.unwrap_or_else(|| vec![0.0; n]));
            inert.push(true);
        }
    }
    let residual_cs = lambda.iter().zip(&local.values).map(|(l, g)| (l * g).abs()).fold(0.0, f64::max);
    let mut cert = Certificate { lambda, eta, inert, residual_cs, residual_membership: 0.0, provenance, tol };
    cert.residual_membership = distance_to_cone(&nc, &sub(&target, &cert.shift()))?;
    Ok(Some(cert))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCheck {
    pub holds: bool,
    /// `x − Σ λ_j η_j`.
    pub shifted: Vec<f64>,
    /// `P_C` of the shifted point.
    pub projected: Vec<f64>,
}

/// `x̄ = P_C(x − Σ λ_j η_j)` and complementary slackness, both to the
/// certificate tolerance.
pub fn check_certificate_perturbation(
    inst: &Instance,
    cert: &Certificate,
    x: &[f64],
    xbar: &[f64],
) -> Result<PerturbationCheck, Error> {
    let shifted = sub(x, &cert.shift());
    let projected = project_polyhedron(&inst.c, &shifted)?;
    let tol = cert.tol;
    let holds = dist(&projected, xbar) <= tol * dist(x, xbar).max(1.0) && cert.residual_cs <= tol;
    Ok(PerturbationCheck { holds, shifted, projected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityCheck {
    pub holds: bool,
    /// `x ≠ x̄`: distance of `−u − Σ λ'_j η_j` from `N_C(x̄)`, with
    /// `u = (x̄ − x)/‖x̄ − x‖` and `λ' = λ/‖x − x̄‖`. `x = x̄`: distance of
    /// `−Σ λ_j η_j` from `N_C(x̄)`, to be compared with the unit ball.
    pub residual: f64,
}

/// `0 ∈ ∂‖· − x‖(x̄) + N_C(x̄) + Σ λ_j η_j`. The norm's subdifferential is
/// `{u}` away from `x` and the unit ball at `x`; the certificate for
/// `x − x̄` is rescaled to the unit vector `u`.
pub fn check_certificate_stationarity(
    inst: &Instance,
    cert: &Certificate,
    x: &[f64],
    xbar: &[f64],
) -> Result<StationarityCheck, Error> {
    let nc = normal_cone(&inst.c, xbar, 1e-9)?;
    let tol = cert.tol;
    let r = dist(x, xbar);
    let shift = cert.shift();
    if r == 0.0 {
        let residual = distance_to_cone(&nc, &scale(&shift, -1.0))?;
        return Ok(StationarityCheck { holds: residual <= 1.0 + tol, residual });
    }
    let u = scale(&sub(xbar, x), 1.0 / r);
    let v = sub(&scale(&u, -1.0), &scale(&shift, 1.0 / r));
    let residual = distance_to_cone(&nc, &v)?;
    Ok(StationarityCheck { holds: residual <= tol, residual })
}

#[derive(Debug, Clone)]
pub struct ChipVerdict {
    /// `None` when a needed polar could not be estimated.
    pub holds: Option<bool>,
    /// `(K̃ − x̄)°`.
    pub left: Option<ConeFg>,
    pub left_provenance: Provenance,
    /// `(C − x̄)° + (K − x̄)°`.
    pub right: Option<ConeFg>,
    pub right_provenance: Provenance,
    pub normal_c: ConeFg,
    /// `(K − x̄)°` was taken to be `M(x̄)`.
    pub right_uses_m: bool,
    pub tol: f64,
    pub note: Option<String>,
}

/// `(K̃ − x̄)° = (C − x̄)° + (K − x̄)°`. The right side uses `M(x̄)` for
/// `(K − x̄)°` when the audit confirmed the two agree.
pub fn check_strong_chip(inst: &Instance, local: &LocalData, audit: &PolarAudit) -> Result<ChipVerdict, Error> {
    let n = inst.n;
    let normal_c = normal_cone(&inst.c, &local.xbar, 1e-9)?;
    let mut note = None;
    let (left, left_provenance) = match &audit.polar_kt {
        Ok(p) => (Some(p.cone.clone()), p.provenance()),
        Err(e) => {
            note = Some(format!("polar of K̃ − x̄: {e}"));
            (None, Provenance::Sampled)
        }
    };
    let right_uses_m = audit.m_is_polar_k() == Some(true);
    let (pk, pk_provenance) = if right_uses_m {
        (Some(audit.m.clone()), local.provenance())
    } else {
        match &audit.polar_k {
            Ok(p) => (Some(p.cone.clone()), p.provenance()),
            Err(e) => {
                note = Some(format!("polar of K − x̄: {e}"));
                (None, Provenance::Sampled)
            }
        }
    };
    let right = match pk {
        Some(pk) => Some(minkowski_sum_fg(&normal_c, &pk)?.pruned(1e-9)?),
        None => None,
    };
    let exact = left_provenance == Provenance::Exact && pk_provenance == Provenance::Exact;
    let tol = if exact { TOL_EXACT_CONE } else { TOL_SAMPLED_CONE };
    let holds = match (&left, &right) {
        (Some(l), Some(r)) => Some(cones_equal(&Cone::Fg(l.clone()), &Cone::Fg(r.clone()), tol)?),
        _ => None,
    };
    debug_assert!(left.as_ref().map_or(true, |l| l.dim() == n));
    Ok(ChipVerdict {
        holds,
        left,
        left_provenance,
        right,
        right_provenance: pk_provenance,
        normal_c,
        right_uses_m,
        tol,
        note,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityProbe {
    pub pairs: usize,
    /// Feasible `y, z` whose midpoint is infeasible.
    pub counterexample: Option<(Vec<f64>, Vec<f64>)>,
}

/// Midpoint feasibility on pairs of feasible points of `set`: declared
/// points first, then random box points. Can only falsify convexity.
pub fn convexity_probe(
    set: &impl Membership,
    known: &[Vec<f64>],
    bbox: Option<&[(f64, f64)]>,
    settings: &Settings,
) -> ConvexityProbe {
    let mut points: Vec<Vec<f64>> = known.iter().filter(|p| set.contains(p)).cloned().collect();
    if let Some(bbox) = bbox {
        let mut rng = settings.rng();
        for _ in 0..20 {
            points.extend(box_draws(bbox, 1000, &mut rng).into_iter().filter(|p| set.contains(p)));
            if points.len() >= 2 * CONVEXITY_PAIRS {
                break;
            }
        }
    }
    let mut pairs = 0;
    'outer: for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if pairs >= CONVEXITY_PAIRS {
                break 'outer;
            }
            // Pair each point with a distant partner rather than its neighbour.
            let k = (j + points.len() / 2) % points.len();
            if k == i {
                continue;
            }
            pairs += 1;
            let mid = scale(&add(&points[i], &points[k]), 0.5);
            if !set.contains(&mid) {
                return ConvexityProbe { pairs, counterexample: Some((points[i].clone(), points[k].clone())) };
            }
            continue 'outer;
        }
    }
    ConvexityProbe { pairs, counterexample: None }
}

#[derive(Debug, Clone)]
pub struct EquivalenceRow {
    pub x: Vec<f64>,
    pub projection: Projection,
    /// `x̄ = P_K̃(x)`.
    pub is_projection: bool,
    pub certificate: Option<Certificate>,
    pub perturbation: Option<PerturbationCheck>,
    pub stationarity: Option<StationarityCheck>,
    /// A certificate exists and passes the perturbation check.
    pub perturbation_holds: bool,
    /// A certificate exists and passes the stationarity check.
    pub stationarity_holds: bool,
}

impl EquivalenceRow {
    pub fn agree(&self) -> bool {
        self.is_projection == self.perturbation_holds && self.perturbation_holds == self.stationarity_holds
    }
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub near_convex: bool,
    pub nacq: bool,
    pub ktilde_convexity: ConvexityProbe,
    pub chip: ChipVerdict,
    pub attribution: Attribution,
}

impl EquivalenceReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.near_convex && self.nacq && self.ktilde_convexity.counterexample.is_none()
    }

    pub fn all_agree(&self) -> bool {
        self.rows.iter().all(EquivalenceRow::agree)
    }

    /// Near convexity and NACQ imply strong CHIP.
    pub fn chip_consistent(&self) -> bool {
        !(self.near_convex && self.nacq) || self.chip.holds == Some(true)
    }

    /// Disagreement or a strong CHIP failure while every hypothesis passed.
    pub fn defect(&self) -> bool {
        self.hypotheses_hold() && (!self.all_agree() || !self.chip_consistent())
    }
}

/// `x̄ = P_K̃(x)`: exact projections are compared pointwise, grid
/// projections by distance.
pub fn is_projection(p: &Projection, x: &[f64], xbar: &[f64]) -> bool {
    match p.provenance {
        Provenance::Sampled => dist(x, xbar) - dist(x, &p.point) <= TOL_GRID_DISTANCE,
        _ => dist(&p.point, xbar) <= TOL_CERT_EXACT * norm(x).max(1.0),
    }
}

pub fn equivalence_row(inst: &Instance, local: &LocalData, x: &[f64]) -> Result<EquivalenceRow, Error> {
    let projection = project_feasible(inst, x)?;
    let is_proj = is_projection(&projection, x, &local.xbar);
    let certificate = find_certificate(inst, local, x)?;
    let (perturbation, stationarity) = match &certificate {
        Some(c) => (
            Some(check_certificate_perturbation(inst, c, x, &local.xbar)?),
            Some(check_certificate_stationarity(inst, c, x, &local.xbar)?),
        ),
        None => (None, None),
    };
    Ok(EquivalenceRow {
        x: x.to_vec(),
        projection,
        is_projection: is_proj,
        perturbation_holds: perturbation.as_ref().is_some_and(|p| p.holds),
        stationarity_holds: stationarity.as_ref().is_some_and(|s| s.holds),
        certificate,
        perturbation,
        stationarity,
    })
}

pub fn equivalence_audit(
    inst: &Instance,
    local: &LocalData,
    audit: &PolarAudit,
    xs: &[Vec<f64>],
    settings: &Settings,
) -> Result<EquivalenceReport, Error> {
    let rows = xs.iter().map(|x| equivalence_row(inst, local, x)).collect::<Result<Vec<_>, _>>()?;
    let known: Vec<Vec<f64>> = inst.anchors.iter().map(|a| a.xbar.clone()).chain(inst.samples.iter().cloned()).collect();
    let ktilde_convexity = convexity_probe(&inst.oracle(SetKind::KTilde), &known, inst.bbox.as_deref(), settings);
    Ok(EquivalenceReport {
        rows,
        near_convex: audit.near_convex.passed(),
        nacq: audit.nacq.holds,
        ktilde_convexity,
        chip: check_strong_chip(inst, local, audit)?,
        attribution: audit.attribution(),
    })
}
