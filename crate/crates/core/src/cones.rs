//! Cones at an anchor `x̄`: the linearized cone `D(x̄)`, the multiplier cone
//! `M(x̄)`, sampled contingent and polar cones, near convexity, the
//! constraint qualifications and the audit of `M(x̄) = (K − x̄)° = (K̃ − x̄)°`.
//!
//! `D(x̄)` is built from subdifferential vertices only: `⟨η, t⟩ <= 0` for all
//! `η` in a polytope iff it holds at the vertices.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    add, cone_contains, cone_includes, dist, lp_solve, normal_cone, scale, sphere_directions, sub, unit, Cone,
    ConeFg, ConeH, GeometryError, Halfspace, LpStatus, Sense,
};
use crate::instance::{FeasibilityOracle, Instance, SetKind};
use crate::oracles::{box_draws, Membership, OracleError, PolarSampler};
use crate::tanconvex::{active_set, subdifferential, PolytopeV, TOL_ACTIVE};
use crate::{Error, Provenance};

/// Step lengths of the contingent-cone test.
pub const ALPHAS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
/// Robinson's qualification holds iff the separation margin exceeds this.
pub const TOL_NRCQ: f64 = 1e-8;
/// Accepted contingent directions must satisfy `D`'s inequalities to this.
pub const TOL_TANGENT_IN_D: f64 = 1e-6;
/// A generator of `D` must lie this close to an accepted direction.
pub const NACQ_ANGLE: f64 = 1e-3;
/// Cone comparisons involving sampled data.
pub const TOL_SAMPLED_CONE: f64 = 1e-3;
/// Cone comparisons between exactly computed cones.
pub const TOL_EXACT_CONE: f64 = 1e-8;
/// Random points of `K` added to the near-convexity sample.
pub const NEAR_CONVEX_RANDOM: usize = 32;

/// Knobs shared by every analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    /// Sampled directions; defaults to 360 in the plane and 500 in space.
    pub dirs: Option<usize>,
    pub tol_active: f64,
    /// Box draws behind every sampled polar cone.
    pub polar_samples: usize,
    /// Overrides the provenance-based certificate tolerance.
    pub tol_cert: Option<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Self { seed: 0, dirs: None, tol_active: TOL_ACTIVE, polar_samples: 20_000, tol_cert: None }
    }
}

impl Settings {
    pub fn dirs_for(&self, n: usize) -> usize {
        self.dirs.unwrap_or(match n {
            1 => 2,
            2 => 360,
            _ => 500,
        })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Constraint values, active set and subdifferentials at an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub xbar: Vec<f64>,
    pub values: Vec<f64>,
    pub active: Vec<usize>,
    /// Every constraint's subdifferential; `None` when an inactive
    /// constraint could not be differentiated.
    pub subdiffs: Vec<Option<(PolytopeV, Provenance)>>,
    pub tol_cert: Option<f64>,
}

impl LocalData {
    pub fn new(inst: &Instance, xbar: &[f64], settings: &Settings) -> Result<Self, Error> {
        if xbar.len() != inst.n {
            return Err(Error::Input(format!("point has {} coordinates, n = {}", xbar.len(), inst.n)));
        }
        inst.check_feasible(xbar).map_err(|d| Error::Input(format!("point {xbar:?} is not in C ∩ K: {d}")))?;
        let values = inst.constraints.iter().map(|g| g.eval(xbar)).collect::<Result<Vec<_>, _>>().map_err(crate::tanconvex::TanError::from)?;
        let active = active_set(&inst.constraints, xbar, settings.tol_active)?;
        let n_dirs = settings.dirs_for(inst.n).max(64);
        let mut subdiffs = Vec::with_capacity(inst.constraints.len());
        for (j, g) in inst.constraints.iter().enumerate() {
            match subdifferential(g, xbar, n_dirs) {
                Ok(s) => subdiffs.push(Some(s)),
                Err(e) if active.contains(&j) => return Err(e.into()),
                Err(_) => subdiffs.push(None),
            }
        }
        Ok(Self { xbar: xbar.to_vec(), values, active, subdiffs, tol_cert: settings.tol_cert })
    }

    pub fn dim(&self) -> usize {
        self.xbar.len()
    }

    pub fn active_polytopes(&self) -> Vec<&PolytopeV> {
        self.active.iter().filter_map(|&j| self.subdiffs[j].as_ref().map(|(p, _)| p)).collect()
    }

    /// `Sampled` if any active subdifferential was reconstructed.
    pub fn provenance(&self) -> Provenance {
        self.active
            .iter()
            .filter_map(|&j| self.subdiffs[j].as_ref().map(|(_, p)| *p))
            .fold(Provenance::Exact, Provenance::join)
    }

    pub fn d(&self) -> ConeH {
        build_d(self.dim(), &self.active_polytopes())
    }

    pub fn m(&self) -> ConeFg {
        build_m(self.dim(), &self.active_polytopes())
    }
}

/// `D(x̄) = {t : ⟨η, t⟩ <= 0 for all η ∈ ∂_T g_j(x̄), j active}`.
pub fn build_d(n: usize, subdiffs: &[&PolytopeV]) -> ConeH {
    ConeH::new(n, subdiffs.iter().flat_map(|p| p.vertices().iter().cloned()))
}

/// `M(x̄) = Σ_j cone ∂_T g_j(x̄)`: the cone on all active vertices.
pub fn build_m(n: usize, subdiffs: &[&PolytopeV]) -> ConeFg {
    ConeFg::new(n, subdiffs.iter().flat_map(|p| p.vertices().iter().cloned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionVerdict {
    pub direction: Vec<f64>,
    pub accepted: bool,
}

/// Sampled contingent cone: per-direction verdicts and the cone on the
/// accepted ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSampleReport {
    pub directions: Vec<DirectionVerdict>,
    pub hull: ConeFg,
}

impl ConeSampleReport {
    pub fn accepted(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.directions.iter().filter(|v| v.accepted).map(|v| &v.direction)
    }
}

/// Unit offsets used to perturb a direction: the 3ⁿ − 1 neighbours of the
/// cube in dimensions 1 to 3.
fn mesh(n: usize) -> Vec<Vec<f64>> {
    if n > 3 {
        return sphere_directions(n, 0);
    }
    let mut out = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let v: Vec<f64> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as f64 - 1.0).collect();
        if let Some(u) = unit(&v) {
            out.push(u);
        }
    }
    out
}

/// `d` is accepted when every step `α` of the ladder has some `d′` with
/// `‖d′ − d‖ <= 10α` and `x̄ + αd′` in the set; `d′` ranges over `d` and
/// its mesh neighbours at radii `10α` and `10α/3`.
pub fn direction_in_contingent(set: &impl Membership, xbar: &[f64], d: &[f64]) -> bool {
    let offsets = mesh(xbar.len());
    ALPHAS.iter().all(|&a| {
        let at = |dp: &[f64]| set.contains(&add(xbar, &scale(dp, a)));
        at(d) || [10.0 * a, 10.0 * a / 3.0].iter().any(|&r| offsets.iter().any(|m| at(&add(d, &scale(m, r)))))
    })
}

fn candidate_directions(n: usize, n_dirs: usize, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut dirs = sphere_directions(n, n_dirs);
    for e in extra {
        if let Some(u) = unit(e) {
            if !dirs.iter().any(|d| dist(d, &u) <= 1e-12) {
                dirs.push(u);
            }
        }
    }
    dirs
}

/// Test `n_dirs` sphere directions plus `extra` (typically generators of
/// `D(x̄)`) against the contingent cone of `set` at `x̄`.
pub fn contingent_cone_sample(
    set: &impl Membership,
    xbar: &[f64],
    n_dirs: usize,
    extra: &[Vec<f64>],
) -> Result<ConeSampleReport, GeometryError> {
    let directions: Vec<DirectionVerdict> = candidate_directions(xbar.len(), n_dirs, extra)
        .into_iter()
        .map(|d| {
            let accepted = direction_in_contingent(set, xbar, &d);
            DirectionVerdict { direction: d, accepted }
        })
        .collect();
    let hull = direction_hull(xbar.len(), &directions)?;
    Ok(ConeSampleReport { directions, hull })
}

/// Cone on the accepted directions, with redundant rays removed. In the
/// plane only the ends of each accepted arc (plus a ray every 60° inside
/// long arcs) are kept before pruning.
pub fn direction_hull(n: usize, verdicts: &[DirectionVerdict]) -> Result<ConeFg, GeometryError> {
    let accepted: Vec<&Vec<f64>> = verdicts.iter().filter(|v| v.accepted).map(|v| &v.direction).collect();
    if accepted.is_empty() {
        return Ok(ConeFg::zero(n));
    }
    if n >= 2 && accepted.len() == verdicts.len() && verdicts.len() >= 2 * n {
        return Ok(ConeFg::full(n));
    }
    if n != 2 {
        return ConeFg::new(n, accepted.into_iter().cloned()).pruned(1e-9);
    }
    let mut sorted: Vec<(f64, &DirectionVerdict)> = verdicts.iter().map(|v| (angle(&v.direction), v)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = sorted.len();
    // Start scanning just after a rejected direction so runs do not wrap.
    let start = (0..k).find(|&i| !sorted[i].1.accepted).map_or(0, |i| (i + 1) % k);
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut run: Vec<(f64, &Vec<f64>)> = Vec::new();
    let flush = |run: &mut Vec<(f64, &Vec<f64>)>, kept: &mut Vec<Vec<f64>>| {
        if let (Some(first), Some(last)) = (run.first(), run.last()) {
            kept.push(first.1.clone());
            let mut at = first.0;
            for (t, d) in run.iter() {
                if (t - at).rem_euclid(2.0 * PI) >= PI / 3.0 {
                    kept.push((*d).clone());
                    at = *t;
                }
            }
            kept.push(last.1.clone());
        }
        run.clear();
    };
    for step in 0..k {
        let (t, v) = sorted[(start + step) % k];
        if v.accepted {
            run.push((t, &v.direction));
        } else {
            flush(&mut run, &mut kept);
        }
    }
    flush(&mut run, &mut kept);
    ConeFg::new(n, kept).pruned(1e-9)
}

fn angle(d: &[f64]) -> f64 {
    d[1].atan2(d[0]).rem_euclid(2.0 * PI)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NearConvexVerdict {
    /// No violation found on the step ladder; not a proof.
    Pass { tested: usize },
    /// `x̄ + t(y − x̄)` left the set for this `y` and `t`.
    Fail { witness: Vec<f64>, t: f64 },
}

impl NearConvexVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, NearConvexVerdict::Pass { .. })
    }
}

/// For each sample `y` of the set, require `x̄ + t(y − x̄)` in the set for
/// `t = 2^-10, …, 2^-20`. Samples outside the set are skipped.
pub fn nearly_convex_probe(set: &impl Membership, xbar: &[f64], samples: &[Vec<f64>]) -> NearConvexVerdict {
    let mut tested = 0;
    for y in samples.iter().filter(|y| set.contains(y)) {
        tested += 1;
        let dir = sub(y, xbar);
        for k in 10..=20 {
            let t = 0.5f64.powi(k);
            if !set.contains(&add(xbar, &scale(&dir, t))) {
                return NearConvexVerdict::Fail { witness: y.clone(), t };
            }
        }
    }
    NearConvexVerdict::Pass { tested }
}

/// Declared samples, then the other anchors, then up to
/// [`NEAR_CONVEX_RANDOM`] random points of `K` from the box.
pub fn near_convex_samples(inst: &Instance, xbar: &[f64], settings: &Settings) -> Vec<Vec<f64>> {
    let k = inst.oracle(SetKind::K);
    let mut out: Vec<Vec<f64>> = inst.samples.iter().filter(|y| k.contains(y)).cloned().collect();
    for a in &inst.anchors {
        if dist(&a.xbar, xbar) > 0.0 && k.contains(&a.xbar) {
            out.push(a.xbar.clone());
        }
    }
    if let Some(bbox) = &inst.bbox {
        let mut rng = settings.rng();
        let mut found = 0;
        for _ in 0..200 {
            for y in box_draws(bbox, 500, &mut rng) {
                if found < NEAR_CONVEX_RANDOM && k.contains(&y) {
                    out.push(y);
                    found += 1;
                }
            }
            if found >= NEAR_CONVEX_RANDOM {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrcqVerdict {
    pub holds: bool,
    /// Optimal separation margin; `None` when no constraint is active.
    pub delta: Option<f64>,
    /// Separating direction scaled to `‖ν‖_∞ = 1`, when the qualification holds.
    pub witness: Option<Vec<f64>>,
}

/// Maximize `δ` subject to `⟨v, ν⟩ + δ <= 0` for every active vertex `v` and
/// `‖ν‖_∞ <= 1`; among optimal `ν`, the one of least ℓ¹ norm is reported.
pub fn check_nrcq(n: usize, subdiffs: &[&PolytopeV]) -> Result<NrcqVerdict, GeometryError> {
    let verts: Vec<&Vec<f64>> = subdiffs.iter().flat_map(|p| p.vertices()).collect();
    if verts.is_empty() {
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        return Ok(NrcqVerdict { holds: true, delta: None, witness: Some(e) });
    }
    // Variables (ν, δ, s) with s >= |ν| for the second stage.
    let dim = 2 * n + 1;
    let mut cons = Vec::new();
    for v in &verts {
        let mut a = vec![0.0; dim];
        a[..n].copy_from_slice(v);
        a[n] = 1.0;
        cons.push(Halfspace::new(a, 0.0));
    }
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; dim];
            a[i] = s;
            cons.push(Halfspace::new(a, 1.0));
            let mut b = vec![0.0; dim];
            b[i] = s;
            b[n + 1 + i] = -1.0;
            cons.push(Halfspace::new(b, 0.0));
        }
    }
    let mut obj = vec![0.0; dim];
    obj[n] = 1.0;
    let first = lp_solve(dim, &cons, Some(&obj), Sense::Max)?;
    let delta = match (first.status, first.objective) {
        (LpStatus::Feasible, Some(v)) => v,
        _ => return Err(GeometryError::Infeasible),
    };
    if delta <= TOL_NRCQ {
        return Ok(NrcqVerdict { holds: false, delta: Some(delta), witness: None });
    }
    let mut floor = vec![0.0; dim];
    floor[n] = -1.0;
    cons.push(Halfspace::new(floor, -(delta - 1e-9 * delta.max(1.0))));
    let mut l1 = vec![0.0; dim];
    for c in l1.iter_mut().skip(n + 1) {
        *c = 1.0;
    }
    let second = lp_solve(dim, &cons, Some(&l1), Sense::Min)?;
    let witness = second.witness.map(|z| {
        let nu = z[..n].to_vec();
        let m = nu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            nu.iter().map(|v| v / m).collect()
        } else {
            nu
        }
    });
    Ok(NrcqVerdict { holds: true, delta: Some(delta), witness })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacqVerdict {
    pub holds: bool,
    pub generators: Vec<Vec<f64>>,
    /// Generators of `D(x̄)` that failed the contingent test.
    pub missing: Vec<Vec<f64>>,
}

/// `D(x̄) ⊆ T_K̃(x̄)`, judged on the generators of `D(x̄)`: each must be
/// within [`NACQ_ANGLE`] of an accepted direction and pass the contingent
/// test itself.
pub fn check_nacq(d: &ConeH, report: &ConeSampleReport, set: &impl Membership, xbar: &[f64]) -> NacqVerdict {
    let generators = d.generators().rays().to_vec();
    let missing: Vec<Vec<f64>> = generators
        .iter()
        .filter(|g| {
            let near = report.accepted().any(|a| dist(a, g) <= NACQ_ANGLE);
            !(near && direction_in_contingent(set, xbar, g))
        })
        .cloned()
        .collect();
    NacqVerdict { holds: missing.is_empty(), generators, missing }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarMethod {
    /// Normal cone of the declared H-representation.
    Hrep,
    /// Sampled polar test on box samples.
    Sampled,
}

/// An estimate of `(W − x̄)°`.
#[derive(Debug, Clone)]
pub struct PolarEstimate {
    pub cone: ConeFg,
    pub method: PolarMethod,
    pub feasible_samples: usize,
    sampler: Option<PolarSampler>,
    accepted: Vec<Vec<f64>>,
}

impl PolarEstimate {
    pub fn provenance(&self) -> Provenance {
        match self.method {
            PolarMethod::Hrep => Provenance::Exact,
            PolarMethod::Sampled => Provenance::Sampled,
        }
    }

    /// Exact estimates come straight from a normal cone.
    pub fn exact(cone: ConeFg) -> Self {
        Self { cone, method: PolarMethod::Hrep, feasible_samples: 0, sampler: None, accepted: Vec::new() }
    }

    /// Sphere directions (with boundary refinement in the plane) and
    /// `candidates` tested against `sampler`.
    pub fn sampled(sampler: PolarSampler, n: usize, n_dirs: usize, candidates: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let mut verdicts: Vec<DirectionVerdict> = candidate_directions(n, n_dirs, candidates)
            .into_iter()
            .map(|d| {
                let accepted = sampler.test(&d);
                DirectionVerdict { direction: d, accepted }
            })
            .collect();
        if n == 2 {
            // The accepted set of a fixed sample is a convex cone, so its
            // arc ends can be located by bisection between neighbours.
            let mut by_angle: Vec<(f64, bool)> = verdicts.iter().map(|v| (angle(&v.direction), v.accepted)).collect();
            by_angle.sort_by(|a, b| a.0.total_cmp(&b.0));
            let k = by_angle.len();
            for i in 0..k {
                let (t0, a0) = by_angle[i];
                let (mut t1, a1) = by_angle[(i + 1) % k];
                if t1 <= t0 {
                    t1 += 2.0 * PI;
                }
                if a0 == a1 {
                    continue;
                }
                let (mut good, mut bad) = if a0 { (t0, t1) } else { (t1, t0) };
                for _ in 0..40 {
                    let mid = 0.5 * (good + bad);
                    if sampler.test(&[mid.cos(), mid.sin()]) {
                        good = mid;
                    } else {
                        bad = mid;
                    }
                }
                verdicts.push(DirectionVerdict { direction: vec![good.cos(), good.sin()], accepted: true });
            }
        }
        let cone = direction_hull(n, &verdicts)?;
        let accepted = verdicts.into_iter().filter(|v| v.accepted).map(|v| v.direction).collect();
        Ok(Self {
            cone,
            method: PolarMethod::Sampled,
            feasible_samples: sampler.feasible_samples(),
            sampler: Some(sampler),
            accepted,
        })
    }

    /// Membership of `u` in the polar: exact for an H-representation,
    /// otherwise the sampled test.
    pub fn contains(&self, u: &[f64]) -> Result<bool, GeometryError> {
        match &self.sampler {
            Some(s) => Ok(s.test(u)),
            None => cone_contains(&Cone::Fg(self.cone.clone()), u, TOL_EXACT_CONE),
        }
    }

    /// The polar is contained in `outer`.
    pub fn within(&self, outer: &Cone) -> Result<bool, GeometryError> {
        match self.method {
            PolarMethod::Hrep => cone_includes(outer, &Cone::Fg(self.cone.clone()), TOL_EXACT_CONE),
            PolarMethod::Sampled => {
                for u in &self.accepted {
                    if !cone_contains(outer, u, TOL_SAMPLED_CONE)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    /// The cone `inner` is contained in the polar.
    pub fn includes(&self, inner: &ConeFg) -> Result<bool, GeometryError> {
        for r in inner.rays() {
            if !self.contains(r)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Polar estimates of `K − x̄` and `K̃ − x̄` at one anchor.
///
/// `K̃` uses the declared H-representation when present and consistent with
/// the constraints; otherwise both sets are sampled from one shared set of
/// box draws. `candidates` (rays of `M(x̄)`, normals of `C`) join the tested
/// directions.
pub fn polar_estimates(
    inst: &Instance,
    xbar: &[f64],
    settings: &Settings,
    candidates: &[Vec<f64>],
) -> Result<(Result<PolarEstimate, OracleError>, Result<PolarEstimate, OracleError>), Error> {
    let n = inst.n;
    let n_dirs = settings.dirs_for(n);
    let hrep_ok = inst.hrep_check.as_ref().map_or(true, |c| c.agrees());
    let exact_kt = match (&inst.feasible_hrep, hrep_ok) {
        (Some(h), true) => Some(PolarEstimate::exact(normal_cone(h, xbar, 1e-9)?)),
        _ => None,
    };
    let Some(bbox) = &inst.bbox else {
        let missing = || OracleError::Inconclusive("no box to sample from".into());
        return Ok((Err(missing()), exact_kt.ok_or_else(missing)));
    };
    let mut rng = settings.rng();
    let draws = box_draws(bbox, settings.polar_samples, &mut rng);
    let extra: Vec<Vec<f64>> = inst.samples.iter().chain(inst.anchors.iter().map(|a| &a.xbar)).cloned().collect();
    let sample = |kind: SetKind| -> Result<Result<PolarEstimate, OracleError>, Error> {
        let oracle: FeasibilityOracle<'_> = inst.oracle(kind);
        match PolarSampler::from_draws(&oracle, &draws, bbox, xbar, &extra) {
            Ok(s) => Ok(Ok(PolarEstimate::sampled(s, n, n_dirs, candidates)?)),
            Err(e) => Ok(Err(e)),
        }
    };
    let pk = sample(SetKind::K)?;
    let pkt = match exact_kt {
        Some(e) => Ok(e),
        None => sample(SetKind::KTilde)?,
    };
    Ok((pk, pkt))
}

/// Which hypothesis explains a failed equality `M(x̄) = (K − x̄)° = (K̃ − x̄)°`.
#[derive(Debug, Clone, PartialEq)]
pub enum Attribution {
    Consistent,
    /// Near convexity and/or the Abadie qualification failed.
    HypothesisFailure(Vec<&'static str>),
    /// Equality failed although both hypotheses passed.
    Defect,
    Inconclusive,
}

/// Tangent-cone inclusions and the polar identity at an anchor.
#[derive(Debug, Clone)]
pub struct PolarAudit {
    pub near_convex: NearConvexVerdict,
    pub contingent: ConeSampleReport,
    /// Every accepted contingent direction satisfies `D(x̄)`.
    pub t_in_d: bool,
    pub t_outside_d: Vec<Vec<f64>>,
    pub nacq: NacqVerdict,
    pub d: ConeH,
    pub m: ConeFg,
    pub polar_k: Result<PolarEstimate, OracleError>,
    pub polar_kt: Result<PolarEstimate, OracleError>,
    pub m_in_polar_k: Option<bool>,
    pub polar_k_in_m: Option<bool>,
    pub m_in_polar_kt: Option<bool>,
    pub polar_kt_in_m: Option<bool>,
}

impl PolarAudit {
    /// `M(x̄) = (K − x̄)°` as judged by the audit.
    pub fn m_is_polar_k(&self) -> Option<bool> {
        Some(self.m_in_polar_k? && self.polar_k_in_m?)
    }

    pub fn identity_holds(&self) -> Option<bool> {
        let all = [self.m_in_polar_k, self.polar_k_in_m, self.m_in_polar_kt, self.polar_kt_in_m];
        if all.iter().any(|v| *v == Some(false)) {
            Some(false)
        } else if all.iter().all(|v| v.is_some()) {
            Some(true)
        } else {
            None
        }
    }

    pub fn attribution(&self) -> Attribution {
        match self.identity_holds() {
            Some(true) => Attribution::Consistent,
            None => Attribution::Inconclusive,
            Some(false) => {
                let mut failed = Vec::new();
                if !self.near_convex.passed() {
                    failed.push("near convexity");
                }
                if !self.nacq.holds {
                    failed.push("abadie qualification");
                }
                if failed.is_empty() {
                    Attribution::Defect
                } else {
                    Attribution::HypothesisFailure(failed)
                }
            }
        }
    }
}

/// Sampled contingent cone of `K̃` at `x̄` with the generators of `D(x̄)`
/// among the tested directions.
pub fn contingent_at(inst: &Instance, local: &LocalData, settings: &Settings) -> Result<ConeSampleReport, Error> {
    let d = local.d();
    let gens = d.generators().rays().to_vec();
    Ok(contingent_cone_sample(&inst.oracle(SetKind::KTilde), &local.xbar, settings.dirs_for(inst.n), &gens)?)
}

pub fn audit_polar_identity(inst: &Instance, local: &LocalData, settings: &Settings) -> Result<PolarAudit, Error> {
    let xbar = &local.xbar;
    let d = local.d();
    let m = local.m();
    let k = inst.oracle(SetKind::K);
    let kt = inst.oracle(SetKind::KTilde);

    let near_convex = nearly_convex_probe(&k, xbar, &near_convex_samples(inst, xbar, settings));
    let contingent = contingent_at(inst, local, settings)?;
    let d_cone = Cone::H(d.clone());
    let mut t_outside_d = Vec::new();
    for a in contingent.accepted() {
        if !cone_contains(&d_cone, a, TOL_TANGENT_IN_D)? {
            t_outside_d.push(a.clone());
        }
    }
    let nacq = check_nacq(&d, &contingent, &kt, xbar);

    let mut candidates: Vec<Vec<f64>> = m.rays().to_vec();
    candidates.extend(inst.c.halfspaces().iter().map(|h| h.normal.clone()));
    let (polar_k, polar_kt) = polar_estimates(inst, xbar, settings, &candidates)?;
    let m_cone = Cone::Fg(m.clone());
    let inclusions = |p: &Result<PolarEstimate, OracleError>| -> Result<(Option<bool>, Option<bool>), Error> {
        match p {
            Ok(p) => Ok((Some(p.includes(&m)?), Some(p.within(&m_cone)?))),
            Err(_) => Ok((None, None)),
        }
    };
    let (m_in_polar_k, polar_k_in_m) = inclusions(&polar_k)?;
    let (m_in_polar_kt, polar_kt_in_m) = inclusions(&polar_kt)?;
    Ok(PolarAudit {
        near_convex,
        t_in_d: t_outside_d.is_empty(),
        t_outside_d,
        contingent,
        nacq,
        d,
        m,
        polar_k,
        polar_kt,
        m_in_polar_k,
        polar_k_in_m,
        m_in_polar_kt,
        polar_kt_in_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cones_equal, polar_fg, Polyhedron};
    use crate::tanconvex::{dir_deriv, ConstraintFn};

    struct Whole(usize);

    impl Membership for Whole {
        fn dim(&self) -> usize {
            self.0
        }
        fn contains(&self, _: &[f64]) -> bool {
            true
        }
    }

    fn poly(vs: &[&[f64]]) -> PolytopeV {
        PolytopeV::new(vs.iter().map(|v| v.to_vec()).collect()).unwrap()
    }

    fn wedge() -> Polyhedron {
        // {x1 >= x2 >= 0}
        Polyhedron::new(2, vec![Halfspace::new(vec![-1.0, 1.0], 0.0), Halfspace::new(vec![0.0, -1.0], 0.0)]).unwrap()
    }

    #[test]
    fn d_and_m_of_kinked_constraints() {
        let g1 = poly(&[&[-1.0, -1.0], &[-1.0, 1.0]]);
        let g2 = poly(&[&[0.0, 2.0]]);
        let g3 = poly(&[&[0.0, -2.0]]);
        let d = build_d(2, &[&g1, &g2, &g3]);
        let c = Cone::H(d.clone());
        assert!(cone_contains(&c, &[1.0, 0.0], 1e-12).unwrap());
        assert!(!cone_contains(&c, &[0.0, 1.0], 1e-12).unwrap());
        assert!(cones_equal(&c, &Cone::Fg(ConeFg::new(2, vec![vec![1.0, 0.0]])), 1e-9).unwrap());
        let m = build_m(2, &[&g1, &g2, &g3]);
        assert!(cones_equal(&Cone::H(polar_fg(&m)), &c, 1e-12).unwrap());
    }

    #[test]
    fn m_of_opposite_singletons_is_the_line() {
        let m = build_m(1, &[&poly(&[&[-12.0]]), &poly(&[&[2.0]])]);
        assert!(cones_equal(&Cone::Fg(m), &Cone::Fg(ConeFg::full(1)), 1e-12).unwrap());
        let zero = build_m(1, &[&poly(&[&[0.0]]), &poly(&[&[0.0]])]);
        assert!(zero.is_zero());
        assert!(build_d(1, &[&poly(&[&[0.0]])]).normals().is_empty());
    }

    #[test]
    fn interval_subdiff_gives_nonpositive_ray() {
        let m = build_m(1, &[&poly(&[&[-2.0], &[0.0]])]);
        assert_eq!(m.rays(), &[vec![-1.0]]);
    }

    #[test]
    fn contingent_cone_of_whole_space_and_wedge() {
        let r = contingent_cone_sample(&Whole(2), &[0.0, 0.0], 36, &[]).unwrap();
        assert!(r.directions.iter().all(|v| v.accepted));
        assert_eq!(r.hull, ConeFg::full(2));
        let w = wedge();
        let r = contingent_cone_sample(&w, &[0.0, 0.0], 360, &[]).unwrap();
        let expected = Cone::Fg(ConeFg::new(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]));
        assert!(cones_equal(&Cone::Fg(r.hull.clone()), &expected, 1e-9).unwrap());
        assert!(direction_in_contingent(&w, &[0.0, 0.0], &[1.0, 0.5]));
        assert!(!direction_in_contingent(&w, &[0.0, 0.0], &[1.0, -0.01]));
    }

    #[test]
    fn contingent_cone_of_a_point_is_zero() {
        let p = Polyhedron::new(1, vec![Halfspace::new(vec![1.0], 0.0), Halfspace::new(vec![-1.0], 0.0)]).unwrap();
        let r = contingent_cone_sample(&p, &[0.0], 2, &[]).unwrap();
        assert!(r.hull.is_zero());
    }

    #[test]
    fn near_convexity_of_disconnected_set() {
        // {2} ∪ [4, ∞)
        struct Gap;
        impl Membership for Gap {
            fn dim(&self) -> usize {
                1
            }
            fn contains(&self, x: &[f64]) -> bool {
                x[0] == 2.0 || x[0] >= 4.0
            }
        }
        match nearly_convex_probe(&Gap, &[2.0], &[vec![4.0]]) {
            NearConvexVerdict::Fail { witness, .. } => assert_eq!(witness, vec![4.0]),
            v => panic!("{v:?}"),
        }
        assert!(nearly_convex_probe(&wedge(), &[0.0, 0.0], &[vec![1.0, 0.5], vec![3.0, 0.0]]).passed());
    }

    #[test]
    fn nrcq_examples() {
        let v = check_nrcq(2, &[&poly(&[&[-1.0, 0.0]])]).unwrap();
        assert!(v.holds);
        let w = v.witness.unwrap();
        assert!(dist(&w, &[1.0, 0.0]) < 1e-9, "{w:?}");
        let v = check_nrcq(1, &[&poly(&[&[-3.0]])]).unwrap();
        assert!(v.holds && dist(&v.witness.unwrap(), &[1.0]) < 1e-9);
        let g1 = poly(&[&[-1.0, -1.0], &[-1.0, 1.0]]);
        let v = check_nrcq(2, &[&g1, &poly(&[&[0.0, 2.0]]), &poly(&[&[0.0, -2.0]])]).unwrap();
        assert!(!v.holds && v.delta.unwrap().abs() < 1e-12);
        assert!(check_nrcq(2, &[]).unwrap().holds);
    }

    #[test]
    fn nacq_on_wedge() {
        let w = wedge();
        let d = ConeH::new(2, vec![vec![-1.0, 1.0], vec![0.0, -1.0]]);
        let r = contingent_cone_sample(&w, &[0.0, 0.0], 360, d.generators().rays()).unwrap();
        assert!(check_nacq(&d, &r, &w, &[0.0, 0.0]).holds);
        let too_big = ConeH::new(2, vec![vec![0.0, -1.0]]);
        let v = check_nacq(&too_big, &r, &w, &[0.0, 0.0]);
        assert!(!v.holds && !v.missing.is_empty());
    }

    #[test]
    fn sampled_polar_of_wedge() {
        let w = wedge();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bbox = [(-1.0, 1.0), (-1.0, 1.0)];
        let s = PolarSampler::new(&w, &bbox, &[0.0, 0.0], 20_000, &[], &mut rng).unwrap();
        let est = PolarEstimate::sampled(s, 2, 360, &[]).unwrap();
        let exact = Cone::H(ConeH::new(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]));
        assert!(cones_equal(&Cone::Fg(est.cone.clone()), &exact, 1e-3).unwrap(), "{:?}", est.cone);
        assert!(est.within(&exact).unwrap());
        assert!(est.contains(&[-1.0, 0.0]).unwrap() && !est.contains(&[0.0, 1.0]).unwrap());
    }

    #[test]
    fn derivative_homogeneity_feeds_d() {
        let g = ConstraintFn::parse("g", "abs(x2) - x1").unwrap();
        assert!((dir_deriv(&g, &[0.0, 0.0], &[1.0, 1.0]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn nrcq_does_not_give_nacq_when_c_is_active() {
        // g = -x with C = (-inf, 0]: K = {0}, D = [0, inf), T = {0}.
        let inst = crate::instance::Instance::from_json(
            r#"{"n": 1, "constraints": [{"name": "g", "expr": "-x1"}],
                "C": {"halfspaces": [{"a": [1], "b": 0}]},
                "anchors": [{"xbar": [0]}], "box": [[-1, 1]]}"#,
        )
        .unwrap();
        let s = Settings::default();
        let local = LocalData::new(&inst, &[0.0], &s).unwrap();
        assert!(check_nrcq(1, &local.active_polytopes()).unwrap().holds);
        let audit = audit_polar_identity(&inst, &local, &s).unwrap();
        assert!(audit.contingent.hull.is_zero());
        assert!(!audit.nacq.holds);
        assert_eq!(audit.nacq.missing, vec![vec![1.0]]);
    }
}
