//! Built-in worked examples. Each instance file carries an `expected`
//! block; [`check_fixture`] recomputes every listed quantity and reports
//! the ones that disagree.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::bestapprox::{equivalence_audit, find_certificate, project_feasible, EquivalenceReport};
use crate::cones::{audit_polar_identity, check_nrcq, LocalData, NearConvexVerdict, PolarEstimate, Settings};
use crate::geometry::{cones_equal, dist, max_abs_diff, Cone, ConeFg, ConeH};
use crate::instance::{Instance, InstanceError};
use crate::oracles::OracleError;
use crate::tanconvex::PolytopeV;
use crate::{Error, Provenance};

pub const BUILTIN: [(&str, &str); 6] = [
    ("ex21", include_str!("../fixtures/ex21.json")),
    ("ex31", include_str!("../fixtures/ex31.json")),
    ("ex3x", include_str!("../fixtures/ex3x.json")),
    ("ex34", include_str!("../fixtures/ex34.json")),
    ("ex41", include_str!("../fixtures/ex41.json")),
    ("ex42", include_str!("../fixtures/ex42.json")),
];

/// Subdifferentials reconstructed numerically are compared at this
/// Hausdorff distance; declared ones at [`TOL_EXACT`].
pub const TOL_SUBDIFF: f64 = 1e-4;
pub const TOL_EXACT: f64 = 1e-8;
pub const TOL_SAMPLED: f64 = 1e-3;

pub fn builtin(id: &str) -> Option<Result<Instance, InstanceError>> {
    BUILTIN.iter().find(|(name, _)| *name == id).map(|(_, text)| Instance::from_json(text))
}

pub fn builtins() -> Result<Vec<Instance>, InstanceError> {
    BUILTIN.iter().map(|(_, text)| Instance::from_json(text)).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum ConeSpec {
    Rays(Vec<Vec<f64>>),
    Normals(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionSpec {
    x: Vec<f64>,
    p: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateSpec {
    x: Vec<f64>,
    lambda: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Expected {
    source: String,
    #[serde(default)]
    anchor: usize,
    active: Option<Vec<String>>,
    subdiff: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    cones: Option<BTreeMap<String, ConeSpec>>,
    nrcq: Option<bool>,
    nacq: Option<bool>,
    near_convex: Option<bool>,
    near_convex_witness: Option<Vec<f64>>,
    strong_chip: Option<bool>,
    identity_holds: Option<bool>,
    equivalence_agree: Option<bool>,
    projections: Option<Vec<ProjectionSpec>>,
    certificates: Option<Vec<CertificateSpec>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOutcome {
    pub id: String,
    /// Where the expected values come from; printed with every mismatch.
    pub source: String,
    pub checks: usize,
    pub mismatches: Vec<String>,
}

impl FixtureOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

struct Tally {
    checks: usize,
    mismatches: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.mismatches.push(what());
        }
    }
}

fn tol_for(p: Provenance) -> f64 {
    match p {
        Provenance::Sampled => TOL_SAMPLED,
        _ => TOL_EXACT,
    }
}

fn spec_cone(n: usize, spec: &ConeSpec) -> Cone {
    match spec {
        ConeSpec::Rays(r) => Cone::Fg(ConeFg::new(n, r.clone())),
        ConeSpec::Normals(v) => Cone::H(ConeH::new(n, v.clone())),
    }
}

fn describe(c: &Cone) -> String {
    match c {
        Cone::Fg(f) => format!("rays {:?}", f.rays()),
        Cone::H(h) => format!("normals {:?}", h.normals()),
    }
}

fn polar_cone(p: &Result<PolarEstimate, OracleError>) -> Result<(Cone, Provenance), String> {
    match p {
        Ok(e) => Ok((Cone::Fg(e.cone.clone()), e.provenance())),
        Err(e) => Err(e.to_string()),
    }
}

/// Recompute everything listed in the instance's `expected` block.
pub fn check_fixture(inst: &Instance, settings: &Settings) -> Result<FixtureOutcome, Error> {
    let raw = inst.expected.clone().ok_or_else(|| Error::Input(format!("{}: no expected block", inst.id)))?;
    let exp: Expected =
        serde_json::from_value(raw).map_err(|e| Error::Input(format!("{}: expected block: {e}", inst.id)))?;
    let anchor = inst
        .anchor(exp.anchor)
        .ok_or_else(|| Error::Input(format!("{}: no anchor {}", inst.id, exp.anchor)))?;
    let n = inst.n;
    let local = LocalData::new(inst, &anchor.xbar, settings)?;
    let audit = audit_polar_identity(inst, &local, settings)?;
    let mut t = Tally { checks: 0, mismatches: Vec::new() };
    let names = |idx: &[usize]| idx.iter().map(|&j| inst.constraints[j].name().to_string()).collect::<Vec<_>>();

    if let Some(active) = &exp.active {
        let got = names(&local.active);
        t.check(&got == active, || format!("active set: expected {active:?}, got {got:?}"));
    }
    for (name, verts) in exp.subdiff.iter().flatten() {
        let j = inst
            .constraints
            .iter()
            .position(|g| g.name() == name)
            .ok_or_else(|| Error::Input(format!("{}: expected subdiff for unknown constraint {name}", inst.id)))?;
        let want = PolytopeV::new(verts.clone()).map_err(|e| Error::Input(format!("{}: {name}: {e}", inst.id)))?;
        match &local.subdiffs[j] {
            Some((got, p)) => {
                let tol = if *p == Provenance::Exact { TOL_EXACT } else { TOL_SUBDIFF };
                let h = got.hausdorff(&want);
                t.check(h <= tol, || {
                    format!("subdifferential of {name}: expected {verts:?}, got {:?} (Hausdorff {h:e})", got.vertices())
                });
            }
            None => t.check(false, || format!("subdifferential of {name}: not computable")),
        }
    }
    for (name, spec) in exp.cones.iter().flatten() {
        let want = spec_cone(n, spec);
        let got: Result<(Cone, Provenance), String> = match name.as_str() {
            "D" => Ok((Cone::H(local.d()), local.provenance())),
            "M" => Ok((Cone::Fg(local.m()), local.provenance())),
            "T" => Ok((Cone::Fg(audit.contingent.hull.clone()), Provenance::Sampled)),
            "polar_K" => polar_cone(&audit.polar_k),
            "polar_Ktilde" => polar_cone(&audit.polar_kt),
            other => return Err(Error::Input(format!("{}: unknown cone {other}", inst.id))),
        };
        match got {
            Ok((c, p)) => {
                let eq = cones_equal(&c, &want, tol_for(p))?;
                t.check(eq, || format!("cone {name}: expected {}, got {}", describe(&want), describe(&c)));
            }
            Err(e) => t.check(false, || format!("cone {name}: {e}")),
        }
    }
    if let Some(want) = exp.nrcq {
        let got = check_nrcq(n, &local.active_polytopes())?.holds;
        t.check(got == want, || format!("NRCQ: expected {want}, got {got}"));
    }
    if let Some(want) = exp.nacq {
        let got = audit.nacq.holds;
        t.check(got == want, || format!("NACQ: expected {want}, got {got}"));
    }
    if let Some(want) = exp.near_convex {
        let got = audit.near_convex.passed();
        t.check(got == want, || format!("near convexity: expected {want}, got {got}"));
    }
    if let Some(want) = &exp.near_convex_witness {
        let got = match &audit.near_convex {
            NearConvexVerdict::Fail { witness, .. } => Some(witness.clone()),
            NearConvexVerdict::Pass { .. } => None,
        };
        t.check(got.as_ref().is_some_and(|w| max_abs_diff(w, want) <= TOL_EXACT), || {
            format!("near-convexity witness: expected {want:?}, got {got:?}")
        });
    }
    if let Some(want) = exp.identity_holds {
        let got = audit.identity_holds();
        t.check(got == Some(want), || format!("M = (K - x̄)° = (K̃ - x̄)°: expected {want}, got {got:?}"));
    }
    if exp.strong_chip.is_some() || exp.equivalence_agree.is_some() {
        let eq: EquivalenceReport = equivalence_audit(inst, &local, &audit, &anchor.xs, settings)?;
        if let Some(want) = exp.strong_chip {
            let got = eq.chip.holds;
            t.check(got == Some(want), || format!("strong CHIP: expected {want}, got {got:?}"));
        }
        if let Some(want) = exp.equivalence_agree {
            let got = eq.all_agree();
            t.check(got == want, || format!("projection, perturbation and stationarity verdicts agree: expected {want}, got {got}"));
        }
    }
    for ps in exp.projections.iter().flatten() {
        let got = project_feasible(inst, &ps.x)?;
        let ok = match got.provenance {
            Provenance::Sampled => (dist(&ps.x, &ps.p) - dist(&ps.x, &got.point)).abs() <= TOL_SAMPLED,
            _ => max_abs_diff(&got.point, &ps.p) <= TOL_EXACT,
        };
        t.check(ok, || format!("projection of {:?}: expected {:?}, got {:?}", ps.x, ps.p, got.point));
    }
    for cs in exp.certificates.iter().flatten() {
        match find_certificate(inst, &local, &cs.x)? {
            Some(c) => {
                let ok = c.lambda.len() == cs.lambda.len() && max_abs_diff(&c.lambda, &cs.lambda) <= c.tol;
                t.check(ok, || format!("multipliers at {:?}: expected {:?}, got {:?}", cs.x, cs.lambda, c.lambda));
            }
            None => t.check(false, || format!("multipliers at {:?}: expected {:?}, found none", cs.x, cs.lambda)),
        }
    }
    Ok(FixtureOutcome { id: inst.id.clone(), source: exp.source, checks: t.checks, mismatches: t.mismatches })
}
