//! Problem instances: constraints `g_j(x) <= 0`, the polyhedron `C`, anchor
//! points and the sampling box, loaded from JSON and validated on load.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::geometry::{GeometryError, Halfspace, Polyhedron};
use crate::tanconvex::{ConstraintFn, PolytopeV, TanError};

/// Feasibility tolerance of the membership oracles. Kept far below every
/// step the samplers take so that higher-order boundary terms register.
pub const TOL_FEAS: f64 = 1e-12;

/// Points checked when comparing a declared H-representation of `K̃` with
/// the constraint oracle.
pub const HREP_CHECK_POINTS: usize = 1000;

const DECLARED_CHECK_DIRS: usize = 360;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("constraint {name}: {source}")]
    Expr { name: String, source: ExprError },
    #[error("constraint {name} uses x{index} but the instance has n = {n}")]
    VariableOutOfRange { name: String, index: usize, n: usize },
    #[error("declared subdifferential of {name}: {message}")]
    Subdiff { name: String, message: String },
    #[error("declared subdifferential rejected: {0}")]
    Inconsistent(TanError),
    #[error("anchor {index} is not in C ∩ K: {detail}")]
    AnchorInfeasible { index: usize, detail: String },
    #[error("anchor {index} lies outside the box")]
    AnchorOutsideBox { index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<serde_json::Error> for InstanceError {
    fn from(e: serde_json::Error) -> Self {
        InstanceError::Json { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

/// JSON form of a halfspace `{x : ⟨a, x⟩ <= b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceFile {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PolyhedronFile {
    #[serde(default)]
    pub halfspaces: Vec<HalfspaceFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFile {
    pub name: String,
    pub expr: String,
    /// Point key (comma-joined coordinates) → vertex list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdiff: Option<BTreeMap<String, Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorFile {
    pub xbar: Vec<f64>,
    #[serde(default)]
    pub xs: Vec<Vec<f64>>,
}

/// The normative instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub n: usize,
    pub constraints: Vec<ConstraintFile>,
    #[serde(rename = "C", default)]
    pub c: PolyhedronFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_hrep: Option<PolyhedronFile>,
    pub anchors: Vec<AnchorFile>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Vec<[f64; 2]>>,
    /// Extra points of `K` for the near-convexity probe.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Vec<f64>>,
    /// Expected values for fixtures; opaque to the loader.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub xbar: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

/// Outcome of comparing `feasible_hrep` with the constraint oracle on
/// random box points.
#[derive(Debug, Clone, PartialEq)]
pub struct HrepCheck {
    pub checked: usize,
    pub disagreements: usize,
    pub first_disagreement: Option<Vec<f64>>,
}

impl HrepCheck {
    pub fn agrees(&self) -> bool {
        self.disagreements == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub n: usize,
    pub constraints: Vec<ConstraintFn>,
    pub c: Polyhedron,
    pub feasible_hrep: Option<Polyhedron>,
    pub anchors: Vec<Anchor>,
    pub bbox: Option<Vec<(f64, f64)>>,
    pub samples: Vec<Vec<f64>>,
    pub expected: Option<serde_json::Value>,
    /// `None` without a box or without `feasible_hrep`.
    pub hrep_check: Option<HrepCheck>,
    file: InstanceFile,
}

/// Which set a membership oracle tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    /// `{x : g_j(x) <= 0 for all j}`.
    K,
    /// `C ∩ K`.
    KTilde,
    C,
}

/// Deterministic membership test built from an instance.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityOracle<'a> {
    inst: &'a Instance,
    kind: SetKind,
    tol: f64,
}

impl<'a> FeasibilityOracle<'a> {
    pub fn new(inst: &'a Instance, kind: SetKind) -> Self {
        Self { inst, kind, tol: TOL_FEAS }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.inst.n
    }

    /// Evaluation errors (a square root of a negative number) count as "out".
    pub fn contains(&self, x: &[f64]) -> bool {
        let in_k = || self.inst.constraints.iter().all(|g| matches!(g.eval(x), Ok(v) if v <= self.tol));
        match self.kind {
            SetKind::K => in_k(),
            SetKind::C => self.inst.c.contains(x, self.tol),
            SetKind::KTilde => self.inst.c.contains(x, self.tol) && in_k(),
        }
    }
}

/// Parse a point key such as `"0,-1.5"`.
pub fn parse_point_key(key: &str) -> Option<Vec<f64>> {
    key.split(',').map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite())).collect()
}

/// Point key in the canonical comma-joined form.
pub fn point_key(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

fn polyhedron_from(n: usize, p: &PolyhedronFile, what: &str) -> Result<Polyhedron, InstanceError> {
    for (i, h) in p.halfspaces.iter().enumerate() {
        if h.a.len() != n {
            return Err(InstanceError::Schema(format!("{what} halfspace {i} has {} coefficients, n = {n}", h.a.len())));
        }
        if !h.b.is_finite() || h.a.iter().any(|v| !v.is_finite()) {
            return Err(InstanceError::Schema(format!("{what} halfspace {i} has a non-finite entry")));
        }
    }
    Ok(Polyhedron::new(n, p.halfspaces.iter().map(|h| Halfspace::new(h.a.clone(), h.b)).collect())?)
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: InstanceFile) -> Result<Self, InstanceError> {
        let n = file.n;
        if n == 0 {
            return Err(InstanceError::Schema("n must be at least 1".into()));
        }
        let mut constraints = Vec::with_capacity(file.constraints.len());
        for cf in &file.constraints {
            let mut g = ConstraintFn::parse(cf.name.clone(), cf.expr.clone())
                .map_err(|source| InstanceError::Expr { name: cf.name.clone(), source })?;
            if let Some(index) = g.body().max_var().filter(|&i| i >= n) {
                return Err(InstanceError::VariableOutOfRange { name: cf.name.clone(), index: index + 1, n });
            }
            for (key, verts) in cf.subdiff.iter().flatten() {
                let bad = |message: String| InstanceError::Subdiff { name: cf.name.clone(), message };
                let point = parse_point_key(key).ok_or_else(|| bad(format!("bad point key {key:?}")))?;
                if point.len() != n {
                    return Err(bad(format!("point key {key:?} has {} coordinates", point.len())));
                }
                if verts.is_empty() || verts.iter().any(|v| v.len() != n || v.iter().any(|c| !c.is_finite())) {
                    return Err(bad(format!("vertex list at {key:?} must be non-empty with {n} finite coordinates")));
                }
                let p = PolytopeV::new(verts.clone()).map_err(|e| bad(e.to_string()))?;
                g = g.with_subdiff(point, p);
            }
            g.validate_declared(DECLARED_CHECK_DIRS).map_err(InstanceError::Inconsistent)?;
            constraints.push(g);
        }
        let c = polyhedron_from(n, &file.c, "C")?;
        let feasible_hrep = file.feasible_hrep.as_ref().map(|p| polyhedron_from(n, p, "feasible_hrep")).transpose()?;
        if file.anchors.is_empty() {
            return Err(InstanceError::Schema("at least one anchor is required".into()));
        }
        let bbox = match &file.bbox {
            None => None,
            Some(b) => {
                if b.len() != n || b.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                    return Err(InstanceError::Schema(format!("box needs {n} intervals [lo, hi] with lo < hi")));
                }
                Some(b.iter().map(|[lo, hi]| (*lo, *hi)).collect::<Vec<_>>())
            }
        };
        let anchors: Vec<Anchor> =
            file.anchors.iter().map(|a| Anchor { xbar: a.xbar.clone(), xs: a.xs.clone() }).collect();
        for p in file.samples.iter().chain(anchors.iter().flat_map(|a| std::iter::once(&a.xbar).chain(&a.xs))) {
            if p.len() != n {
                return Err(InstanceError::Schema(format!("point {p:?} does not have {n} coordinates")));
            }
        }
        let mut inst = Instance {
            id: file.id.clone().unwrap_or_else(|| "instance".into()),
            n,
            constraints,
            c,
            feasible_hrep,
            anchors,
            bbox,
            samples: file.samples.clone(),
            expected: file.expected.clone(),
            hrep_check: None,
            file,
        };
        for (index, a) in inst.anchors.iter().enumerate() {
            inst.check_feasible(&a.xbar).map_err(|detail| InstanceError::AnchorInfeasible { index, detail })?;
            if let Some(b) = &inst.bbox {
                if a.xbar.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
                    return Err(InstanceError::AnchorOutsideBox { index });
                }
            }
        }
        inst.hrep_check = inst.compare_hrep();
        Ok(inst)
    }

    /// The file this instance was loaded from.
    pub fn file(&self) -> &InstanceFile {
        &self.file
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("instance file serializes")
    }

    pub fn oracle(&self, kind: SetKind) -> FeasibilityOracle<'_> {
        FeasibilityOracle::new(self, kind)
    }

    /// `Err` describes every violated constraint.
    pub fn check_feasible(&self, x: &[f64]) -> Result<(), String> {
        let mut bad = Vec::new();
        for g in &self.constraints {
            match g.eval(x) {
                Ok(v) if v <= TOL_FEAS => {}
                Ok(v) => bad.push(format!("{} = {v:e}", g.name())),
                Err(e) => bad.push(format!("{}: {e}", g.name())),
            }
        }
        if !self.c.contains(x, TOL_FEAS) {
            bad.push("outside C".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join(", "))
        }
    }

    pub fn anchor(&self, index: usize) -> Option<&Anchor> {
        self.anchors.get(index)
    }

    /// Euclidean diameter of the box, if any.
    pub fn box_diameter(&self) -> Option<f64> {
        self.bbox.as_ref().map(|b| b.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt())
    }

    fn compare_hrep(&self) -> Option<HrepCheck> {
        let (hrep, bbox) = (self.feasible_hrep.as_ref()?, self.bbox.as_ref()?);
        let oracle = self.oracle(SetKind::KTilde);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut check = HrepCheck { checked: 0, disagreements: 0, first_disagreement: None };
        for _ in 0..HREP_CHECK_POINTS {
            let p: Vec<f64> = bbox.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect();
            check.checked += 1;
            // Points within rounding distance of the boundary are not counted.
            let h_in = hrep.contains(&p, 1e-9);
            let h_out = !hrep.contains(&p, -1e-9);
            let o_in = oracle.contains(&p);
            if (h_in && !h_out && !o_in) || (h_out && o_in) {
                check.disagreements += 1;
                check.first_disagreement.get_or_insert(p);
            }
        }
        Some(check)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX42: &str = r#"{
        "id": "t42", "n": 1,
        "constraints": [
            {"name": "g1", "expr": "1 - x1^3", "subdiff": {"1": [[-3]]}},
            {"name": "g2", "expr": "x1^3 - 3*x1^2 + x1 - 3"}
        ],
        "C": {"halfspaces": [{"a": [-1], "b": -1}]},
        "feasible_hrep": {"halfspaces": [{"a": [-1], "b": -1}, {"a": [1], "b": 3}]},
        "anchors": [{"xbar": [1], "xs": [[0], [0.5]]}],
        "box": [[-4, 4]]
    }"#;

    #[test]
    fn loads_and_round_trips() {
        let inst = Instance::from_json(EX42).unwrap();
        assert_eq!(inst.n, 1);
        assert_eq!(inst.constraints.len(), 2);
        assert!(inst.hrep_check.as_ref().unwrap().agrees());
        let again = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(again, inst);
    }

    #[test]
    fn oracle_membership() {
        let inst = Instance::from_json(EX42).unwrap();
        let kt = inst.oracle(SetKind::KTilde);
        assert!(kt.contains(&[1.0]) && kt.contains(&[3.0]) && !kt.contains(&[3.5]) && !kt.contains(&[0.9]));
        assert!(inst.oracle(SetKind::C).contains(&[7.0]));
        assert!(!inst.oracle(SetKind::K).contains(&[0.0]));
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = Instance::from_json("{\n  \"n\": 1,\n  oops }").unwrap_err();
        assert!(matches!(err, InstanceError::Json { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn schema_violations() {
        let missing = r#"{"n": 1, "constraints": []}"#;
        assert!(matches!(Instance::from_json(missing), Err(InstanceError::Json { .. })));
        let no_anchor = r#"{"n": 1, "constraints": [], "anchors": []}"#;
        assert!(matches!(Instance::from_json(no_anchor), Err(InstanceError::Schema(_))));
        let wide = r#"{"n": 1, "constraints": [{"name": "g", "expr": "x2"}], "anchors": [{"xbar": [0]}]}"#;
        assert!(matches!(Instance::from_json(wide), Err(InstanceError::VariableOutOfRange { index: 2, .. })));
        let bad_expr = r#"{"n": 1, "constraints": [{"name": "g", "expr": "x1 +"}], "anchors": [{"xbar": [0]}]}"#;
        assert!(matches!(Instance::from_json(bad_expr), Err(InstanceError::Expr { .. })));
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let text = r#"{"n": 1, "constraints": [{"name": "g", "expr": "1 - x1"}], "anchors": [{"xbar": [0]}]}"#;
        assert!(matches!(Instance::from_json(text), Err(InstanceError::AnchorInfeasible { index: 0, .. })));
    }

    #[test]
    fn inconsistent_subdiff_is_rejected() {
        let text = r#"{"n": 1, "constraints": [{"name": "g", "expr": "abs(x1) - x1", "subdiff": {"0": [[-1], [0]]}}],
                       "anchors": [{"xbar": [0]}]}"#;
        assert!(matches!(Instance::from_json(text), Err(InstanceError::Inconsistent(_))));
    }

    #[test]
    fn hrep_disagreement_is_detected() {
        let text = r#"{"n": 1, "constraints": [{"name": "g", "expr": "x1^2 - 1"}],
                       "feasible_hrep": {"halfspaces": [{"a": [1], "b": 0.5}, {"a": [-1], "b": 1}]},
                       "anchors": [{"xbar": [0]}], "box": [[-2, 2]]}"#;
        let inst = Instance::from_json(text).unwrap();
        let check = inst.hrep_check.unwrap();
        assert!(check.disagreements > 0);
        let p = check.first_disagreement.unwrap();
        assert!(p[0] > 0.5 && p[0] <= 1.0);
    }

    #[test]
    fn point_keys() {
        assert_eq!(parse_point_key("0, -1.5"), Some(vec![0.0, -1.5]));
        assert_eq!(parse_point_key("a"), None);
        assert_eq!(point_key(&[1.0, -0.5]), "1,-0.5");
    }
}
