//! Brute-force references: grid projection, sampled polar membership and a
//! generator of random instances whose feasible set is a known polyhedron.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{dist, dot, norm, scale, sub, unit, Polyhedron};
use crate::instance::{
    point_key, AnchorFile, ConstraintFile, FeasibilityOracle, HalfspaceFile, Instance, InstanceError, InstanceFile,
    PolyhedronFile, TOL_FEAS,
};

/// Fewer feasible random samples than this make a sampled verdict inconclusive.
pub const MIN_FEASIBLE_SAMPLES: usize = 50;

/// Relative tolerance of the sampled polar test, scaled by the box diameter.
pub const TOL_POLAR_REL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("random instance rejected on load: {0}")]
    Generator(#[from] InstanceError),
}

/// A set that can answer membership queries.
pub trait Membership: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, x: &[f64]) -> bool;
}

impl Membership for FeasibilityOracle<'_> {
    fn dim(&self) -> usize {
        FeasibilityOracle::dim(self)
    }

    fn contains(&self, x: &[f64]) -> bool {
        FeasibilityOracle::contains(self, x)
    }
}

impl Membership for Polyhedron {
    fn dim(&self) -> usize {
        Polyhedron::dim(self)
    }

    fn contains(&self, x: &[f64]) -> bool {
        Polyhedron::contains(self, x, TOL_FEAS)
    }
}

/// Grid search parameters.
///
/// Round 0 covers the box with `resolution` points per axis; every later
/// round recentres the grid on the incumbent and shrinks its half-width by
/// `shrink`. From a box of width `w` the final spacing is
/// `w / (resolution − 1) / shrink^rounds`, about `1.2e-5` for a unit
/// half-width at the defaults, which leaves the distance within `1e-4` of
/// the minimum for convex sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bbox: Vec<(f64, f64)>,
    pub resolution: usize,
    pub rounds: usize,
    pub shrink: f64,
}

impl GridSpec {
    pub fn new(bbox: Vec<(f64, f64)>) -> Self {
        Self { bbox, resolution: 41, rounds: 6, shrink: 4.0 }
    }

    fn validate(&self, dim: usize) -> Result<(), OracleError> {
        if self.bbox.len() != dim {
            return Err(OracleError::BadGrid(format!("box has {} axes, set has {dim}", self.bbox.len())));
        }
        if self.resolution < 11 || self.resolution % 2 == 0 {
            return Err(OracleError::BadGrid(format!("resolution must be odd and at least 11, got {}", self.resolution)));
        }
        if !(self.shrink > 1.0) {
            return Err(OracleError::BadGrid("shrink factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Nearest feasible grid point to `x`, refined around the incumbent.
/// `seeds` (typically anchors) are candidates alongside the grid.
pub fn grid_project(
    set: &impl Membership,
    x: &[f64],
    spec: &GridSpec,
    seeds: &[Vec<f64>],
) -> Result<Vec<f64>, OracleError> {
    let n = set.dim();
    spec.validate(n)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in seeds {
        if s.len() == n && set.contains(s) {
            let d = dist(s, x);
            if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                best = Some((d, s.clone()));
            }
        }
    }
    let mut center: Vec<f64> = spec.bbox.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    let mut half: Vec<f64> = spec.bbox.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect();
    let r = spec.resolution;
    let total = r.pow(n as u32);
    for round in 0..=spec.rounds {
        if round > 0 {
            let Some((_, b)) = &best else { break };
            center = b.clone();
            for h in half.iter_mut() {
                *h /= spec.shrink;
            }
        }
        let point = |mut k: usize| -> Vec<f64> {
            let mut p = vec![0.0; n];
            for i in 0..n {
                let t = (k % r) as f64 / (r - 1) as f64;
                k /= r;
                p[i] = center[i] + half[i] * (2.0 * t - 1.0);
            }
            p
        };
        let found = (0..total)
            .into_par_iter()
            .filter_map(|k| {
                let p = point(k);
                set.contains(&p).then(|| (dist(&p, x), k))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((d, k)) = found {
            if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                best = Some((d, point(k)));
            }
        }
        if round == 0 && best.is_none() {
            return Err(OracleError::Inconclusive(
                "no feasible grid point; enlarge the box or the resolution".into(),
            ));
        }
    }
    Ok(best.expect("checked after round 0").1)
}

/// Uniform box samples filtered by a membership oracle, used to test
/// `u ∈ (W − x̄)°` through `max ⟨u, y − x̄⟩ <= tol_polar`.
#[derive(Debug, Clone)]
pub struct PolarSampler {
    xbar: Vec<f64>,
    points: Vec<Vec<f64>>,
    tol: f64,
    random_feasible: usize,
}

impl PolarSampler {
    /// `extra` points (anchors, declared samples) are kept when feasible
    /// but do not count towards the conclusiveness threshold.
    pub fn new(
        set: &impl Membership,
        bbox: &[(f64, f64)],
        xbar: &[f64],
        n_samples: usize,
        extra: &[Vec<f64>],
        rng: &mut impl Rng,
    ) -> Result<Self, OracleError> {
        Self::from_draws(set, &box_draws(bbox, n_samples, rng), bbox, xbar, extra)
    }

    /// Reuse one set of draws for several sets (say `K` and `K̃`).
    pub fn from_draws(
        set: &impl Membership,
        draws: &[Vec<f64>],
        bbox: &[(f64, f64)],
        xbar: &[f64],
        extra: &[Vec<f64>],
    ) -> Result<Self, OracleError> {
        let diam = bbox.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt();
        let mut points: Vec<Vec<f64>> = draws.iter().filter(|p| set.contains(p)).cloned().collect();
        let random_feasible = points.len();
        if random_feasible < MIN_FEASIBLE_SAMPLES {
            return Err(OracleError::Inconclusive(format!(
                "only {random_feasible} feasible samples, need {MIN_FEASIBLE_SAMPLES}"
            )));
        }
        points.extend(extra.iter().filter(|p| p.len() == xbar.len() && set.contains(p)).cloned());
        Ok(Self { xbar: xbar.to_vec(), points, tol: TOL_POLAR_REL * diam, random_feasible })
    }

    pub fn feasible_samples(&self) -> usize {
        self.random_feasible
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Largest `⟨u/‖u‖, y − x̄⟩` over the samples.
    pub fn excess(&self, u: &[f64]) -> f64 {
        let Some(u) = unit(u) else { return f64::NEG_INFINITY };
        self.points.iter().map(|y| dot(&u, &sub(y, &self.xbar))).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn test(&self, u: &[f64]) -> bool {
        self.excess(u) <= self.tol
    }
}

/// Uniform samples from a box.
pub fn box_draws(bbox: &[(f64, f64)], count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| bbox.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect()).collect()
}

/// `u ∈ (W − x̄)°` judged on `n_samples` uniform box samples of `W`.
pub fn sampled_polar(
    set: &impl Membership,
    bbox: &[(f64, f64)],
    xbar: &[f64],
    u: &[f64],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<bool, OracleError> {
    Ok(PolarSampler::new(set, bbox, xbar, n_samples, &[], rng)?.test(u))
}

fn grid16(v: f64) -> f64 {
    (v * 16.0).round() / 16.0
}

fn num(v: f64) -> String {
    format!("({v:?})")
}

/// Random unit vector with coordinates on the 1/16 grid after scaling, and
/// `⟨a, d0⟩ <= −0.3‖a‖` so that `d0` points into every generated halfspace.
fn inward_normal(n: usize, d0: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let s = rng.gen_range(0.5..2.0);
        let a: Vec<f64> = crate::tanconvex::random_unit(n, rng).iter().map(|v| grid16(v * s)).collect();
        let r = norm(&a);
        if r > 0.0 && dot(&a, d0) <= -0.3 * r {
            return a;
        }
    }
}

/// Random instance with `n` variables and `m` constraints whose feasible set
/// `C ∩ K` is a polyhedron stored in `feasible_hrep`.
///
/// Each constraint is built on an affine part `t = ⟨a, x⟩ − b` and is one of
/// `t`, `t + c t³`, `t + c |⟨w, x − x̄⟩|` (with `c‖w‖` small enough to keep
/// `K` full-dimensional) or `|t| + t`; all cut out halfspaces and have known
/// tangential subdifferentials at the anchor. Constraint 0 is always active
/// at the anchor; the others are active with probability 3/4. `C` has up to
/// two halfspaces. The anchor's test points include several whose projection
/// is the anchor and one generic point.
pub fn random_instance(seed: u64, n: usize, m: usize) -> Result<Instance, OracleError> {
    assert!((1..=3).contains(&n) && (1..=4).contains(&m), "random instances need 1 <= n <= 3, 1 <= m <= 4");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((n as u64) << 8 | m as u64));
    let xbar: Vec<f64> = (0..n).map(|_| grid16(rng.gen_range(-0.5..0.5))).collect();
    let d0 = crate::tanconvex::random_unit(n, &mut rng);
    let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let linear = |a: &[f64]| -> String {
        a.iter().zip(&vars).map(|(c, v)| format!("{}*{v}", num(*c))).collect::<Vec<_>>().join(" + ")
    };

    let mut constraints = Vec::new();
    let mut hrep = Vec::new();
    let mut active_normals: Vec<Vec<f64>> = Vec::new();
    for j in 0..m {
        let a = inward_normal(n, &d0, &mut rng);
        let active = j == 0 || rng.gen_bool(0.75);
        let ax = dot(&a, &xbar);
        let b = if active { ax } else { ax + grid16(rng.gen_range(0.2..0.5)) * norm(&a).max(1.0) };
        let tbar = ax - b;
        let t = format!("({} - {})", linear(&a), num(b));
        let kind = rng.gen_range(0..4);
        let (expr, subdiff, halfspaces): (String, Vec<Vec<f64>>, Vec<(Vec<f64>, f64)>) = match kind {
            0 => (t.clone(), vec![a.clone()], vec![(a.clone(), b)]),
            1 => {
                let c = grid16(rng.gen_range(0.5..2.0));
                let g = scale(&a, 1.0 + 3.0 * c * tbar * tbar);
                (format!("{t} + {}*{t}^3", num(c)), vec![g], vec![(a.clone(), b)])
            }
            2 => {
                let w: Vec<f64> = crate::tanconvex::random_unit(n, &mut rng).iter().map(|v| grid16(*v)).collect();
                let budget = -dot(&a, &d0) * 0.8;
                let wn = norm(&w);
                let c = if wn > 0.0 { (grid16(rng.gen_range(0.2..1.0) * budget / wn) - 1.0 / 16.0).max(0.0) } else { 0.0 };
                let kink = w
                    .iter()
                    .zip(&vars)
                    .zip(&xbar)
                    .map(|((wi, v), xi)| format!("{}*({v} - {})", num(*wi), num(*xi)))
                    .collect::<Vec<_>>()
                    .join(" + ");
                let plus: Vec<f64> = a.iter().zip(&w).map(|(ai, wi)| ai + c * wi).collect();
                let minus: Vec<f64> = a.iter().zip(&w).map(|(ai, wi)| ai - c * wi).collect();
                let cw = c * dot(&w, &xbar);
                (
                    format!("{t} + {}*abs({kink})", num(c)),
                    vec![plus.clone(), minus.clone()],
                    vec![(plus, b + cw), (minus, b - cw)],
                )
            }
            _ => {
                let sub = if tbar < 0.0 { vec![vec![0.0; n]] } else { vec![vec![0.0; n], scale(&a, 2.0)] };
                (format!("abs{t} + {t}"), sub, vec![(a.clone(), b)])
            }
        };
        if active {
            active_normals.extend(halfspaces.iter().map(|(h, _)| h.clone()));
        }
        hrep.extend(halfspaces.into_iter().map(|(a, b)| HalfspaceFile { a, b }));
        let mut sd = std::collections::BTreeMap::new();
        sd.insert(point_key(&xbar), subdiff);
        constraints.push(ConstraintFile { name: format!("g{}", j + 1), expr, subdiff: Some(sd) });
    }

    let mut c_half = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let a = inward_normal(n, &d0, &mut rng);
        let through = rng.gen_bool(0.6);
        let b = dot(&a, &xbar) + if through { 0.0 } else { grid16(rng.gen_range(0.2..0.5)) * norm(&a).max(1.0) };
        if through {
            active_normals.push(a.clone());
        }
        c_half.push(HalfspaceFile { a, b });
    }
    hrep.extend(c_half.iter().cloned());

    let mut xs = Vec::new();
    for _ in 0..3 {
        let mut w = vec![0.0; n];
        for a in &active_normals {
            let mu = rng.gen_range(0.0..1.0);
            for i in 0..n {
                w[i] += mu * a[i];
            }
        }
        let s = rng.gen_range(0.2..1.0) / norm(&w).max(1e-12);
        xs.push(xbar.iter().zip(&w).map(|(x, wi)| x + s * wi).collect::<Vec<f64>>());
    }
    let generic = crate::tanconvex::random_unit(n, &mut rng);
    xs.push(xbar.iter().zip(&generic).map(|(x, g)| x + 0.5 * g).collect());

    let file = InstanceFile {
        id: Some(format!("random-{seed}-{n}-{m}")),
        n,
        constraints,
        c: PolyhedronFile { halfspaces: c_half },
        feasible_hrep: Some(PolyhedronFile { halfspaces: hrep }),
        anchors: vec![AnchorFile { xbar, xs }],
        bbox: Some(vec![[-1.0, 1.0]; n]),
        samples: Vec::new(),
        expected: None,
    };
    Ok(Instance::from_file(file)?)
}
