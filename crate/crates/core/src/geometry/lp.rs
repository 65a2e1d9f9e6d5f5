use super::{dot, GeometryError, Halfspace};

/// Feasibility tolerance for LP verdicts and witnesses.
pub const TOL_LP: f64 = 1e-10;

const PIVOT_EPS: f64 = 1e-12;
const COST_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Feasible,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    /// Present iff `status == Feasible`.
    pub witness: Option<Vec<f64>>,
    /// Optimal value when an objective was supplied and the problem is bounded.
    pub objective: Option<f64>,
    /// For infeasible pure-feasibility problems: `y >= 0` with `Aᵀy = 0`, `bᵀy < 0`.
    pub farkas: Option<Vec<f64>>,
}

/// Outcome of `min c·z  s.t.  A z = b, z >= 0`.
#[derive(Debug, Clone)]
pub(crate) enum Standard {
    Optimal { z: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    ncols: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (x, y) in self.obj.iter_mut().zip(&prow) {
                *x -= f * y;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Bland's rule: lowest-index entering column, ratio ties broken by the
    /// lowest-index basic variable. Returns `Ok(false)` when unbounded.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool) -> Result<bool, GeometryError> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(GeometryError::LpStalled(self.pivots));
            }
            let Some(c) = (0..self.ncols).find(|&j| allowed(j) && self.obj[j] < -COST_EPS) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a <= PIVOT_EPS {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let scale = 1.0 + br.abs();
                        if ratio < br - 1e-12 * scale
                            || (ratio <= br + 1e-12 * scale && self.basis[i] < self.basis[bi])
                        {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }
}

/// Two-phase dense simplex on a problem in standard form.
pub(crate) fn solve_standard(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<Standard, GeometryError> {
    let n = c.len();
    let m = b.len();
    let ncols = n + m;
    let bmax = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; ncols + 1];
        for j in 0..n {
            row[j] = flip * a[i][j];
        }
        row[n + i] = 1.0;
        row[ncols] = flip * b[i];
        rows.push(row);
    }
    // Phase one: minimize the sum of artificials.
    let mut obj = vec![0.0; ncols + 1];
    for row in &rows {
        for j in 0..n {
            obj[j] -= row[j];
        }
        obj[ncols] -= row[ncols];
    }
    let mut t = Tableau { rows, obj, basis: (n..n + m).collect(), ncols, pivots: 0 };
    t.optimize(&|_| true)?;
    let infeas = -t.obj[ncols];
    if infeas > TOL_LP * (1.0 + bmax) * (m.max(1) as f64) {
        return Ok(Standard::Infeasible);
    }

    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= n {
            match (0..n).find(|&j| t.rows[i][j].abs() > 1e-9) {
                Some(j) => {
                    t.pivot(i, j);
                    i += 1;
                }
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    // Phase two.
    let mut obj = vec![0.0; ncols + 1];
    obj[..n].copy_from_slice(c);
    for (r, &bv) in t.basis.iter().enumerate() {
        let cb = if bv < n { c[bv] } else { 0.0 };
        if cb != 0.0 {
            for (x, y) in obj.iter_mut().zip(&t.rows[r]) {
                *x -= cb * y;
            }
        }
    }
    t.obj = obj;
    if !t.optimize(&|j| j < n)? {
        return Ok(Standard::Unbounded);
    }
    let mut z = vec![0.0; n];
    for (r, &bv) in t.basis.iter().enumerate() {
        if bv < n {
            z[bv] = t.rhs(r).max(0.0);
        }
    }
    let value = dot(c, &z);
    Ok(Standard::Optimal { z, value })
}

/// Solve `opt ⟨objective, x⟩` over `{x : ⟨a, x⟩ <= b for every constraint}`
/// with `x` free in ℝ^dim. Without an objective this is a feasibility test.
pub fn lp_solve(
    dim: usize,
    constraints: &[Halfspace],
    objective: Option<&[f64]>,
    sense: Sense,
) -> Result<LpResult, GeometryError> {
    for h in constraints {
        if h.normal.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: h.normal.len() });
        }
    }
    if let Some(o) = objective {
        if o.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: o.len() });
        }
    }
    let k = constraints.len();
    let nvar = 2 * dim + k;
    let a: Vec<Vec<f64>> = constraints
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut row = vec![0.0; nvar];
            for j in 0..dim {
                row[j] = h.normal[j];
                row[dim + j] = -h.normal[j];
            }
            row[2 * dim + i] = 1.0;
            row
        })
        .collect();
    let b: Vec<f64> = constraints.iter().map(|h| h.offset).collect();
    let sign = if sense == Sense::Max { -1.0 } else { 1.0 };
    let mut c = vec![0.0; nvar];
    if let Some(o) = objective {
        for j in 0..dim {
            c[j] = sign * o[j];
            c[dim + j] = -sign * o[j];
        }
    }
    match solve_standard(&a, &b, &c)? {
        Standard::Optimal { z, .. } => {
            let x: Vec<f64> = (0..dim).map(|j| z[j] - z[dim + j]).collect();
            let objective = objective.map(|o| dot(o, &x));
            Ok(LpResult { status: LpStatus::Feasible, witness: Some(x), objective, farkas: None })
        }
        Standard::Unbounded => {
            Ok(LpResult { status: LpStatus::Unbounded, witness: None, objective: None, farkas: None })
        }
        Standard::Infeasible => {
            let farkas = if objective.is_none() { farkas_certificate(dim, constraints)? } else { None };
            Ok(LpResult { status: LpStatus::Infeasible, witness: None, objective: None, farkas })
        }
    }
}

/// `y >= 0` with `Aᵀ y = 0` and `bᵀ y = -1`.
fn farkas_certificate(dim: usize, constraints: &[Halfspace]) -> Result<Option<Vec<f64>>, GeometryError> {
    let k = constraints.len();
    let mut a = vec![vec![0.0; k]; dim + 1];
    let mut b = vec![0.0; dim + 1];
    for (i, h) in constraints.iter().enumerate() {
        for j in 0..dim {
            a[j][i] = h.normal[j];
        }
        a[dim][i] = h.offset;
    }
    b[dim] = -1.0;
    match solve_standard(&a, &b, &vec![0.0; k])? {
        Standard::Optimal { z, .. } => Ok(Some(z)),
        _ => Ok(None),
    }
}
