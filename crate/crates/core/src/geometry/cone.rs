use nalgebra::{DMatrix, SymmetricEigen};

use super::{dot, max_abs_diff, solve_standard, unit, GeometryError, Standard};

const DEDUP_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-9;

fn push_unique(list: &mut Vec<Vec<f64>>, v: Vec<f64>) {
    if !list.iter().any(|w| max_abs_diff(w, &v) <= DEDUP_TOL) {
        list.push(v);
    }
}

fn normalized_unique(vs: impl IntoIterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for v in vs {
        if let Some(u) = unit(&v) {
            push_unique(&mut out, u);
        }
    }
    out
}

/// Finitely generated cone: all nonnegative combinations of `rays`.
/// No rays means the cone `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeFg {
    dim: usize,
    rays: Vec<Vec<f64>>,
}

/// Homogeneous halfspace intersection `{x : ⟨a, x⟩ <= 0 for all a}`.
/// No normals means all of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeH {
    dim: usize,
    normals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    Fg(ConeFg),
    H(ConeH),
}

impl ConeFg {
    /// Rays are normalized to unit length; zero vectors and duplicates are dropped.
    pub fn new(dim: usize, rays: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let rays = normalized_unique(rays);
        debug_assert!(rays.iter().all(|r| r.len() == dim));
        Self { dim, rays }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, rays: Vec::new() }
    }

    /// The whole space, generated by `±e_i`.
    pub fn full(dim: usize) -> Self {
        let mut rays = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            rays.push(e.clone());
            e[i] = -1.0;
            rays.push(e);
        }
        Self { dim, rays }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rays(&self) -> &[Vec<f64>] {
        &self.rays
    }

    pub fn is_zero(&self) -> bool {
        self.rays.is_empty()
    }

    /// Drop rays that are nonnegative combinations of the remaining ones.
    pub fn pruned(&self, tol: f64) -> Result<Self, GeometryError> {
        let mut rays = self.rays.clone();
        let mut i = 0;
        while i < rays.len() {
            let others: Vec<Vec<f64>> =
                rays.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r.clone()).collect();
            if cone_distance(self.dim, &others, &rays[i])? <= tol {
                rays.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(Self { dim: self.dim, rays })
    }
}

impl ConeH {
    pub fn new(dim: usize, normals: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let normals = normalized_unique(normals);
        debug_assert!(normals.iter().all(|r| r.len() == dim));
        Self { dim, normals }
    }

    pub fn full(dim: usize) -> Self {
        Self { dim, normals: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    /// Generators of the cone: a basis of the lineality space taken with
    /// both signs, plus the extreme rays of the pointed part.
    pub fn generators(&self) -> ConeFg {
        let n = self.dim;
        if self.normals.is_empty() {
            return ConeFg::full(n);
        }
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for a in &self.normals {
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += a[i] * a[j];
                }
            }
        }
        let eig = SymmetricEigen::new(gram);
        let smax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).sqrt();
        let thresh = RANK_TOL * smax.max(1.0);
        let mut lineality = Vec::new();
        let mut range = Vec::new();
        for k in 0..n {
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if eig.eigenvalues[k].max(0.0).sqrt() <= thresh {
                lineality.push(col);
            } else {
                range.push(col);
            }
        }
        let r = range.len();
        // Normals expressed in the orthonormal basis of the row space.
        let reduced: Vec<Vec<f64>> = normalized_unique(
            self.normals.iter().map(|a| range.iter().map(|q| dot(q, a)).collect::<Vec<f64>>()),
        );
        let lift = |d: &[f64]| -> Vec<f64> {
            let mut x = vec![0.0; n];
            for (q, c) in range.iter().zip(d) {
                for i in 0..n {
                    x[i] += c * q[i];
                }
            }
            x
        };
        let feasible = |d: &[f64]| reduced.iter().all(|m| dot(m, d) <= RANK_TOL);

        let mut rays = Vec::new();
        if r == 1 {
            for s in [1.0, -1.0] {
                if feasible(&[s]) {
                    push_unique(&mut rays, lift(&[s]));
                }
            }
        } else if r > 1 {
            for subset in combinations(reduced.len(), r - 1) {
                let rows: Vec<&[f64]> = subset.iter().map(|&i| reduced[i].as_slice()).collect();
                let Some(d) = null_vector(&rows, r) else { continue };
                for s in [1.0, -1.0] {
                    let cand: Vec<f64> = d.iter().map(|v| v * s).collect();
                    if feasible(&cand) {
                        if let Some(u) = unit(&lift(&cand)) {
                            push_unique(&mut rays, u);
                        }
                    }
                }
            }
        }
        for l in lineality {
            push_unique(&mut rays, l.clone());
            push_unique(&mut rays, l.iter().map(|v| -v).collect());
        }
        ConeFg::new(n, rays)
    }
}

impl Cone {
    pub fn dim(&self) -> usize {
        match self {
            Cone::Fg(c) => c.dim,
            Cone::H(c) => c.dim,
        }
    }

    pub fn generators(&self) -> ConeFg {
        match self {
            Cone::Fg(c) => c.clone(),
            Cone::H(c) => c.generators(),
        }
    }
}

impl From<ConeFg> for Cone {
    fn from(c: ConeFg) -> Self {
        Cone::Fg(c)
    }
}

impl From<ConeH> for Cone {
    fn from(c: ConeH) -> Self {
        Cone::H(c)
    }
}

/// Index subsets of `{0..n}` of size `k`, in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Unit vector spanning the null space of `dim - 1` rows in ℝ^dim, if that
/// null space is one-dimensional.
fn null_vector(rows: &[&[f64]], dim: usize) -> Option<Vec<f64>> {
    let d = match dim {
        2 => vec![-rows[0][1], rows[0][0]],
        3 => {
            let (a, b) = (rows[0], rows[1]);
            vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
        }
        _ => {
            let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
            (0..dim)
                .map(|k| {
                    let minor = m.clone().remove_column(k);
                    let det = minor.determinant();
                    if k % 2 == 0 {
                        det
                    } else {
                        -det
                    }
                })
                .collect()
        }
    };
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < RANK_TOL {
        None
    } else {
        Some(d.iter().map(|v| v / n).collect())
    }
}

/// Smallest L1 residual `‖Σ μ_i r_i − v‖₁` over `μ >= 0`.
pub fn cone_distance(dim: usize, rays: &[Vec<f64>], v: &[f64]) -> Result<f64, GeometryError> {
    let k = rays.len();
    let nvar = k + 2 * dim;
    let mut a = vec![vec![0.0; nvar]; dim];
    for (j, r) in rays.iter().enumerate() {
        for i in 0..dim {
            a[i][j] = r[i];
        }
    }
    for i in 0..dim {
        a[i][k + i] = 1.0;
        a[i][k + dim + i] = -1.0;
    }
    let mut c = vec![0.0; nvar];
    for cj in c.iter_mut().skip(k) {
        *cj = 1.0;
    }
    match solve_standard(&a, v, &c)? {
        Standard::Optimal { value, .. } => Ok(value),
        // μ = 0 with the residual split is always feasible and the objective is bounded below.
        _ => Ok(v.iter().map(|x| x.abs()).sum()),
    }
}

/// Polar of a finitely generated cone: the halfspace intersection on its rays.
pub fn polar_fg(c: &ConeFg) -> ConeH {
    ConeH { dim: c.dim, normals: c.rays.clone() }
}

/// Polar of `{x : Ax <= 0}`: the cone generated by the rows of `A`.
pub fn polar_h(c: &ConeH) -> ConeFg {
    ConeFg { dim: c.dim, rays: c.normals.clone() }
}

pub fn cone_contains(c: &Cone, v: &[f64], tol: f64) -> Result<bool, GeometryError> {
    if v.len() != c.dim() {
        return Err(GeometryError::DimensionMismatch { expected: c.dim(), got: v.len() });
    }
    match c {
        Cone::H(h) => Ok(h.normals.iter().all(|a| dot(a, v) <= tol)),
        Cone::Fg(f) => Ok(cone_distance(f.dim, &f.rays, v)? <= tol),
    }
}

/// Mutual inclusion of generators; exact for closed finitely generated cones.
pub fn cones_equal(c1: &Cone, c2: &Cone, tol: f64) -> Result<bool, GeometryError> {
    if c1.dim() != c2.dim() {
        return Err(GeometryError::DimensionMismatch { expected: c1.dim(), got: c2.dim() });
    }
    Ok(cone_includes(c2, c1, tol)? && cone_includes(c1, c2, tol)?)
}

/// `inner ⊆ outer`.
pub fn cone_includes(outer: &Cone, inner: &Cone, tol: f64) -> Result<bool, GeometryError> {
    for r in inner.generators().rays() {
        if !cone_contains(outer, r, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn minkowski_sum_fg(c1: &ConeFg, c2: &ConeFg) -> Result<ConeFg, GeometryError> {
    if c1.dim != c2.dim {
        return Err(GeometryError::DimensionMismatch { expected: c1.dim, got: c2.dim });
    }
    Ok(ConeFg::new(c1.dim, c1.rays.iter().chain(&c2.rays).cloned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_of_origin_is_everything() {
        let p = polar_fg(&ConeFg::zero(3));
        assert!(p.normals().is_empty());
        let back = polar_h(&ConeH::full(3));
        assert!(back.is_zero());
    }

    #[test]
    fn polar_of_half_line() {
        let k = ConeFg::new(1, vec![vec![1.0]]);
        let p = polar_fg(&k);
        assert!(cone_contains(&p.clone().into(), &[-3.0], 0.0).unwrap());
        assert!(!cone_contains(&p.into(), &[0.5], 0.0).unwrap());
        // (−∞, 0]° = [0, ∞)
        let c = ConeH::new(1, vec![vec![1.0]]);
        assert_eq!(polar_h(&c).rays(), &[vec![1.0]]);
    }

    #[test]
    fn wedge_polar_matches_displayed_union() {
        // cone{(1,0),(1,1)} has polar {u1 <= 0, u1 + u2 <= 0}; compare with
        // {t1 <= -t2, t1 <= 0} ∪ (ℝ₋ × ℝ₋) on a deterministic lattice.
        let k = ConeFg::new(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        let p: Cone = polar_fg(&k).into();
        for i in 0..100 {
            for j in 0..100 {
                let u = [-2.0 + 4.0 * i as f64 / 99.0 + 1e-3, -2.0 + 4.0 * j as f64 / 99.0 + 1e-3];
                let union = (u[0] <= -u[1] && u[0] <= 0.0) || (u[0] <= 0.0 && u[1] <= 0.0);
                assert_eq!(cone_contains(&p, &u, 0.0).unwrap(), union, "u = {u:?}");
            }
        }
    }

    #[test]
    fn generators_of_ray_cone() {
        // D(x̄) of the three-constraint planar example: {(t, 0) : t >= 0}.
        let d = ConeH::new(
            2,
            vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![0.0, 2.0], vec![0.0, -2.0]],
        );
        let g = d.generators();
        assert_eq!(g.rays().len(), 1);
        assert!(max_abs_diff(&g.rays()[0], &[1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn generators_with_lineality() {
        // {x : x1 <= 0} in ℝ³ has lineality span{e2, e3}.
        let c = ConeH::new(3, vec![vec![1.0, 0.0, 0.0]]);
        let g = c.generators();
        assert_eq!(g.rays().len(), 5);
        assert!(cones_equal(&g.clone().into(), &c.into(), 1e-9).unwrap());
    }

    #[test]
    fn sum_of_opposite_half_lines_is_the_line() {
        let a = ConeFg::new(1, vec![vec![-1.0]]);
        let b = ConeFg::new(1, vec![vec![1.0]]);
        let s = minkowski_sum_fg(&a, &b).unwrap();
        assert!(cones_equal(&s.into(), &ConeH::full(1).into(), 1e-12).unwrap());
    }

    #[test]
    fn origin_added_is_identity() {
        let a = ConeFg::new(2, vec![vec![-1.0, 1.0], vec![0.0, -1.0]]);
        let s = minkowski_sum_fg(&ConeFg::zero(2), &a).unwrap();
        assert_eq!(s.rays().len(), 2);
        assert!(cones_equal(&s.into(), &a.into(), 1e-12).unwrap());
    }

    #[test]
    fn combinations_enumerates_all() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(5, 5).len(), 1);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn pruning_removes_interior_rays() {
        let c = ConeFg::new(2, vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]]);
        let p = c.pruned(1e-9).unwrap();
        assert_eq!(p.rays().len(), 2);
    }

    #[test]
    fn four_dimensional_generators() {
        let c = ConeH::new(
            4,
            vec![
                vec![-1.0, 0.0, 0.0, 0.0],
                vec![0.0, -1.0, 0.0, 0.0],
                vec![0.0, 0.0, -1.0, 0.0],
                vec![0.0, 0.0, 0.0, -1.0],
            ],
        );
        let g = c.generators();
        assert_eq!(g.rays().len(), 4);
        assert!(cones_equal(&g.into(), &c.into(), 1e-9).unwrap());
    }
}
