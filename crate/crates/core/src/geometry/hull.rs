use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::cone::combinations;
use super::{dist, solve_standard, GeometryError, Standard};

/// Deterministic unit directions: `±1` on the line, `count` equally spaced
/// angles starting at 0 in the plane, a Fibonacci lattice on the sphere.
/// Higher dimensions fall back to `±e_i` plus normalized `±1` sign patterns.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; dim];
                    e[i] = s;
                    out.push(e);
                }
            }
            let scale = 1.0 / (dim as f64).sqrt();
            for mask in 0..(1usize << dim) {
                out.push((0..dim).map(|i| if mask >> i & 1 == 1 { scale } else { -scale }).collect());
            }
            out
        }
    }
}

/// Smallest L1 residual `‖Σ w_i p_i − v‖₁` over convex weights `w`.
pub fn hull_residual(points: &[Vec<f64>], v: &[f64]) -> Result<f64, GeometryError> {
    let dim = v.len();
    if points.is_empty() {
        return Ok(f64::INFINITY);
    }
    let k = points.len();
    let nvar = k + 2 * dim;
    let mut a = vec![vec![0.0; nvar]; dim + 1];
    let mut b = v.to_vec();
    for (j, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: p.len() });
        }
        for i in 0..dim {
            a[i][j] = p[i];
        }
        a[dim][j] = 1.0;
    }
    for i in 0..dim {
        a[i][k + i] = 1.0;
        a[i][k + dim + i] = -1.0;
    }
    b.push(1.0);
    let mut c = vec![0.0; nvar];
    for cj in c.iter_mut().skip(k) {
        *cj = 1.0;
    }
    match solve_standard(&a, &b, &c)? {
        Standard::Optimal { value, .. } => Ok(value),
        _ => Ok(f64::INFINITY),
    }
}

/// Euclidean distance from `v` to the convex hull of `points`, by
/// enumerating simplices of at most `dim + 1` points.
pub fn hull_distance(points: &[Vec<f64>], v: &[f64]) -> f64 {
    let dim = v.len();
    let mut best = f64::INFINITY;
    for size in 1..=(dim + 1).min(points.len()) {
        for subset in combinations(points.len(), size) {
            let q0 = &points[subset[0]];
            let proj = if size == 1 {
                Some(q0.clone())
            } else {
                let e = DMatrix::from_fn(dim, size - 1, |i, j| points[subset[j + 1]][i] - q0[i]);
                let rhs = DVector::from_fn(dim, |i, _| v[i] - q0[i]);
                e.clone().svd(true, true).solve(&rhs, 1e-12).ok().and_then(|t| {
                    let sum: f64 = t.iter().sum();
                    let ok = t.iter().all(|w| *w >= -1e-12) && sum <= 1.0 + 1e-12;
                    ok.then(|| {
                        let step = e * t;
                        (0..dim).map(|i| q0[i] + step[i]).collect()
                    })
                })
            };
            if let Some(p) = proj {
                best = best.min(dist(&p, v));
            }
        }
    }
    best
}

/// Hausdorff distance between the convex hulls of two point sets. For
/// polytopes the farthest point of one hull from the other is a vertex.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let one = a.iter().map(|p| hull_distance(b, p)).fold(0.0, f64::max);
    let two = b.iter().map(|p| hull_distance(a, p)).fold(0.0, f64::max);
    one.max(two)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    #[test]
    fn directions_are_unit() {
        for (d, c) in [(1, 2), (2, 360), (3, 500), (4, 0)] {
            let dirs = sphere_directions(d, c);
            assert!(!dirs.is_empty());
            for u in dirs {
                assert!((norm(&u) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(sphere_directions(2, 360).len(), 360);
    }

    #[test]
    fn hull_distance_of_square() {
        let sq = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(hull_distance(&sq, &[0.5, 0.5]), 0.0);
        assert!((hull_distance(&sq, &[2.0, 0.5]) - 1.0).abs() < 1e-12);
        assert!((hull_distance(&sq, &[2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-12);
        assert!(hull_residual(&sq, &[0.2, 0.9]).unwrap() < 1e-12);
        assert!((hull_residual(&sq, &[1.5, 0.5]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_of_segments() {
        let s1 = vec![vec![-1.0, -1.0], vec![-1.0, 1.0]];
        let s2 = vec![vec![-1.0, -1.0], vec![-1.0, 1.5]];
        assert!((hausdorff(&s1, &s2) - 0.5).abs() < 1e-12);
        assert_eq!(hausdorff(&s1, &s1), 0.0);
    }
}
