//! Small dense-vector helpers with a fixed summation order.
//!
//! Every reduction here iterates in index order so that results are bitwise
//! reproducible regardless of how many threads produced the inputs.

/// Dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Squared Euclidean norm.
#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// Squared distance `‖a − b‖²`.
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Elementwise mean of `vs`, summed worker-by-worker in index order.
pub fn mean_of(vs: &[&[f64]]) -> Vec<f64> {
    assert!(!vs.is_empty(), "mean of empty set");
    let dim = vs[0].len();
    let mut out = vec![0.0; dim];
    for v in vs {
        debug_assert_eq!(v.len(), dim);
        for i in 0..dim {
            out[i] += v[i];
        }
    }
    let inv = 1.0 / vs.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    out
}

/// Deviation energy `Σ_k ‖v_k − v̄‖²`, computed through the pairwise
/// identity `(1/K)·Σ_{k<ℓ} ‖v_k − v_ℓ‖²` so that bitwise-identical inputs
/// yield an exact zero for any K.
pub fn spread_sq(vs: &[&[f64]]) -> f64 {
    let k = vs.len();
    let mut s = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            s += dist_sq(vs[a], vs[b]);
        }
    }
    s / k as f64
}

/// Solve `A x = b` for symmetric positive-definite `A` (row-major, n×n)
/// via Cholesky. Returns `None` when a pivot collapses.
pub fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    // Lower-triangular factor L with A = L Lᵀ.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + j] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_scalars() {
        let a = [1.0];
        let b = [2.0];
        let c = [3.0];
        let m = mean_of(&[&a, &b, &c]);
        assert_eq!(m, vec![2.0]);
    }

    #[test]
    fn spread_matches_mean_form() {
        let vs: Vec<Vec<f64>> = vec![vec![0.1, -2.0], vec![1.4, 0.3], vec![-0.7, 5.0]];
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let mean = mean_of(&refs);
        let direct: f64 = refs.iter().map(|v| dist_sq(v, &mean)).sum();
        assert!((spread_sq(&refs) - direct).abs() < 1e-12);
        // Identical inputs give an exact zero for K = 3.
        let same: Vec<&[f64]> = vec![&vs[0], &vs[0], &vs[0]];
        assert_eq!(spread_sq(&same), 0.0);
    }

    #[test]
    fn spd_solve_roundtrip() {
        // A = [[4,1],[1,3]], b = A·[2,-1] = [7,-1]
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve_spd(&a, &[7.0, -1.0], 2).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(solve_spd(&a, &[1.0, 1.0], 2).is_none());
    }
}
