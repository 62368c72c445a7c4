//! One-sided Jacobi singular value decomposition for small square matrices.

use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Pairs of columns are rotated until every normalized inner product falls
/// below this.
const ROTATION_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 80;

/// `M = U · diag(s) · Vt`, singular values in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        self.u.matmul(&Matrix::from_diag(&self.s)).matmul(&self.vt)
    }

    pub fn v(&self) -> Matrix {
        self.vt.transpose()
    }

    /// Number of singular values below `threshold`.
    pub fn near_zero(&self, threshold: f64) -> usize {
        self.s.iter().filter(|&&s| s < threshold).count()
    }
}

/// Factorizes a square matrix by one-sided Jacobi rotations.
///
/// Signs are fixed so that the largest-magnitude entry of every column of
/// `U` is positive (the first such entry on ties). Rank-deficient inputs get
/// an orthonormal completion of `U`.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::InvalidArgument(format!(
            "svd expects a square matrix, got {rows}x{cols}"
        )));
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input has non-finite entries".into()));
    }
    let n = rows;

    // columns of the working matrix A (converging to U·Σ) and of V
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = linalg::dot(&a[p], &a[p]);
                let beta = linalg::dot(&a[q], &a[q]);
                let gamma = linalg::dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("jacobi svd did not converge in {MAX_SWEEPS} sweeps");
    }

    let sigma: Vec<f64> = a.iter().map(|c| linalg::norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let s: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let scale = s[0].max(f64::MIN_POSITIVE);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    for (k, &j) in order.iter().enumerate() {
        let col = if s[k] > scale * 1e-13 {
            a[j].iter().map(|x| x / s[k]).collect()
        } else {
            complete_basis(&u_cols, &a[j], n)
        };
        u_cols.push(col);
    }

    for (u, v) in u_cols.iter_mut().zip(v_cols.iter_mut()) {
        let lead = u
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best })
            .0;
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let mut u = Matrix::zeros(n, n);
    let mut vt = Matrix::zeros(n, n);
    for k in 0..n {
        for i in 0..n {
            u[(i, k)] = u_cols[k][i];
            vt[(k, i)] = v_cols[k][i];
        }
    }
    Ok(SvdResult { u, s, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to every vector in `basis`, starting from
/// `hint` and falling back to the standard basis.
fn complete_basis(basis: &[Vec<f64>], hint: &[f64], n: usize) -> Vec<f64> {
    let candidates = std::iter::once(hint.to_vec()).chain((0..n).map(|i| {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        e
    }));
    for mut c in candidates {
        if linalg::norm(&c) == 0.0 {
            continue;
        }
        linalg::normalize_in_place(&mut c);
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for b in basis {
                let proj = linalg::dot(&c, b);
                linalg::axpy(-proj, b, &mut c);
            }
        }
        let len = linalg::norm(&c);
        if len > 0.5 {
            c.iter_mut().for_each(|x| *x /= len);
            return c;
        }
    }
    unreachable!("a basis of fewer than n vectors can always be extended")
}
