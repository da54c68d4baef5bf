//! Factorizations and solvers on [`Matrix`].
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: it orthogonalizes the
//! columns of the working matrix by plane rotations until every pair is
//! orthogonal to machine precision. It is slower than bidiagonalization but
//! has high relative accuracy and a fixed, platform-independent operation order.

use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, norm, Matrix};

/// Relative tolerance for the symmetry check in [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// `k × cols` with orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let us = Matrix::from_fn(self.u.rows(), k, |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul(&self.vt)
    }

    /// Largest singular value over smallest; infinite for a singular matrix.
    pub fn condition_number(&self) -> f64 {
        match (self.s.first(), self.s.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 1.0,
        }
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::Shape(format!(
            "svd of a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if m.rows() >= m.cols() {
        Ok(jacobi_tall(m))
    } else {
        let t = jacobi_tall(&m.transpose());
        Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

/// Singular values only.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.s)
}

// One-sided Jacobi for rows >= cols.
fn jacobi_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    // columns of the working matrix and of V
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let tol = f64::EPSILON;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = w.iter().map(|c| norm(c)).zip(0..n).collect();
    // stable on ties: equal singular values keep column order
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut s = Vec::with_capacity(n);
    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for &(sigma, j) in &order {
        if sigma > f64::MIN_POSITIVE {
            s.push(sigma);
            ucols.push(Some(w[j].iter().map(|x| x / sigma).collect()));
        } else {
            s.push(0.0);
            ucols.push(None);
        }
    }
    let ucols = complete_orthonormal(m, ucols);
    let u = Matrix::from_fn(m, n, |i, j| ucols[j][i]);
    let vt = Matrix::from_fn(n, n, |i, j| v[order[i].1][j]);
    Svd { u, s, vt }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (xp, xq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

// Fill missing columns with unit vectors orthogonal to all others
// (Gram–Schmidt against the canonical basis, twice for stability).
fn complete_orthonormal(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut done: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut out = Vec::with_capacity(cols.len());
    let mut candidate = 0;
    for c in cols {
        match c {
            Some(c) => out.push(c),
            None => loop {
                assert!(candidate < m, "cannot complete orthonormal basis");
                let mut e = vec![0.0; m];
                e[candidate] = 1.0;
                candidate += 1;
                for _ in 0..2 {
                    for d in &done {
                        let proj = dot(&e, d);
                        for (ei, di) in e.iter_mut().zip(d) {
                            *ei -= proj * di;
                        }
                    }
                }
                let n = norm(&e);
                if n > 1e-8 {
                    e.iter_mut().for_each(|x| *x /= n);
                    done.push(e.clone());
                    out.push(e);
                    break;
                }
            },
        }
    }
    out
}

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "cholesky of a {}x{} matrix",
            n,
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("cholesky input".into()));
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParameter(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::SingularSystem(format!(
                "matrix not positive definite (pivot {j} = {d:e})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `a · x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(Error::Shape(format!(
            "solve_spd: {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let l = cholesky(a)?;
    let n = a.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // back: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solve a general square system by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Shape(format!(
            "solve: {}x{} system with {}x{} right-hand side",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs();
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pmax <= f64::EPSILON * scale * n as f64 || pmax == 0.0 {
            return Err(Error::SingularSystem(format!("zero pivot in column {k}")));
        }
        if piv != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(piv, j)];
                lu[(piv, j)] = t;
            }
            for j in 0..x.cols() {
                let t = x[(k, j)];
                x[(k, j)] = x[(piv, j)];
                x[(piv, j)] = t;
            }
        }
        for i in k + 1..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for c in 0..x.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Orthonormalize the rows of `m` (modified Gram–Schmidt, two passes).
/// Fails if the rows are numerically dependent.
pub fn orthonormalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m.rows());
    for (i, r) in m.row_iter().enumerate() {
        let mut v = r.to_vec();
        let n0 = norm(&v);
        for _ in 0..2 {
            for q in &rows {
                let p = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let n = norm(&v);
        if !(n > 1e-10 * n0) || n == 0.0 {
            return Err(Error::SingularSystem(format!(
                "row {i} is linearly dependent"
            )));
        }
        v.iter_mut().for_each(|x| *x /= n);
        rows.push(v);
    }
    Matrix::from_rows(&rows)
}

/// Largest deviation of `m · mᵀ` from the identity.
pub fn row_orthonormality_error(m: &Matrix) -> f64 {
    let g = m.matmul_t(m);
    g.sub(&Matrix::identity(m.rows())).max_abs()
}
