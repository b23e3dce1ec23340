//! Small dense linear-algebra kernels shared by the solver and the rate
//! analysis: spectral radius, symmetric square roots, rank-revealing null
//! spaces and nonnegative least squares.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITERS: usize = 10_000;

/// Largest eigenvalue modulus of a square matrix.
///
/// The matrix is reduced to Hessenberg form and driven to real Schur form by
/// shifted QR sweeps; the radius is read off the 1x1 and 2x2 diagonal blocks.
/// An empty matrix has radius zero.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalue_moduli(m)?.first().copied().unwrap_or(0.0))
}

/// Eigenvalue moduli in decreasing order, with multiplicity.
pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            k: 0,
            what: "matrix entry in spectral radius",
        });
    }
    let mut out: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].abs()],
        _ => Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITERS)
            .ok_or(Error::EigenNonConvergence { dim: n })?
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect(),
    };
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// Spectral radius of a symmetric matrix via its eigendecomposition.
pub fn spectral_radius_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric square root and inverse square root with eigenvalues floored at
/// `floor`. Returns the number of eigenvalues that had to be floored.
pub fn sym_sqrt_pair(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    if is_diagonal(m) {
        let mut floored = 0;
        let d = m.diagonal().map(|v| {
            if v < floor {
                floored += 1;
                floor
            } else {
                v
            }
        });
        return (
            DMatrix::from_diagonal(&d.map(f64::sqrt)),
            DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt())),
            floored,
        );
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut floored = 0;
    let vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < floor {
                floored += 1;
                floor
            } else {
                v
            }
        })
        .collect();
    let q = &eig.eigenvectors;
    let sqrt = q * DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.sqrt()),
    )) * q.transpose();
    let inv_sqrt = q * DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v.sqrt()),
    )) * q.transpose();
    (sqrt, inv_sqrt, floored)
}

/// Replaces the eigenvalues of a symmetric matrix by `f(eigenvalue)`.
pub fn sym_map_eigenvalues(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    if is_diagonal(m) {
        return DMatrix::from_diagonal(&m.diagonal().map(f));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let q = &eig.eigenvectors;
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&v| f(v)));
    q * DMatrix::from_diagonal(&d) * q.transpose()
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == 0.0))
}

/// Linear solves with an SPD matrix. Diagonal matrices are handled
/// entrywise so that hand-checkable cases stay exact.
pub enum SpdSolver {
    Diagonal(DVector<f64>),
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl SpdSolver {
    pub fn new(m: &DMatrix<f64>, what: &str) -> Result<Self> {
        if is_diagonal(m) {
            let d = m.diagonal();
            if d.iter().all(|&v| v > 0.0) {
                return Ok(Self::Diagonal(d));
            }
            return Err(Error::NotPositiveDefinite(what.to_string()));
        }
        symmetrize(m)
            .cholesky()
            .map(Self::Cholesky)
            .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Diagonal(d) => b.component_div(d),
            Self::Cholesky(c) => c.solve(b),
        }
    }
}

pub fn sym_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if is_diagonal(m) {
        let d = m.diagonal();
        if d.iter().all(|&v| v > 0.0) {
            return Ok(DMatrix::from_diagonal(&d.map(|v| 1.0 / v)));
        }
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == 0 || symmetrize(m).cholesky().is_some()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Orthonormal basis of the null space of `a` (rows are constraint normals).
///
/// Householder QR with column pivoting is applied to `aᵀ`; the trailing
/// columns of the full orthogonal factor span the null space. Pivots pick the
/// largest remaining column norm (lowest index on ties), the rank threshold is
/// `rel_tol` times the largest singular value, and every basis column is
/// signed so that its first nonzero entry is positive.
pub fn null_space(a: &DMatrix<f64>, dim: usize, rel_tol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    assert_eq!(a.ncols(), dim, "null_space: column count must equal dim");
    let sigma_max = a
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return DMatrix::identity(dim, dim);
    }
    let tol = rel_tol * sigma_max;

    let mut r = a.transpose();
    let rows = r.nrows();
    let cols = r.ncols();
    let mut q = DMatrix::<f64>::identity(rows, rows);
    let mut rank = 0;
    for j in 0..rows.min(cols) {
        let mut best = j;
        let mut best_norm = -1.0;
        for l in j..cols {
            let nrm = r.view((j, l), (rows - j, 1)).norm_squared();
            if nrm > best_norm {
                best_norm = nrm;
                best = l;
            }
        }
        if best_norm.sqrt() <= tol {
            break;
        }
        r.swap_columns(j, best);

        let x = r.view((j, j), (rows - j, 1)).clone_owned();
        let alpha = -x[0].signum_nonzero() * x.norm();
        let mut v = x;
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            let beta = 2.0 / vnorm2;
            // R <- (I - beta v vᵀ) R on the trailing block
            for l in j..cols {
                let mut col = r.view_mut((j, l), (rows - j, 1));
                let s = beta * v.dot(&col);
                for t in 0..(rows - j) {
                    col[t] -= s * v[t];
                }
            }
            // Q <- Q (I - beta v vᵀ)
            for i in 0..rows {
                let mut row = q.view_mut((i, j), (1, rows - j));
                let s = beta * row.transpose().dot(&v);
                for t in 0..(rows - j) {
                    row[(0, t)] -= s * v[t];
                }
            }
        }
        if r[(j, j)].abs() > tol {
            rank += 1;
        } else {
            break;
        }
    }

    let mut basis = q.columns(rank, rows - rank).clone_owned();
    for mut col in basis.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    basis
}

trait SignumNonzero {
    fn signum_nonzero(self) -> Self;
}

impl SignumNonzero for f64 {
    fn signum_nonzero(self) -> f64 {
        if self < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Nonnegative least squares `min ‖C x − d‖` subject to `x ≥ 0` by the
/// Lawson–Hanson active-set iteration, capped at `max_iters` outer steps.
pub fn nnls(c: &DMatrix<f64>, d: &DVector<f64>, max_iters: usize) -> DVector<f64> {
    let n = c.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = 1.0 + (c.transpose() * d).amax();
    let tol = 1e-12 * scale;
    let mut passive = vec![false; n];

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut s = DVector::zeros(n);
        if idx.is_empty() {
            return s;
        }
        let sub = c.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(d, 1e-13)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        for (k, &j) in idx.iter().enumerate() {
            s[j] = sol[k];
        }
        s
    };

    for _ in 0..max_iters.max(1) {
        let w = c.transpose() * (d - c * &x);
        let mut best = None;
        let mut best_w = tol;
        for j in 0..n {
            if !passive[j] && w[j] > best_w {
                best_w = w[j];
                best = Some(j);
            }
        }
        let Some(t) = best else { break };
        passive[t] = true;

        let mut inner = 0;
        loop {
            inner += 1;
            let s = solve_passive(&passive);
            let infeasible: Vec<usize> = (0..n).filter(|&j| passive[j] && s[j] <= 0.0).collect();
            if infeasible.is_empty() {
                x = s;
                break;
            }
            let mut step = 1.0_f64;
            for &j in &infeasible {
                let denom = x[j] - s[j];
                if denom > 0.0 {
                    step = step.min(x[j] / denom);
                }
            }
            x += (s - &x) * step;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if inner > 3 * n + 3 {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_examples() {
        let tri = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.0, 0.25]);
        assert!((spectral_radius(&tri).unwrap() - 0.25).abs() < 1e-14);
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((spectral_radius(&id).unwrap() - 1.0).abs() < 1e-14);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(spectral_radius(&DMatrix::zeros(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_rejects_nan() {
        let m = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(spectral_radius(&m).is_err());
    }

    #[test]
    fn null_space_axis_aligned() {
        let a = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let e = null_space(&a, 2, 1e-10);
        assert_eq!(e.ncols(), 1);
        assert!((e[(0, 0)]).abs() < 1e-15);
        assert!((e[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_space_handles_duplicates() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let e = null_space(&a, 3, 1e-10);
        assert_eq!(e.ncols(), 2);
        assert!((&a * &e).amax() < 1e-12);
        assert!((e.transpose() * &e - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn nnls_one_variable() {
        // g = (1, 0), active normal (-1, 0): solve (-1,0) z ≈ -(1,0)
        let c = DMatrix::from_row_slice(2, 1, &[-1.0, 0.0]);
        let d = DVector::from_vec(vec![-1.0, 0.0]);
        let z = nnls(&c, &d, 100);
        assert!((z[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nnls_clamps_negative_solution() {
        let c = DMatrix::from_row_slice(2, 1, &[-1.0, 0.0]);
        let d = DVector::from_vec(vec![1.0, 0.0]);
        let z = nnls(&c, &d, 100);
        assert_eq!(z[0], 0.0);
    }
}
