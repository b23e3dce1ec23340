//! Polyhedral feasible sets `{λ : A λ ≤ b}` with a Cartesian block structure,
//! active-set detection, reduced-space bases and KKT checks.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default absolute tolerance on `a_jᵀλ − b_j` for activity tests.
pub const ACTIVE_TOL: f64 = 1e-8;

/// Relative rank threshold used by the null-space factorization.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidPolyhedron("block structure has no blocks".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidPolyhedron("block dimensions must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in &dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self { dims, offsets })
    }

    pub fn single(m: usize) -> Self {
        Self::new(vec![m.max(1)]).expect("single block is valid")
    }

    pub fn scalar(m: usize) -> Self {
        Self::new(vec![1; m.max(1)]).expect("scalar blocks are valid")
    }

    pub fn count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block_of(&self, coord: usize) -> usize {
        self.offsets.partition_point(|&o| o <= coord) - 1
    }

    /// Extracts the block-diagonal part of a square matrix.
    pub fn diagonal_part(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..self.count() {
            let r = self.range(i);
            let d = r.len();
            out.view_mut((r.start, r.start), (d, d))
                .copy_from(&m.view((r.start, r.start), (d, d)));
        }
        out
    }

    pub fn is_block_diagonal(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if self.block_of(i) != self.block_of(j) && m[(i, j)].abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: DMatrix<f64>,
    b: DVector<f64>,
    blocks: BlockStructure,
    row_block: Vec<usize>,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, blocks: BlockStructure) -> Result<Self> {
        let m = blocks.total();
        if a.nrows() != b.len() {
            return Err(Error::InvalidPolyhedron(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() != m && a.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: a.ncols(),
            });
        }
        let a = if a.nrows() == 0 { DMatrix::zeros(0, m) } else { a };
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolyhedron("non-finite entry".into()));
        }
        let mut row_block = Vec::with_capacity(a.nrows());
        for j in 0..a.nrows() {
            let nz: Vec<usize> = (0..m).filter(|&c| a[(j, c)] != 0.0).collect();
            if nz.is_empty() {
                return Err(Error::InvalidPolyhedron(format!("row {j} is identically zero")));
            }
            let first = blocks.block_of(nz[0]);
            if nz.iter().any(|&c| blocks.block_of(c) != first) {
                return Err(Error::InvalidPolyhedron(format!(
                    "row {j} couples several blocks; the feasible set must be a Cartesian product"
                )));
            }
            row_block.push(first);
        }
        Ok(Self {
            a,
            b,
            blocks,
            row_block,
        })
    }

    /// The whole space (no constraints).
    pub fn unconstrained(blocks: BlockStructure) -> Self {
        let m = blocks.total();
        Self::new(DMatrix::zeros(0, m), DVector::zeros(0), blocks).expect("empty system is valid")
    }

    /// Box `lo ≤ λ ≤ hi`; infinite bounds are omitted. Rows are ordered
    /// coordinate by coordinate, lower bound first.
    pub fn from_box(lo: &[f64], hi: &[f64], blocks: BlockStructure) -> Result<Self> {
        let m = blocks.total();
        if lo.len() != m || hi.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: lo.len().min(hi.len()),
            });
        }
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for c in 0..m {
            if lo[c].is_finite() {
                let mut r = vec![0.0; m];
                r[c] = -1.0;
                rows.push(r);
                rhs.push(-lo[c]);
            }
            if hi[c].is_finite() {
                let mut r = vec![0.0; m];
                r[c] = 1.0;
                rows.push(r);
                rhs.push(hi[c]);
            }
        }
        let a = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        Self::new(a, DVector::from_vec(rhs), blocks)
    }

    pub fn dim(&self) -> usize {
        self.blocks.total()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn row_block(&self, j: usize) -> usize {
        self.row_block[j]
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Constraint values `a_jᵀλ − b_j`.
    pub fn slacks(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(&self.a * x - &self.b)
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.slacks(x)?.iter().copied().fold(0.0, f64::max))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.slacks(x)?.iter().all(|&s| s <= tol))
    }

    pub fn active_set(&self, x: &DVector<f64>, tol: f64) -> Result<ActiveSet> {
        let s = self.slacks(x)?;
        let violation = s.iter().copied().fold(0.0, f64::max);
        if violation > tol {
            return Err(Error::InfeasiblePoint { violation, tol });
        }
        Ok(ActiveSet::from_sorted(
            (0..s.len()).filter(|&j| s[j].abs() <= tol).collect(),
        ))
    }

    /// Rows of `A` restricted to block `i`, in block-local coordinates,
    /// together with the original row indices.
    pub fn block(&self, i: usize) -> (Polyhedron, Vec<usize>) {
        let r = self.blocks.range(i);
        let idx: Vec<usize> = (0..self.rows()).filter(|&j| self.row_block[j] == i).collect();
        let a = DMatrix::from_fn(idx.len(), r.len(), |k, c| self.a[(idx[k], r.start + c)]);
        let b = DVector::from_iterator(idx.len(), idx.iter().map(|&j| self.b[j]));
        let p = Polyhedron::new(a, b, BlockStructure::single(r.len()))
            .expect("rows of a valid block polyhedron stay valid");
        (p, idx)
    }

    /// Per-block orthonormal bases of the null space of the active rows.
    pub fn reduced_basis(&self, active: &ActiveSet) -> ReducedBasis {
        let mut per_block = Vec::with_capacity(self.blocks.count());
        for i in 0..self.blocks.count() {
            let r = self.blocks.range(i);
            let rows: Vec<usize> = active
                .indices()
                .iter()
                .copied()
                .filter(|&j| self.row_block[j] == i)
                .collect();
            let a = DMatrix::from_fn(rows.len(), r.len(), |k, c| self.a[(rows[k], r.start + c)]);
            per_block.push(linalg::null_space(&a, r.len(), RANK_TOL));
        }
        ReducedBasis { blocks: per_block }
    }

    fn active_normals(&self, active: &ActiveSet) -> DMatrix<f64> {
        let idx = active.indices();
        DMatrix::from_fn(self.dim(), idx.len(), |r, k| self.a[(idx[k], r)])
    }

    /// Nonnegative multipliers `ζ` minimizing `‖g + Σ ζ_j a_j‖` over the
    /// active rows, and the attained residual norm.
    pub fn kkt_multipliers(&self, active: &ActiveSet, g: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        self.check_dim(g)?;
        let n = self.active_normals(active);
        let zeta = linalg::nnls(&n, &(-g), 100 * active.len().max(1));
        let residual = (g + &n * &zeta).norm();
        Ok((zeta, residual))
    }

    /// Whether stationarity holds with strictly positive multipliers. The
    /// second value is the smallest multiplier, or `+∞` when nothing is
    /// active.
    pub fn strict_complementarity(
        &self,
        active: &ActiveSet,
        g: &DVector<f64>,
        tol: f64,
    ) -> Result<(bool, f64)> {
        if active.is_empty() {
            self.check_dim(g)?;
            return Ok((g.norm() <= tol, f64::INFINITY));
        }
        let (zeta, residual) = self.kkt_multipliers(active, g)?;
        let min = zeta.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((residual <= tol && min > tol, min))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }
}

/// Block-diagonal orthonormal basis `E = diag(E_1, …, E_n)` of the reduced
/// space. Blocks may have zero columns when a block is fully pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    blocks: Vec<DMatrix<f64>>,
}

impl ReducedBasis {
    pub fn identity(blocks: &BlockStructure) -> Self {
        Self {
            blocks: blocks.dims().iter().map(|&d| DMatrix::identity(d, d)).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
        Self { blocks }
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Reduced widths `m̃_i`.
    pub fn reduced_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.ncols()).collect()
    }

    pub fn reduced_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    /// Ambient widths `m_i` of the blocks.
    pub fn blocks_ambient_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn ambient_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.blocks)
    }

    /// Distance from `d` to the span of `E`.
    pub fn off_span_norm(&self, d: &DVector<f64>) -> f64 {
        let e = self.matrix();
        (d - &e * (e.transpose() * d)).norm()
    }
}
