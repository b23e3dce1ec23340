//! Scaled projection onto a polyhedron and the gradient-projection candidate.
//!
//! The projection QP `min ½‖y − z‖²_{Γ⁻¹} s.t. Ay ≤ b` is solved with the
//! Goldfarb–Idnani dual active-set method. It starts from the unconstrained
//! minimizer `z`, so no feasible start is needed, it certifies emptiness of
//! the polyhedron on its own and it finishes with an exact working set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::ObjectiveModel;
use crate::polytope::{BlockStructure, Polyhedron};

/// Symmetric positive-definite scaling `Γ` with its eigenvalue bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMatrix {
    gamma: DMatrix<f64>,
    t: f64,
    t_upper: f64,
    blocks: Option<BlockStructure>,
}

impl ScalingMatrix {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != gamma.ncols() {
            return Err(Error::InvalidScaling(format!(
                "scaling must be square, got {}x{}",
                gamma.nrows(),
                gamma.ncols()
            )));
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScaling("non-finite entry".into()));
        }
        let asym = linalg::max_asymmetry(&gamma);
        if asym > 1e-12 * gamma.amax().max(1.0) {
            return Err(Error::InvalidScaling(format!("not symmetric (asymmetry {asym:e})")));
        }
        let gamma = linalg::symmetrize(&gamma);
        let (t, t_upper) = if gamma.nrows() == 0 {
            (1.0, 1.0)
        } else {
            (linalg::min_eigenvalue_sym(&gamma), linalg::max_eigenvalue_sym(&gamma))
        };
        if !(t > 0.0) || !linalg::is_positive_definite(&gamma) {
            return Err(Error::InvalidScaling(format!("not positive definite (min eigenvalue {t:e})")));
        }
        Ok(Self {
            gamma,
            t,
            t_upper,
            blocks: None,
        })
    }

    /// A scaling tagged as block-diagonal with respect to `blocks`.
    pub fn per_block(gamma: DMatrix<f64>, blocks: &BlockStructure) -> Result<Self> {
        if gamma.nrows() != blocks.total() {
            return Err(Error::DimensionMismatch {
                expected: blocks.total(),
                found: gamma.nrows(),
            });
        }
        if !blocks.is_block_diagonal(&gamma, 0.0) {
            return Err(Error::InvalidScaling("not block-diagonal for the block structure".into()));
        }
        let mut s = Self::new(gamma)?;
        s.blocks = Some(blocks.clone());
        Ok(s)
    }

    pub fn from_blocks(parts: &[DMatrix<f64>], blocks: &BlockStructure) -> Result<Self> {
        Self::per_block(linalg::block_diag(parts), blocks)
    }

    pub fn identity(m: usize) -> Self {
        Self {
            gamma: DMatrix::identity(m, m),
            t: 1.0,
            t_upper: 1.0,
            blocks: None,
        }
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(values)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// Smallest and largest eigenvalue.
    pub fn bounds(&self) -> (f64, f64) {
        (self.t, self.t_upper)
    }

    pub fn blocks(&self) -> Option<&BlockStructure> {
        self.blocks.as_ref()
    }

    /// Diagonal block `i` of `Γ` for the given structure.
    pub fn block(&self, blocks: &BlockStructure, i: usize) -> Result<ScalingMatrix> {
        let r = blocks.range(i);
        Self::new(self.gamma.view((r.start, r.start), (r.len(), r.len())).clone_owned())
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        linalg::sym_inverse(&self.gamma, "scaling matrix")
    }

    pub fn scaled(&self, alpha: f64) -> Result<ScalingMatrix> {
        let mut s = Self::new(&self.gamma * alpha)?;
        s.blocks = self.blocks.clone();
        Ok(s)
    }
}

/// Projection output with the final working set and its multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: DVector<f64>,
    pub working_set: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// `argmin_{Ay ≤ b} ‖y − z‖²_{Γ⁻¹}`.
pub fn scaled_project(p: &Polyhedron, z: &DVector<f64>, gamma: &ScalingMatrix) -> Result<DVector<f64>> {
    Ok(scaled_project_detailed(p, z, gamma)?.point)
}

fn violation_tol(p: &Polyhedron, j: usize, y: &DVector<f64>) -> f64 {
    let scale = p.a().row(j).amax() * y.amax();
    1e-12 * scale.max(p.b()[j].abs()).max(1.0)
}

/// Equality-constrained solution on the working set: the multipliers `u`
/// and the point `z − ΓNu` where `N` holds the working normals as columns.
fn solve_working(
    p: &Polyhedron,
    w: &[usize],
    z: &DVector<f64>,
    gamma: &DMatrix<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    if w.is_empty() {
        return Some((z.clone(), DVector::zeros(0)));
    }
    let n = DMatrix::from_fn(z.len(), w.len(), |r, k| p.a()[(w[k], r)]);
    let gn = gamma * &n;
    let k = n.transpose() * &gn;
    let rhs = n.transpose() * z - DVector::from_iterator(w.len(), w.iter().map(|&j| p.b()[j]));
    let u = k.cholesky()?.solve(&rhs);
    let y = z - gn * &u;
    Some((y, u))
}

pub fn scaled_project_detailed(p: &Polyhedron, z: &DVector<f64>, gamma: &ScalingMatrix) -> Result<Projection> {
    let m = p.dim();
    if z.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: z.len() });
    }
    if gamma.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, found: gamma.dim() });
    }
    let g = gamma.matrix();
    let cap = (50 * p.rows()).max(50);

    let mut y = z.clone();
    let mut w: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    loop {
        // Most violated constraint, lowest index on ties.
        let s = p.slacks(&y)?;
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..p.rows() {
            if w.contains(&j) {
                continue;
            }
            let v = s[j];
            if v > violation_tol(p, j, &y) && pick.is_none_or(|(_, best)| v > best) {
                pick = Some((j, v));
            }
        }
        let Some((jp, _)) = pick else { break };
        let ap: DVector<f64> = p.a().row(jp).transpose();
        let mut up = 0.0;

        // Increase the multiplier of jp until it becomes tight, dropping
        // blocking constraints on the way.
        loop {
            iterations += 1;
            if iterations > cap {
                let residual = p.max_violation(&y)?;
                return Err(Error::IterationCap { what: "projection QP", cap, residual });
            }
            let gap = p.a().row(jp).dot(&y.transpose()) - p.b()[jp];
            let (dz, r) = if w.is_empty() {
                (g * &ap, DVector::zeros(0))
            } else {
                let n = DMatrix::from_fn(m, w.len(), |rr, k| p.a()[(w[k], rr)]);
                let gn = g * &n;
                let k = n.transpose() * &gn;
                let chol = k.cholesky().ok_or_else(|| {
                    Error::NotPositiveDefinite("projection working-set Gram matrix".into())
                })?;
                let r = chol.solve(&(gn.transpose() * &ap));
                (g * (&ap - &n * &r), r)
            };
            let curvature = ap.dot(&dz);
            let dependent = curvature <= 1e-13 * ap.dot(&(g * &ap)).max(f64::MIN_POSITIVE);

            // Partial step limit from the working multipliers.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..w.len() {
                if r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }

            if dependent {
                let Some(kd) = drop else {
                    return Err(Error::EmptyPolyhedron { constraint: jp });
                };
                for k in 0..w.len() {
                    u[k] -= t1 * r[k];
                }
                up += t1;
                w.remove(kd);
                u.remove(kd);
                continue;
            }

            let t2 = gap.max(0.0) / curvature;
            if t2 <= t1 {
                for k in 0..w.len() {
                    u[k] -= t2 * r[k];
                }
                w.push(jp);
                u.push(up + t2);
                // Re-solve exactly on the new working set to avoid drift.
                match solve_working(p, &w, z, g) {
                    Some((yy, uu)) => {
                        y = yy;
                        u = uu.iter().copied().collect();
                    }
                    None => y -= dz * t2,
                }
                break;
            }
            y -= &dz * t1;
            for k in 0..w.len() {
                u[k] -= t1 * r[k];
            }
            up += t1;
            let kd = drop.expect("finite partial step has a blocking index");
            w.remove(kd);
            u.remove(kd);
        }
    }

    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by_key(|&k| w[k]);
    Ok(Projection {
        point: y,
        working_set: order.iter().map(|&k| w[k]).collect(),
        multipliers: order.iter().map(|&k| u[k]).collect(),
        iterations,
    })
}

/// Gradient-projection candidate `P_Γ(λ − αΓ∇f(λ))`.
pub fn gp_candidate(
    f: &ObjectiveModel,
    p: &Polyhedron,
    lambda: &DVector<f64>,
    gamma: &ScalingMatrix,
    alpha: f64,
) -> Result<DVector<f64>> {
    gp_candidate_from_gradient(p, lambda, &f.gradient(lambda), gamma, alpha)
}

pub fn gp_candidate_from_gradient(
    p: &Polyhedron,
    lambda: &DVector<f64>,
    grad: &DVector<f64>,
    gamma: &ScalingMatrix,
    alpha: f64,
) -> Result<DVector<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameters(format!("step size {alpha} outside (0, 1]")));
    }
    let z = lambda - (gamma.matrix() * grad) * alpha;
    scaled_project(p, &z, gamma)
}

/// `‖P(λ − ∇f(λ)) − λ‖`, zero exactly at stationary points.
pub fn optimality_residual(f: &ObjectiveModel, p: &Polyhedron, lambda: &DVector<f64>) -> Result<f64> {
    let c = gp_candidate(f, p, lambda, &ScalingMatrix::identity(p.dim()), 1.0)?;
    Ok((c - lambda).norm())
}
