//! Asymptotic rate objects in the reduced space at a solution: the cyclic
//! matrix `M`, the synchronous matrix `J`, per-block shrinkage `G̃_i`, the
//! randomized rates, Newton–Taylor scaling and its rate, and the envelopes
//! for the randomized map.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::ObjectiveModel;
use crate::polytope::{BlockStructure, ReducedBasis};
use crate::projection::ScalingMatrix;

/// Eigenvalue floor below which `H̃` is treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Shift used when a singular `H̃` is regularized.
pub const REGULARIZATION: f64 = 1e-10;

/// `H̃ = EᵀHE`, `Λ̃ = [EᵀΓ⁻¹E]⁻¹` and the splitting `H̃ = D̃ − L̃ − L̃ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub h: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Reduced widths `m̃_i`; blocks may be empty.
    pub dims: Vec<usize>,
    /// Whether `Λ̃` is block-diagonal (true for any block-diagonal `Γ`).
    pub block_scaling: bool,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(dims.len() + 1);
    o.push(0);
    for d in dims {
        o.push(o.last().unwrap() + d);
    }
    o
}

/// Block-diagonal part and negated strictly lower block part.
fn split(h: &DMatrix<f64>, dims: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let off = offsets(dims);
    let mut owner = vec![0usize; n];
    for i in 0..dims.len() {
        for k in off[i]..off[i + 1] {
            owner[k] = i;
        }
    }
    let mut d = DMatrix::zeros(n, n);
    let mut l = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if owner[r] == owner[c] {
                d[(r, c)] = h[(r, c)];
            } else if owner[r] > owner[c] {
                l[(r, c)] = -h[(r, c)];
            }
        }
    }
    (d, l)
}

fn block_diagonal_inverse(m: &DMatrix<f64>, dims: &[usize], what: &str) -> Result<DMatrix<f64>> {
    let off = offsets(dims);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..dims.len() {
        let (s, w) = (off[i], dims[i]);
        if w == 0 {
            continue;
        }
        let inv = linalg::sym_inverse(&m.view((s, s), (w, w)).clone_owned(), what)?;
        out.view_mut((s, s), (w, w)).copy_from(&inv);
    }
    Ok(out)
}

pub fn reduce(h: &DMatrix<f64>, gamma: &ScalingMatrix, e: &ReducedBasis) -> Result<ReducedModel> {
    let m = e.ambient_dim();
    if h.shape() != (m, m) || gamma.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: h.nrows(),
        });
    }
    let dims = e.reduced_dims();
    let em = e.matrix();
    let ht = linalg::symmetrize(&(em.transpose() * h * &em));
    let ginv = gamma.inverse()?;
    let ambient = BlockStructure::new(e.blocks_ambient_dims())?;
    let block_scaling = ambient.is_block_diagonal(gamma.matrix(), 0.0);
    let lambda = if block_scaling {
        let mut out = DMatrix::zeros(ht.nrows(), ht.nrows());
        let off = offsets(&dims);
        for i in 0..dims.len() {
            if dims[i] == 0 {
                continue;
            }
            let r = ambient.range(i);
            let ei = e.block(i);
            let gi = ginv.view((r.start, r.start), (r.len(), r.len()));
            let inner = linalg::symmetrize(&(ei.transpose() * gi * ei));
            let li = linalg::sym_inverse(&inner, "reduced scaling block")?;
            out.view_mut((off[i], off[i]), (dims[i], dims[i])).copy_from(&li);
        }
        out
    } else {
        let inner = linalg::symmetrize(&(em.transpose() * &ginv * &em));
        linalg::sym_inverse(&inner, "reduced scaling")?
    };
    let (d, l) = split(&ht, &dims);
    Ok(ReducedModel {
        h: ht,
        lambda,
        d,
        l,
        dims,
        block_scaling,
    })
}

impl ReducedModel {
    pub fn reduced_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn block_count(&self) -> usize {
        self.dims.len()
    }

    pub fn hessian_pd(&self) -> bool {
        self.reduced_dim() == 0 || linalg::min_eigenvalue_sym(&self.h) > EIGEN_FLOOR
    }

    pub fn lambda_inverse(&self) -> Result<DMatrix<f64>> {
        if self.block_scaling {
            block_diagonal_inverse(&self.lambda, &self.dims, "reduced scaling block")
        } else {
            linalg::sym_inverse(&self.lambda, "reduced scaling")
        }
    }

    /// `2Λ̃⁻¹ ≻ D̃`.
    pub fn ostrowski(&self) -> Result<bool> {
        if self.reduced_dim() == 0 {
            return Ok(true);
        }
        let s = self.lambda_inverse()? * 2.0 - &self.d;
        Ok(linalg::min_eigenvalue_sym(&s) > 0.0)
    }

    fn require_block_scaling(&self, what: &str) -> Result<()> {
        if self.block_scaling {
            Ok(())
        } else {
            Err(Error::InvalidScaling(format!("{what} requires a block-diagonal scaling")))
        }
    }

    fn base_hypotheses(&self) -> Hypotheses {
        Hypotheses {
            hessian_pd: Some(self.hessian_pd()),
            ostrowski: self.ostrowski().ok(),
            ..Hypotheses::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Cyclic,
    Jacobi,
    Centralized,
    Shrinkage(usize),
    RandomF,
    RandomSupernorm,
    NewtonTaylor(usize),
    Lemma1Linear,
    Lemma1Sublinear,
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cyclic => f.write_str("cyclic"),
            Self::Jacobi => f.write_str("jacobi"),
            Self::Centralized => f.write_str("centralized"),
            Self::Shrinkage(i) => write!(f, "shrinkage({i})"),
            Self::RandomF => f.write_str("random_f"),
            Self::RandomSupernorm => f.write_str("random_supernorm"),
            Self::NewtonTaylor(q) => write!(f, "newton_taylor({q})"),
            Self::Lemma1Linear => f.write_str("lemma1_linear"),
            Self::Lemma1Sublinear => f.write_str("lemma1_sublinear"),
        }
    }
}

/// Which hypotheses were checked and whether they hold. `None` means the
/// flag was not evaluated for this report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Hypotheses {
    pub strict_complementarity: Option<bool>,
    pub hessian_pd: Option<bool>,
    pub efficiency: Option<bool>,
    pub ostrowski: Option<bool>,
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub kind: RateKind,
    pub reduced_dim: usize,
    pub spectral_radius: f64,
    pub hypotheses: Hypotheses,
    pub matrix: Option<DMatrix<f64>>,
}

impl Serialize for RateReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("RateReport", 5)?;
        st.serialize_field("kind", &self.kind.to_string())?;
        st.serialize_field("m_tilde", &self.reduced_dim)?;
        st.serialize_field("rho", &self.spectral_radius)?;
        st.serialize_field("hypotheses", &self.hypotheses)?;
        let rows: Option<Vec<Vec<f64>>> = self
            .matrix
            .as_ref()
            .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect());
        st.serialize_field("matrix", &rows)?;
        st.end()
    }
}

impl RateReport {
    fn from_matrix(kind: RateKind, m: DMatrix<f64>, hypotheses: Hypotheses) -> Result<Self> {
        Ok(Self {
            kind,
            reduced_dim: m.nrows(),
            spectral_radius: linalg::spectral_radius(&m)?,
            hypotheses,
            matrix: Some(m),
        })
    }
}

/// `M = [Λ̃⁻¹ − L̃]⁻¹[Λ̃⁻¹ − D̃ + L̃ᵀ]`.
pub fn cyclic_rate(rm: &ReducedModel) -> Result<RateReport> {
    rm.require_block_scaling("the cyclic rate")?;
    let li = rm.lambda_inverse()?;
    let lhs = &li - &rm.l;
    let rhs = &li - &rm.d + rm.l.transpose();
    let m = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("Λ̃⁻¹ − L̃ is singular".into()))?;
    RateReport::from_matrix(RateKind::Cyclic, m, rm.base_hypotheses())
}

/// `J = Ĩ − Λ̃H̃`.
pub fn jacobi_rate(rm: &ReducedModel) -> Result<RateReport> {
    rm.require_block_scaling("the Jacobi rate")?;
    let n = rm.reduced_dim();
    let j = DMatrix::identity(n, n) - &rm.lambda * &rm.h;
    RateReport::from_matrix(RateKind::Jacobi, j, rm.base_hypotheses())
}

/// `Ĩ − Λ̃H̃` for an arbitrary (possibly coupled) scaling.
pub fn centralized_rate(rm: &ReducedModel) -> Result<RateReport> {
    let n = rm.reduced_dim();
    let j = DMatrix::identity(n, n) - &rm.lambda * &rm.h;
    RateReport::from_matrix(RateKind::Centralized, j, rm.base_hypotheses())
}

fn shrinkage_matrix(rm: &ReducedModel, i: usize) -> DMatrix<f64> {
    let n = rm.reduced_dim();
    let off = offsets(&rm.dims);
    let lh = &rm.lambda * &rm.h;
    let mut g = DMatrix::identity(n, n);
    for r in off[i]..off[i + 1] {
        for c in 0..n {
            g[(r, c)] -= lh[(r, c)];
        }
    }
    g
}

/// `G̃_i = Ĩ − diag(0, …, Ĩ_i, …, 0)Λ̃H̃`.
pub fn coordinate_shrinkage(rm: &ReducedModel, i: usize) -> Result<RateReport> {
    if i >= rm.block_count() {
        return Err(Error::InvalidParameters(format!(
            "block {i} out of range for {} blocks",
            rm.block_count()
        )));
    }
    rm.require_block_scaling("coordinate shrinkage")?;
    RateReport::from_matrix(RateKind::Shrinkage(i), shrinkage_matrix(rm, i), rm.base_hypotheses())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductIdentity {
    pub lhs: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
    pub max_abs_error: f64,
}

/// Compares `G_n⋯G_1`, `G_i = I − diag(0,…,I_i,…,0)T(D − L − Lᵀ)`, with
/// `(T⁻¹ − L)⁻¹(T⁻¹ − D + Lᵀ)`.
pub fn verify_product_identity(
    d: &DMatrix<f64>,
    l: &DMatrix<f64>,
    t: &DMatrix<f64>,
    dims: &[usize],
) -> Result<ProductIdentity> {
    let n = d.nrows();
    let off = offsets(dims);
    if *off.last().unwrap() != n || l.shape() != (n, n) || t.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: *off.last().unwrap(),
        });
    }
    let h = d - l - l.transpose();
    let th = t * &h;
    let mut lhs = DMatrix::identity(n, n);
    for i in 0..dims.len() {
        let mut g = DMatrix::<f64>::identity(n, n);
        for r in off[i]..off[i + 1] {
            for c in 0..n {
                g[(r, c)] -= th[(r, c)];
            }
        }
        lhs = g * lhs;
    }
    let tinv = block_diagonal_inverse(t, dims, "T")?;
    let rhs = (&tinv - l)
        .lu()
        .solve(&(&tinv - d + l.transpose()))
        .ok_or_else(|| Error::NotPositiveDefinite("T⁻¹ − L is singular".into()))?;
    let max_abs_error = (&lhs - &rhs).amax();
    Ok(ProductIdentity {
        lhs,
        rhs,
        max_abs_error,
    })
}

/// `H̃^{1/2}` and `H̃^{-1/2}`, regularized by `εI` when `H̃` is singular.
fn hessian_roots(rm: &ReducedModel, allow_regularization: bool) -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
    let n = rm.reduced_dim();
    let min = linalg::min_eigenvalue_sym(&rm.h);
    if min >= EIGEN_FLOOR {
        let (s, si, _) = linalg::sym_sqrt_pair(&rm.h, EIGEN_FLOOR);
        return Ok((s, si, false));
    }
    if !allow_regularization {
        return Err(Error::NotPositiveDefinite(format!(
            "reduced Hessian has eigenvalue {min:e} below {EIGEN_FLOOR:e}"
        )));
    }
    let reg = &rm.h + DMatrix::identity(n, n) * REGULARIZATION;
    let (s, si, _) = linalg::sym_sqrt_pair(&reg, EIGEN_FLOOR);
    Ok((s, si, true))
}

/// `ρ(Σ_i π_i W^{1/2} G̃_iᵀ W G̃_i W^{-1/2})` computed in the symmetric form
/// `Σ_i π_i N_iᵀN_i` with `N_i = W^{1/2}G̃_iW^{-1/2}`.
fn weighted_shrinkage(rm: &ReducedModel, pi: &[f64], root: &DMatrix<f64>, inv_root: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rm.reduced_dim();
    let mut s = DMatrix::zeros(n, n);
    for (i, &p) in pi.iter().enumerate() {
        let ni = root * shrinkage_matrix(rm, i) * inv_root;
        s += ni.transpose() * ni * p;
    }
    linalg::symmetrize(&s)
}

fn check_pi(rm: &ReducedModel, pi: &[f64]) -> Result<()> {
    crate::solvers::validate_pi(pi, rm.block_count())
}

/// `N^F = ρ(Σ_i π_i G̃_iᵀH̃G̃_iH̃⁻¹)`. The reported matrix is the symmetric
/// similar form `Σ π_i N_iᵀN_i`.
pub fn random_rate_f(rm: &ReducedModel, pi: &[f64], allow_regularization: bool) -> Result<RateReport> {
    check_pi(rm, pi)?;
    rm.require_block_scaling("the random rate")?;
    let mut hyp = rm.base_hypotheses();
    if rm.reduced_dim() == 0 {
        return Ok(RateReport {
            kind: RateKind::RandomF,
            reduced_dim: 0,
            spectral_radius: 0.0,
            hypotheses: hyp,
            matrix: Some(DMatrix::zeros(0, 0)),
        });
    }
    let (root, inv_root, regularized) = hessian_roots(rm, allow_regularization)?;
    hyp.regularized = regularized;
    let s = weighted_shrinkage(rm, pi, &root, &inv_root);
    Ok(RateReport {
        kind: RateKind::RandomF,
        reduced_dim: s.nrows(),
        spectral_radius: linalg::spectral_radius_sym(&s),
        hypotheses: hyp,
        matrix: Some(s),
    })
}

/// `V = [n·diag(π_1Γ̂_1, …, π_nΓ̂_n)]⁻¹`.
pub fn supernorm_metric(pi: &[f64], gamma_hat: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n = gamma_hat.len();
    crate::solvers::validate_pi(pi, n)?;
    let parts = gamma_hat
        .iter()
        .zip(pi)
        .map(|(g, &p)| linalg::sym_inverse(&(g * (p * n as f64)), "supernorm scaling block"))
        .collect::<Result<Vec<_>>>()?;
    Ok(linalg::block_diag(&parts))
}

/// `Ψ(λ) = (n p̲ / 2)‖λ − λ*‖²_V + f(λ) − f(λ*)`.
pub fn supernorm(
    lambda: &DVector<f64>,
    lambda_star: &DVector<f64>,
    f: &ObjectiveModel,
    v: &DMatrix<f64>,
    n: usize,
    p_min: f64,
) -> f64 {
    let d = lambda - lambda_star;
    0.5 * n as f64 * p_min * d.dot(&(v * &d)) + f.value_difference(lambda_star, lambda)
}

/// `N^Ψ = max(N^F, ρ(Σ π_i G̃_iᵀṼG̃_iṼ⁻¹))` with `Ṽ = EᵀVE`. Needs the
/// strong-convexity matrix, passed as `u`.
pub fn random_rate_supernorm(
    rm: &ReducedModel,
    pi: &[f64],
    v_tilde: &DMatrix<f64>,
    u: Option<&DMatrix<f64>>,
) -> Result<RateReport> {
    if u.is_none() {
        return Err(Error::MissingStrongConvexity("the supernorm rate"));
    }
    let nf = random_rate_f(rm, pi, false)?;
    let n = rm.reduced_dim();
    if n == 0 {
        return Ok(RateReport {
            kind: RateKind::RandomSupernorm,
            ..nf
        });
    }
    if v_tilde.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v_tilde.nrows(),
        });
    }
    if !linalg::is_positive_definite(v_tilde) {
        return Err(Error::NotPositiveDefinite("reduced supernorm metric".into()));
    }
    let (root, inv_root, _) = linalg::sym_sqrt_pair(v_tilde, EIGEN_FLOOR);
    let sv = weighted_shrinkage(rm, pi, &root, &inv_root);
    let rho_v = linalg::spectral_radius_sym(&sv);
    let (spectral_radius, matrix) = if rho_v > nf.spectral_radius {
        (rho_v, sv)
    } else {
        (nf.spectral_radius, nf.matrix.clone().unwrap())
    };
    Ok(RateReport {
        kind: RateKind::RandomSupernorm,
        reduced_dim: n,
        spectral_radius,
        hypotheses: nf.hypotheses,
        matrix: Some(matrix),
    })
}

/// Largest `u` with `uV ⪯ U`, i.e. the smallest eigenvalue of `V^{-1/2}UV^{-1/2}`.
pub fn min_generalized_eigenvalue(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if !linalg::is_positive_definite(v) {
        return Err(Error::NotPositiveDefinite("V".into()));
    }
    let (_, vi, _) = linalg::sym_sqrt_pair(v, EIGEN_FLOOR);
    Ok(linalg::min_eigenvalue_sym(&(&vi * u * &vi)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelopes {
    pub sublinear: f64,
    pub linear: f64,
}

/// `1/(1 + p̲k)` and `1 − 2p̲u̲/(u̲ + np̲)`.
pub fn lemma1_envelopes(n: usize, p_min: f64, u_min: f64, k: usize) -> Envelopes {
    let np = n as f64 * p_min;
    Envelopes {
        sublinear: 1.0 / (1.0 + p_min * k as f64),
        linear: 1.0 - 2.0 * p_min * u_min / (u_min + np),
    }
}

/// Block-diagonal part `D` of `H` and its inverse square root.
fn diag_inv_sqrt(h: &DMatrix<f64>, blocks: &BlockStructure) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut root = DMatrix::zeros(h.nrows(), h.ncols());
    let mut inv_root = DMatrix::zeros(h.nrows(), h.ncols());
    for i in 0..blocks.count() {
        let r = blocks.range(i);
        let di = h.view((r.start, r.start), (r.len(), r.len())).clone_owned();
        if !linalg::is_positive_definite(&di) {
            return Err(Error::NotPositiveDefinite(format!("Hessian diagonal block {i}")));
        }
        let (s, si, _) = linalg::sym_sqrt_pair(&di, 0.0);
        root.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&s);
        inv_root.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&si);
    }
    Ok((root, inv_root))
}

/// `Q = D^{-1/2}(L + Lᵀ)D^{-1/2} = I − D^{-1/2}HD^{-1/2}`.
pub fn newton_taylor_q(h: &DMatrix<f64>, blocks: &BlockStructure) -> Result<DMatrix<f64>> {
    let (_, si) = diag_inv_sqrt(h, blocks)?;
    let (d, _) = split(h, blocks.dims());
    Ok(linalg::symmetrize(&(&si * (d - h) * &si)))
}

/// `Γ = D^{-1/2}[Σ_{t=0}^{q} Q^t]D^{-1/2}`.
pub fn newton_taylor_scaling(h: &DMatrix<f64>, blocks: &BlockStructure, q: usize) -> Result<ScalingMatrix> {
    let n = h.nrows();
    if blocks.total() != n {
        return Err(Error::DimensionMismatch {
            expected: blocks.total(),
            found: n,
        });
    }
    let qm = newton_taylor_q(h, blocks)?;
    let rho = linalg::spectral_radius_sym(&qm);
    if rho >= 1.0 {
        return Err(Error::SeriesDivergent { rho });
    }
    // Same series written as Σ_t (D⁻¹N)^t D⁻¹ with N = D − H, which avoids
    // the square roots and keeps simple cases exact.
    let (d, _) = split(h, blocks.dims());
    let dinv = block_diagonal_inverse(&d, blocks.dims(), "Hessian diagonal block")?;
    let step = &dinv * (&d - h);
    let mut term = dinv.clone();
    let mut g = dinv;
    for _ in 0..q {
        term = &step * &term;
        g += &term;
    }
    let g = linalg::symmetrize(&g);
    if blocks.is_block_diagonal(&g, 0.0) {
        ScalingMatrix::per_block(g, blocks)
    } else {
        ScalingMatrix::new(g)
    }
}

/// `Z̃^{[q]} = Λ̃EᵀΓ⁻¹Z^{[q]}E` with `Z^{[q]} = D^{-1/2}Q^{q+1}D^{1/2}` and
/// `Λ̃ = [EᵀΓ⁻¹E]⁻¹`.
pub fn newton_taylor_rate(
    h: &DMatrix<f64>,
    gamma: &ScalingMatrix,
    e: &ReducedBasis,
    blocks: &BlockStructure,
    q: usize,
) -> Result<RateReport> {
    let n = h.nrows();
    let (root, si) = diag_inv_sqrt(h, blocks)?;
    let qm = newton_taylor_q(h, blocks)?;
    let rho = linalg::spectral_radius_sym(&qm);
    if rho >= 1.0 {
        return Err(Error::SeriesDivergent { rho });
    }
    let mut pow = DMatrix::identity(n, n);
    for _ in 0..=q {
        pow = &pow * &qm;
    }
    let z = &si * pow * &root;
    let em = e.matrix();
    let ginv = gamma.inverse()?;
    let mt = em.ncols();
    if mt == 0 {
        return Ok(RateReport {
            kind: RateKind::NewtonTaylor(q),
            reduced_dim: 0,
            spectral_radius: 0.0,
            hypotheses: Hypotheses::default(),
            matrix: Some(DMatrix::zeros(0, 0)),
        });
    }
    let lam = linalg::sym_inverse(&linalg::symmetrize(&(em.transpose() * &ginv * &em)), "reduced scaling")?;
    let zt = lam * em.transpose() * ginv * z * &em;
    let ht = em.transpose() * h * &em;
    let hyp = Hypotheses {
        hessian_pd: Some(linalg::min_eigenvalue_sym(&ht) > EIGEN_FLOOR),
        ..Hypotheses::default()
    };
    RateReport::from_matrix(RateKind::NewtonTaylor(q), zt, hyp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EfficiencyFlags {
    /// `2(1 − σ)Γ⁻¹ ≻ D`.
    pub efficiency: bool,
    /// `2Λ̃⁻¹ ≻ D̃`.
    pub ostrowski: bool,
}

/// Both matrix inequalities by smallest-eigenvalue checks. `d` is the
/// block-diagonal part of the Hessian at the solution.
pub fn efficiency_conditions(
    gamma: &ScalingMatrix,
    d: &DMatrix<f64>,
    sigma: f64,
    rm: &ReducedModel,
) -> Result<EfficiencyFlags> {
    let efficiency = if d.nrows() == 0 {
        true
    } else {
        let s = gamma.inverse()? * (2.0 * (1.0 - sigma)) - d;
        linalg::min_eigenvalue_sym(&s) > 0.0
    };
    Ok(EfficiencyFlags {
        efficiency,
        ostrowski: rm.ostrowski()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{ActiveSet, Polyhedron};

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn q21() -> DMatrix<f64> {
        m2(2.0, 1.0, 1.0, 2.0)
    }

    fn newton_block(h: &DMatrix<f64>, blocks: &BlockStructure) -> ScalingMatrix {
        let parts: Vec<_> = (0..blocks.count())
            .map(|i| {
                let r = blocks.range(i);
                linalg::sym_inverse(&h.view((r.start, r.start), (r.len(), r.len())).clone_owned(), "h").unwrap()
            })
            .collect();
        ScalingMatrix::from_blocks(&parts, blocks).unwrap()
    }

    fn model(h: DMatrix<f64>) -> ReducedModel {
        let b = BlockStructure::scalar(h.nrows());
        let g = newton_block(&h, &b);
        reduce(&h, &g, &ReducedBasis::identity(&b)).unwrap()
    }

    #[test]
    fn reduce_examples() {
        let b = BlockStructure::scalar(2);
        let g = ScalingMatrix::diagonal(&[0.3, 0.7]).unwrap();
        let rm = reduce(&q21(), &g, &ReducedBasis::identity(&b)).unwrap();
        assert_eq!(rm.h, q21());
        assert!((&rm.lambda - g.matrix()).amax() < 1e-15);
        assert_eq!(&rm.d - &rm.l - rm.l.transpose(), rm.h);

        let p = Polyhedron::from_box(&[0.0, f64::NEG_INFINITY], &[f64::INFINITY; 2], b.clone()).unwrap();
        let e = p.reduced_basis(&ActiveSet::from_sorted(vec![0]));
        let rm = reduce(&q21(), &ScalingMatrix::identity(2), &e).unwrap();
        assert_eq!(rm.h, DMatrix::from_element(1, 1, 2.0));
        assert_eq!(rm.lambda, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(rm.dims, vec![0, 1]);

        let p = Polyhedron::from_box(&[0.0, 0.0], &[f64::INFINITY; 2], b).unwrap();
        let e = p.reduced_basis(&ActiveSet::from_sorted(vec![0, 1]));
        let rm = reduce(&q21(), &ScalingMatrix::identity(2), &e).unwrap();
        assert_eq!(rm.reduced_dim(), 0);
        assert_eq!(cyclic_rate(&rm).unwrap().spectral_radius, 0.0);
        assert_eq!(jacobi_rate(&rm).unwrap().spectral_radius, 0.0);
        assert_eq!(random_rate_f(&rm, &[0.5, 0.5], false).unwrap().spectral_radius, 0.0);
    }

    #[test]
    fn cyclic_and_jacobi_examples() {
        let rm = model(q21());
        let c = cyclic_rate(&rm).unwrap();
        assert_eq!(c.matrix.as_ref().unwrap(), &m2(0.0, -0.5, 0.0, 0.25));
        assert!((c.spectral_radius - 0.25).abs() <= 1e-12);
        let j = jacobi_rate(&rm).unwrap();
        assert_eq!(j.matrix.as_ref().unwrap(), &m2(0.0, -0.5, -0.5, 0.0));
        assert!((j.spectral_radius - 0.5).abs() <= 1e-12);

        let diag = model(m2(2.0, 0.0, 0.0, 5.0));
        assert_eq!(cyclic_rate(&diag).unwrap().spectral_radius, 0.0);
        assert_eq!(jacobi_rate(&diag).unwrap().matrix.unwrap(), DMatrix::zeros(2, 2));

        // full Newton with one block
        let b = BlockStructure::single(2);
        let g = newton_block(&q21(), &b);
        let rm = reduce(&q21(), &g, &ReducedBasis::identity(&b)).unwrap();
        assert!(jacobi_rate(&rm).unwrap().matrix.unwrap().amax() < 1e-15);
    }

    #[test]
    fn shrinkage_examples() {
        let rm = model(m2(2.0, 0.0, 0.0, 2.0));
        assert_eq!(coordinate_shrinkage(&rm, 0).unwrap().matrix.unwrap(), m2(0.0, 0.0, 0.0, 1.0));
        let rm = model(q21());
        let g0 = coordinate_shrinkage(&rm, 0).unwrap().matrix.unwrap();
        assert_eq!(g0, m2(0.0, -0.5, 0.0, 1.0));
        let g1 = coordinate_shrinkage(&rm, 1).unwrap().matrix.unwrap();
        assert_eq!(g1 * g0, cyclic_rate(&rm).unwrap().matrix.unwrap());
        assert!(coordinate_shrinkage(&rm, 2).is_err());
    }

    #[test]
    fn shrinkage_on_empty_block_is_identity() {
        let b = BlockStructure::scalar(2);
        let p = Polyhedron::from_box(&[0.0, f64::NEG_INFINITY], &[f64::INFINITY; 2], b).unwrap();
        let e = p.reduced_basis(&ActiveSet::from_sorted(vec![0]));
        let rm = reduce(&q21(), &ScalingMatrix::identity(2), &e).unwrap();
        assert_eq!(coordinate_shrinkage(&rm, 0).unwrap().matrix.unwrap(), DMatrix::identity(1, 1));
    }

    #[test]
    fn product_identity_single_block() {
        let d = m2(3.0, 1.0, 1.0, 2.0);
        let l = DMatrix::zeros(2, 2);
        let t = m2(0.5, 0.1, 0.1, 0.4);
        let r = verify_product_identity(&d, &l, &t, &[2]).unwrap();
        let expect = DMatrix::identity(2, 2) - &t * &d;
        assert!((&r.lhs - &expect).amax() < 1e-15);
        assert!(r.max_abs_error < 1e-14);
    }

    #[test]
    fn random_rate_examples() {
        let rm = model(m2(2.0, 0.0, 0.0, 2.0));
        let r = random_rate_f(&rm, &[0.5, 0.5], false).unwrap();
        assert!((r.spectral_radius - 0.5).abs() < 1e-15);
        let r = random_rate_f(&rm, &[0.99, 0.01], false).unwrap();
        assert!((r.spectral_radius - 0.99).abs() < 1e-15);
        assert!(random_rate_f(&rm, &[0.5, 0.6], false).is_err());
    }

    #[test]
    fn regularization_flag() {
        let rm = model(m2(1.0, 1.0, 1.0, 1.0 + 1e-14));
        assert!(random_rate_f(&rm, &[0.5, 0.5], false).is_err());
        let r = random_rate_f(&rm, &[0.5, 0.5], true).unwrap();
        assert!(r.hypotheses.regularized);
        assert!(r.spectral_radius <= 1.0 + 1e-8);
    }

    #[test]
    fn supernorm_examples() {
        let b = BlockStructure::single(2);
        let f = ObjectiveModel::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), b).unwrap();
        let star = DVector::zeros(2);
        let v = supernorm_metric(&[0.5, 0.5], &[DMatrix::identity(1, 1), DMatrix::identity(1, 1)]).unwrap();
        assert_eq!(v, DMatrix::identity(2, 2));
        assert_eq!(supernorm(&star, &star, &f, &v, 2, 0.5), 0.0);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(supernorm(&x, &star, &f, &v, 2, 0.5), 1.0);

        let f2 = ObjectiveModel::quadratic(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), BlockStructure::single(2))
            .unwrap();
        assert_eq!(supernorm(&x, &star, &f2, &(v * 2.0), 2, 0.5), 2.0);
    }

    #[test]
    fn supernorm_rate_examples() {
        let rm = model(m2(2.0, 0.0, 0.0, 2.0));
        let half = DMatrix::from_element(1, 1, 0.5);
        let v = supernorm_metric(&[0.5, 0.5], &[half.clone(), half]).unwrap();
        assert_eq!(v, DMatrix::identity(2, 2) * 2.0);
        let u = DMatrix::identity(2, 2) * 2.0;
        let r = random_rate_supernorm(&rm, &[0.5, 0.5], &v, Some(&u)).unwrap();
        assert!((r.spectral_radius - 0.5).abs() < 1e-15);
        assert!(matches!(
            random_rate_supernorm(&rm, &[0.5, 0.5], &v, None),
            Err(Error::MissingStrongConvexity(_))
        ));
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(lemma1_envelopes(2, 0.5, 1.0, 2).sublinear, 0.5);
        assert_eq!(lemma1_envelopes(2, 0.5, 1.0, 0).sublinear, 1.0);
        let e = lemma1_envelopes(4, 0.25, 1.0, 0);
        assert!((e.linear - 0.75).abs() < 1e-15);
        let u = min_generalized_eigenvalue(&(DMatrix::identity(2, 2) * 3.0), &DMatrix::identity(2, 2)).unwrap();
        assert!((u - 3.0).abs() < 1e-14);
    }

    #[test]
    fn newton_taylor_examples() {
        let b = BlockStructure::scalar(2);
        let g0 = newton_taylor_scaling(&q21(), &b, 0).unwrap();
        assert_eq!(g0.matrix(), &m2(0.5, 0.0, 0.0, 0.5));
        let g1 = newton_taylor_scaling(&q21(), &b, 1).unwrap();
        // Q = I − D^{-1/2}HD^{-1/2} = [[0, −½], [−½, 0]]
        assert!((newton_taylor_q(&q21(), &b).unwrap() - m2(0.0, -0.5, -0.5, 0.0)).amax() < 1e-15);
        assert!((g1.matrix() - m2(0.5, -0.25, -0.25, 0.5)).amax() < 1e-15);

        let hd = m2(4.0, 0.0, 0.0, 0.5);
        for q in 0..4 {
            let g = newton_taylor_scaling(&hd, &b, q).unwrap();
            assert!((g.matrix() - m2(0.25, 0.0, 0.0, 2.0)).amax() < 1e-15);
            let r = newton_taylor_rate(&hd, &g, &ReducedBasis::identity(&b), &b, q).unwrap();
            assert_eq!(r.spectral_radius, 0.0);
        }

        let mut last = 1.0;
        for q in 0..6 {
            let g = newton_taylor_scaling(&q21(), &b, q).unwrap();
            let r = newton_taylor_rate(&q21(), &g, &ReducedBasis::identity(&b), &b, q).unwrap();
            let expect = 0.5f64.powi(q as i32 + 1);
            assert!((r.spectral_radius - expect).abs() < 1e-12, "q={q}");
            assert!(r.spectral_radius < last);
            last = r.spectral_radius;
        }

        let bad = m2(1.0, 2.0, 2.0, 1.0);
        assert!(matches!(newton_taylor_scaling(&bad, &b, 1), Err(Error::SeriesDivergent { .. })));
    }

    #[test]
    fn efficiency_examples() {
        let rm = model(q21());
        let d = m2(2.0, 0.0, 0.0, 2.0);
        let g = ScalingMatrix::diagonal(&[0.5, 0.5]).unwrap();
        let f = efficiency_conditions(&g, &d, 0.25, &rm).unwrap();
        assert!(f.efficiency && f.ostrowski);
        let g3 = ScalingMatrix::diagonal(&[1.5, 1.5]).unwrap();
        assert!(!efficiency_conditions(&g3, &d, 0.25, &rm).unwrap().efficiency);

        let b = BlockStructure::scalar(2);
        let p = Polyhedron::from_box(&[0.0, 0.0], &[f64::INFINITY; 2], b).unwrap();
        let e = p.reduced_basis(&ActiveSet::from_sorted(vec![0, 1]));
        let empty = reduce(&q21(), &g, &e).unwrap();
        assert!(empty.ostrowski().unwrap());
    }

    #[test]
    fn report_json_layout() {
        let r = cyclic_rate(&model(q21())).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kind"], "cyclic");
        assert_eq!(v["m_tilde"], 2);
        assert_eq!(v["matrix"][0][1], -0.5);
        assert_eq!(v["hypotheses"]["hessian_pd"], true);
    }
}
