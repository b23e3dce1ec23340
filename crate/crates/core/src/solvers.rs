//! Centralized gradient projection and the cyclic, synchronous (Jacobi) and
//! randomized block maps, with the Armijo rule and iterate traces.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::ObjectiveModel;
use crate::polytope::{ActiveSet, Polyhedron, ACTIVE_TOL};
use crate::projection::{self, ScalingMatrix};
use crate::rates;

pub const BACKTRACK_CAP: usize = 60;

/// Eigenvalue window `[t, T]` used when a Hessian block is inverted.
pub const NEWTON_CLAMP: (f64, f64) = (1e-8, 1e8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Centralized,
    Cyclic,
    Jacobi,
    Random,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Centralized => "centralized",
            Self::Cyclic => "cyclic",
            Self::Jacobi => "jacobi",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "centralized" => Ok(Self::Centralized),
            "cyclic" => Ok(Self::Cyclic),
            "jacobi" => Ok(Self::Jacobi),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}' (expected centralized, cyclic, jacobi or random)"
            ))),
        }
    }
}

/// How `Γ(f, λ)` is formed at each iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Scaling {
    Identity,
    FixedDiagonal(Vec<f64>),
    /// Inverse of each (clamped) diagonal Hessian block.
    NewtonBlock,
    /// Inverse of the full (clamped) Hessian. Centralized only.
    Newton,
    /// Truncated series for the inverse Hessian of order `q`. Centralized only.
    NewtonTaylor(usize),
    /// `Γ_i = L_i⁻¹`, a fixed scaling satisfying `Γ_i ⪯ L_i⁻¹`.
    InverseLipschitz,
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::FixedDiagonal(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "diag:{}", parts.join(","))
            }
            Self::NewtonBlock => f.write_str("newton-block"),
            Self::Newton => f.write_str("newton"),
            Self::NewtonTaylor(q) => write!(f, "newton-taylor:{q}"),
            Self::InverseLipschitz => f.write_str("inverse-lipschitz"),
        }
    }
}

impl FromStr for Scaling {
    type Err = Error;

    /// Accepts `identity`, `newton-block`, `newton`, `inverse-lipschitz`,
    /// `newton-taylor:Q` (or `newton-taylor(Q)`) and `diag:v1,v2,…`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("cannot parse scaling '{s}'"));
        match s {
            "identity" => return Ok(Self::Identity),
            "newton-block" => return Ok(Self::NewtonBlock),
            "newton" => return Ok(Self::Newton),
            "inverse-lipschitz" => return Ok(Self::InverseLipschitz),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("newton-taylor") {
            let q = rest
                .trim_start_matches([':', '('])
                .trim_end_matches(')')
                .parse::<usize>()
                .map_err(|_| bad())?;
            return Ok(Self::NewtonTaylor(q));
        }
        if let Some(rest) = s.strip_prefix("diag:") {
            let v = rest
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            return Ok(Self::FixedDiagonal(v));
        }
        Err(bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Armijo,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub beta: f64,
    pub sigma: f64,
    pub variant: Variant,
    pub scaling: Scaling,
    pub step_rule: StepRule,
    /// Block probabilities for the random variant; uniform when absent.
    pub pi: Option<Vec<f64>>,
    /// Block order for the cyclic variant; ascending when absent.
    pub order: Option<Vec<usize>>,
    pub seed: u64,
    pub max_iters: usize,
    pub stop_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            sigma: 0.25,
            variant: Variant::Centralized,
            scaling: Scaling::Identity,
            step_rule: StepRule::Armijo,
            pi: None,
            order: None,
            seed: 0,
            max_iters: 100_000,
            stop_tol: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn new(variant: Variant, scaling: Scaling) -> Self {
        Self {
            variant,
            scaling,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_blocks: usize, m: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta = {} not in (0, 1)", self.beta)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(format!("sigma = {} not in (0, 1)", self.sigma)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be nonnegative".into()));
        }
        if let Some(pi) = &self.pi {
            validate_pi(pi, n_blocks)?;
        }
        if let Some(order) = &self.order {
            let mut seen = vec![false; n_blocks];
            if order.len() != n_blocks || order.iter().any(|&i| i >= n_blocks || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::InvalidConfig(format!(
                    "cyclic order {order:?} is not a permutation of 0..{n_blocks}"
                )));
            }
        }
        match &self.scaling {
            Scaling::FixedDiagonal(v) => {
                if v.len() != m {
                    return Err(Error::InvalidConfig(format!(
                        "fixed diagonal scaling has {} entries, expected {m}",
                        v.len()
                    )));
                }
                if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidConfig("fixed diagonal scaling must be positive".into()));
                }
            }
            Scaling::Newton | Scaling::NewtonTaylor(_) if self.variant != Variant::Centralized && n_blocks > 1 => {
                return Err(Error::InvalidConfig(format!(
                    "scaling '{}' couples blocks and is only available for the centralized variant",
                    self.scaling
                )));
            }
            _ => {}
        }
        Ok(())
    }

    /// The random-variant envelopes need `σ ≤ ½` on top of the usual checks.
    pub fn validate_for_envelopes(&self, n_blocks: usize, m: usize) -> Result<()> {
        self.validate(n_blocks, m)?;
        if self.sigma > 0.5 {
            return Err(Error::InvalidConfig(format!(
                "sigma = {} exceeds 1/2, required for the random-variant envelopes",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn probabilities(&self, n_blocks: usize) -> Vec<f64> {
        self.pi
            .clone()
            .unwrap_or_else(|| vec![1.0 / n_blocks as f64; n_blocks])
    }

    pub fn block_order(&self, n_blocks: usize) -> Vec<usize> {
        self.order.clone().unwrap_or_else(|| (0..n_blocks).collect())
    }
}

pub fn validate_pi(pi: &[f64], n_blocks: usize) -> Result<()> {
    if pi.len() != n_blocks {
        return Err(Error::InvalidConfig(format!(
            "pi has {} entries for {n_blocks} blocks",
            pi.len()
        )));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidConfig("pi entries must be positive".into()));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("pi sums to {s}, not 1")));
    }
    Ok(())
}

fn clamped_inverse(h: &DMatrix<f64>) -> DMatrix<f64> {
    let (lo, hi) = NEWTON_CLAMP;
    linalg::sym_map_eigenvalues(h, |v| 1.0 / v.clamp(lo, hi))
}

/// Scaling for the whole space at `x`. Block-diagonal for every rule except
/// `Newton` and `NewtonTaylor`.
pub fn scaling_at(f: &ObjectiveModel, cfg: &SolverConfig, x: &DVector<f64>) -> Result<ScalingMatrix> {
    let blocks = f.blocks();
    let m = f.dim();
    let g = match &cfg.scaling {
        Scaling::Identity => return Ok(ScalingMatrix::identity(m)),
        Scaling::FixedDiagonal(v) => DMatrix::from_diagonal(&DVector::from_row_slice(v)),
        Scaling::InverseLipschitz => {
            let parts = f
                .lipschitz_blocks()
                .iter()
                .map(|l| linalg::sym_inverse(l, "Lipschitz block"))
                .collect::<Result<Vec<_>>>()?;
            linalg::block_diag(&parts)
        }
        Scaling::NewtonBlock => {
            let h = f.hessian(x).ok_or(Error::MissingHessian("newton-block scaling"))?;
            let parts: Vec<_> = (0..blocks.count())
                .map(|i| {
                    let r = blocks.range(i);
                    clamped_inverse(&h.view((r.start, r.start), (r.len(), r.len())).clone_owned())
                })
                .collect();
            linalg::block_diag(&parts)
        }
        Scaling::Newton => {
            let h = f.hessian(x).ok_or(Error::MissingHessian("newton scaling"))?;
            clamped_inverse(&linalg::symmetrize(&h))
        }
        Scaling::NewtonTaylor(q) => {
            let h = f.hessian(x).ok_or(Error::MissingHessian("newton-taylor scaling"))?;
            return rates::newton_taylor_scaling(&h, blocks, *q);
        }
    };
    let g = linalg::symmetrize(&g);
    if blocks.is_block_diagonal(&g, 0.0) {
        ScalingMatrix::per_block(g, blocks)
    } else {
        ScalingMatrix::new(g)
    }
}

/// Scaling for block `i` alone at `x`.
pub fn block_scaling_at(f: &ObjectiveModel, cfg: &SolverConfig, x: &DVector<f64>, i: usize) -> Result<ScalingMatrix> {
    let r = f.blocks().range(i);
    let g = match &cfg.scaling {
        Scaling::Identity => return Ok(ScalingMatrix::identity(r.len())),
        Scaling::FixedDiagonal(v) => DMatrix::from_diagonal(&DVector::from_row_slice(&v[r.clone()])),
        Scaling::InverseLipschitz => linalg::sym_inverse(&f.lipschitz_blocks()[i], "Lipschitz block")?,
        Scaling::NewtonBlock | Scaling::Newton | Scaling::NewtonTaylor(_) => {
            let h = f.hessian(x).ok_or(Error::MissingHessian("newton-block scaling"))?;
            let hb = h.view((r.start, r.start), (r.len(), r.len())).clone_owned();
            match cfg.scaling {
                // With a single block these coincide with the full rules.
                Scaling::NewtonTaylor(q) if f.blocks().count() == 1 => {
                    return rates::newton_taylor_scaling(&h, f.blocks(), q)
                }
                _ => clamped_inverse(&linalg::symmetrize(&hb)),
            }
        }
    };
    ScalingMatrix::new(linalg::symmetrize(&g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoOutcome {
    pub alpha: f64,
    pub point: DVector<f64>,
    pub backtracks: usize,
}

/// Largest `α = β^m` with `f(λ) − f(λ̄(α)) ≥ σ‖λ̄(α) − λ‖²_{[αΓ]⁻¹}`.
pub fn armijo_step(
    f: &ObjectiveModel,
    p: &Polyhedron,
    lambda: &DVector<f64>,
    gamma: &ScalingMatrix,
    beta: f64,
    sigma: f64,
) -> Result<ArmijoOutcome> {
    let grad = f.gradient(lambda);
    let chol = linalg::SpdSolver::new(gamma.matrix(), "scaling matrix")?;
    let step2 = grad.dot(&(gamma.matrix() * &grad));
    armijo_search(beta, sigma, step2, |alpha| {
        let y = projection::gp_candidate_from_gradient(p, lambda, &grad, gamma, alpha)?;
        let d = &y - lambda;
        let metric = d.dot(&chol.solve(&d));
        Ok((-f.value_difference(lambda, &y), metric, y))
    })
}

/// `step2` is `∇fᵀΓ∇f`, the squared metric length of the unit step.
fn armijo_search(
    beta: f64,
    sigma: f64,
    step2: f64,
    mut eval: impl FnMut(f64) -> Result<(f64, f64, DVector<f64>)>,
) -> Result<ArmijoOutcome> {
    let mut alpha = 1.0;
    for m in 0..=BACKTRACK_CAP {
        let (decrease, metric, y) = eval(alpha)?;
        if decrease.is_finite() && decrease >= sigma * metric / alpha {
            return Ok(ArmijoOutcome {
                alpha,
                point: y,
                backtracks: m,
            });
        }
        if m == BACKTRACK_CAP && metric > 4.0 * alpha * alpha * step2 {
            // For a feasible λ the projection is nonexpansive, so a move this
            // much longer than the step means λ sits outside the set by
            // roundoff and every candidate snaps back onto it. Take the snap.
            return Ok(ArmijoOutcome {
                alpha,
                point: y,
                backtracks: m,
            });
        }
        alpha *= beta;
    }
    Err(Error::BacktrackCap {
        cap: BACKTRACK_CAP,
        alpha: alpha / beta,
    })
}

/// One block update on the restriction of `f` to block `i`.
fn block_update(
    f: &ObjectiveModel,
    blocks_p: &[Polyhedron],
    cfg: &SolverConfig,
    x: &DVector<f64>,
    i: usize,
) -> Result<(DVector<f64>, f64)> {
    let r = f.blocks().range(i);
    let g = f.coordinate_restriction(i, x);
    let gamma = block_scaling_at(f, cfg, x, i)?;
    let xi = x.rows(r.start, r.len()).clone_owned();
    let (alpha, yi) = match cfg.step_rule {
        StepRule::Unit => (1.0, projection::gp_candidate(&g, &blocks_p[i], &xi, &gamma, 1.0)?),
        StepRule::Armijo => {
            let out = armijo_step(&g, &blocks_p[i], &xi, &gamma, cfg.beta, cfg.sigma)?;
            (out.alpha, out.point)
        }
    };
    let mut y = x.clone();
    y.rows_mut(r.start, r.len()).copy_from(&yi);
    Ok((y, alpha))
}

pub fn centralized_step(
    f: &ObjectiveModel,
    p: &Polyhedron,
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let gamma = scaling_at(f, cfg, lambda)?;
    match cfg.step_rule {
        StepRule::Unit => Ok((projection::gp_candidate(f, p, lambda, &gamma, 1.0)?, 1.0)),
        StepRule::Armijo => {
            let out = armijo_step(f, p, lambda, &gamma, cfg.beta, cfg.sigma)?;
            Ok((out.point, out.alpha))
        }
    }
}

/// Applies the blocks in the configured order, each at the partially
/// updated point. Returns the per-block step sizes in application order.
pub fn cyclic_sweep(
    f: &ObjectiveModel,
    p: &Polyhedron,
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let blocks_p = block_polyhedra(p);
    cyclic_sweep_with(f, &blocks_p, cfg, lambda)
}

fn cyclic_sweep_with(
    f: &ObjectiveModel,
    blocks_p: &[Polyhedron],
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = f.blocks().count();
    let mut x = lambda.clone();
    let mut alphas = Vec::with_capacity(n);
    for i in cfg.block_order(n) {
        let (y, a) = block_update(f, blocks_p, cfg, &x, i)?;
        x = y;
        alphas.push(a);
    }
    Ok((x, alphas))
}

/// All blocks from the same `λ` with a common step size. Armijo is applied
/// to the whole space with the block-diagonal scaling.
pub fn jacobi_step(
    f: &ObjectiveModel,
    p: &Polyhedron,
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let blocks_p = block_polyhedra(p);
    jacobi_step_with(f, &blocks_p, cfg, lambda)
}

fn jacobi_step_with(
    f: &ObjectiveModel,
    blocks_p: &[Polyhedron],
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let blocks = f.blocks();
    let n = blocks.count();
    let grad = f.gradient(lambda);
    let gammas = (0..n)
        .map(|i| block_scaling_at(f, cfg, lambda, i))
        .collect::<Result<Vec<_>>>()?;
    let candidate = |alpha: f64| -> Result<DVector<f64>> {
        let mut y = lambda.clone();
        for i in 0..n {
            let r = blocks.range(i);
            let yi = projection::gp_candidate_from_gradient(
                &blocks_p[i],
                &lambda.rows(r.start, r.len()).clone_owned(),
                &grad.rows(r.start, r.len()).clone_owned(),
                &gammas[i],
                alpha,
            )?;
            y.rows_mut(r.start, r.len()).copy_from(&yi);
        }
        Ok(y)
    };
    match cfg.step_rule {
        StepRule::Unit => Ok((candidate(1.0)?, 1.0)),
        StepRule::Armijo => {
            let chols = gammas
                .iter()
                .map(|g| linalg::SpdSolver::new(g.matrix(), "block scaling"))
                .collect::<Result<Vec<_>>>()?;
            let step2 = (0..n)
                .map(|i| {
                    let gi = grad.rows(blocks.range(i).start, blocks.range(i).len()).clone_owned();
                    gi.dot(&(gammas[i].matrix() * &gi))
                })
                .sum();
            let out = armijo_search(cfg.beta, cfg.sigma, step2, |alpha| {
                let y = candidate(alpha)?;
                let d = &y - lambda;
                let mut metric = 0.0;
                for i in 0..n {
                    let r = blocks.range(i);
                    let di = d.rows(r.start, r.len()).clone_owned();
                    metric += di.dot(&chols[i].solve(&di));
                }
                Ok((-f.value_difference(lambda, &y), metric, y))
            })?;
            Ok((out.point, out.alpha))
        }
    }
}

/// Draws `i ~ π` by inversion of one uniform variate.
pub fn draw_block(pi: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pi.len() - 1
}

pub fn random_step(
    f: &ObjectiveModel,
    p: &Polyhedron,
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<(usize, DVector<f64>, f64)> {
    let blocks_p = block_polyhedra(p);
    let pi = cfg.probabilities(f.blocks().count());
    let i = draw_block(&pi, rng);
    let (y, a) = block_update(f, &blocks_p, cfg, lambda, i)?;
    Ok((i, y, a))
}

/// Update of a single chosen block, exposed for exact conditional
/// expectations over the random map.
pub fn random_step_given(
    f: &ObjectiveModel,
    p: &Polyhedron,
    cfg: &SolverConfig,
    lambda: &DVector<f64>,
    i: usize,
) -> Result<(DVector<f64>, f64)> {
    block_update(f, &block_polyhedra(p), cfg, lambda, i)
}

pub fn block_polyhedra(p: &Polyhedron) -> Vec<Polyhedron> {
    (0..p.blocks().count()).map(|i| p.block(i).0).collect()
}

/// Outcome of one application of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub point: DVector<f64>,
    pub alphas: Vec<f64>,
    pub block: Option<usize>,
}

/// One application of the configured map, with block polyhedra prebuilt.
pub struct Stepper<'a> {
    f: &'a ObjectiveModel,
    p: &'a Polyhedron,
    cfg: &'a SolverConfig,
    blocks_p: Vec<Polyhedron>,
    pi: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(f: &'a ObjectiveModel, p: &'a Polyhedron, cfg: &'a SolverConfig) -> Result<Self> {
        if f.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: f.dim(),
            });
        }
        if f.blocks() != p.blocks() {
            return Err(Error::InvalidProblem(
                "objective and polyhedron use different block structures".into(),
            ));
        }
        let n = f.blocks().count();
        cfg.validate(n, f.dim())?;
        Ok(Self {
            f,
            p,
            cfg,
            blocks_p: block_polyhedra(p),
            pi: cfg.probabilities(n),
        })
    }

    /// Same map with a different objective, keeping the prebuilt blocks.
    pub fn with_objective<'b>(&'b self, f: &'b ObjectiveModel) -> Stepper<'b> {
        Stepper {
            f,
            p: self.p,
            cfg: self.cfg,
            blocks_p: self.blocks_p.clone(),
            pi: self.pi.clone(),
        }
    }

    pub fn step(&self, x: &DVector<f64>, rng: &mut impl Rng) -> Result<StepOutcome> {
        Ok(match self.cfg.variant {
            Variant::Centralized => {
                let (y, a) = centralized_step(self.f, self.p, self.cfg, x)?;
                StepOutcome {
                    point: y,
                    alphas: vec![a],
                    block: None,
                }
            }
            Variant::Cyclic => {
                let (y, a) = cyclic_sweep_with(self.f, &self.blocks_p, self.cfg, x)?;
                StepOutcome {
                    point: y,
                    alphas: a,
                    block: None,
                }
            }
            Variant::Jacobi => {
                let (y, a) = jacobi_step_with(self.f, &self.blocks_p, self.cfg, x)?;
                StepOutcome {
                    point: y,
                    alphas: vec![a],
                    block: None,
                }
            }
            Variant::Random => {
                let i = draw_block(&self.pi, rng);
                let (y, a) = block_update(self.f, &self.blocks_p, self.cfg, x, i)?;
                StepOutcome {
                    point: y,
                    alphas: vec![a],
                    block: Some(i),
                }
            }
        })
    }

    pub fn step_block(&self, x: &DVector<f64>, i: usize) -> Result<(DVector<f64>, f64)> {
        block_update(self.f, &self.blocks_p, self.cfg, x, i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub lambda: DVector<f64>,
    pub f: f64,
    pub residual: f64,
    /// Empty for the start point; one entry per block for cyclic sweeps.
    pub alphas: Vec<f64>,
    pub block: Option<usize>,
    pub active_set: ActiveSet,
    pub t_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    /// Set when the supplied start was infeasible and had to be projected.
    pub start_projected: bool,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces always hold the start point")
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    pub fn distances(&self, target: &DVector<f64>) -> Vec<f64> {
        self.records.iter().map(|r| (&r.lambda - target).norm()).collect()
    }

    /// Equality ignoring wall-clock times.
    pub fn same_iterates(&self, other: &IterateTrace) -> bool {
        self.converged == other.converged
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.k == b.k
                    && a.lambda == b.lambda
                    && a.f.to_bits() == b.f.to_bits()
                    && a.residual.to_bits() == b.residual.to_bits()
                    && a.alphas == b.alphas
                    && a.block == b.block
                    && a.active_set == b.active_set
            })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.records.first().map_or(0, |r| r.lambda.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["k", "f", "residual", "alpha", "block", "active_set", "t_wall_ms"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..m).map(|i| format!("lambda_{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(";");
            let mut row = vec![
                r.k.to_string(),
                r.f.to_string(),
                r.residual.to_string(),
                join(&mut r.alphas.iter().map(|a| a.to_string())),
                r.block.map(|b| b.to_string()).unwrap_or_default(),
                join(&mut r.active_set.indices().iter().map(|j| j.to_string())),
                format!("{:.3}", r.t_wall_ms),
            ];
            row.extend(r.lambda.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Runs the configured map from `start` until the optimality residual drops
/// to `stop_tol` or `max_iters` steps have been taken. The block-choice
/// stream is stream 0 of a ChaCha8 generator seeded with `cfg.seed`.
pub fn run(f: &ObjectiveModel, p: &Polyhedron, start: &DVector<f64>, cfg: &SolverConfig) -> Result<IterateTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    run_with_rng(f, p, start, cfg, &mut rng)
}

pub fn run_with_rng(
    f: &ObjectiveModel,
    p: &Polyhedron,
    start: &DVector<f64>,
    cfg: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<IterateTrace> {
    let stepper = Stepper::new(f, p, cfg)?;
    let clock = Instant::now();
    let mut x = start.clone();
    let mut start_projected = false;
    if !p.contains(&x, ACTIVE_TOL)? {
        x = projection::scaled_project(p, &x, &ScalingMatrix::identity(p.dim()))?;
        start_projected = true;
    }

    let record = |k: usize, x: &DVector<f64>, alphas: Vec<f64>, block: Option<usize>| -> Result<TraceRecord> {
        let fx = f.value(x);
        if !fx.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { k, what: "objective value" });
        }
        let residual = projection::optimality_residual(f, p, x)?;
        let active_set = p.active_set(x, ACTIVE_TOL).unwrap_or_else(|_| {
            // Infeasibility beyond the activity tolerance can only come from
            // roundoff in the projection; report the nearly tight rows.
            let s = p.slacks(x).expect("dimension checked");
            ActiveSet::from_sorted((0..s.len()).filter(|&j| s[j] >= -ACTIVE_TOL).collect())
        });
        Ok(TraceRecord {
            k,
            lambda: x.clone(),
            f: fx,
            residual,
            alphas,
            block,
            active_set,
            t_wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        })
    };

    let mut records = vec![record(0, &x, Vec::new(), None)?];
    let mut converged = records[0].residual <= cfg.stop_tol;
    let mut k = 0;
    while !converged && k < cfg.max_iters {
        let out = stepper.step(&x, rng)?;
        k += 1;
        x = out.point;
        let rec = record(k, &x, out.alphas, out.block)?;
        converged = rec.residual <= cfg.stop_tol;
        records.push(rec);
    }
    Ok(IterateTrace {
        records,
        converged,
        start_projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ObjectiveModel;
    use crate::polytope::BlockStructure;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn quad(q: &[f64], c: &[f64], blocks: BlockStructure) -> ObjectiveModel {
        let m = c.len();
        ObjectiveModel::quadratic(DMatrix::from_row_slice(m, m, q), v(c), blocks).unwrap()
    }

    fn line_sq() -> (ObjectiveModel, Polyhedron) {
        let b = BlockStructure::single(1);
        (quad(&[1.0], &[0.0], b.clone()), Polyhedron::unconstrained(b))
    }

    #[test]
    fn armijo_examples() {
        let (f, p) = line_sq();
        let out = armijo_step(&f, &p, &v(&[1.0]), &ScalingMatrix::identity(1), 0.5, 0.25).unwrap();
        assert_eq!((out.alpha, out.point[0], out.backtracks), (1.0, 0.0, 0));

        let g3 = ScalingMatrix::diagonal(&[3.0]).unwrap();
        let out = armijo_step(&f, &p, &v(&[1.0]), &g3, 0.5, 0.25).unwrap();
        assert_eq!((out.alpha, out.point[0], out.backtracks), (0.5, -0.5, 1));

        let out = armijo_step(&f, &p, &v(&[0.0]), &g3, 0.5, 0.25).unwrap();
        assert_eq!((out.alpha, out.point[0], out.backtracks), (1.0, 0.0, 0));
    }

    #[test]
    fn armijo_cap_reports_error() {
        // A model whose value increases along every candidate.
        struct Liar;
        impl crate::objectives::Objective for Liar {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &DVector<f64>) -> f64 {
                -x[0]
            }
            fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
                v(&[1.0])
            }
        }
        let f = ObjectiveModel::new(
            std::sync::Arc::new(Liar),
            BlockStructure::single(1),
            vec![DMatrix::identity(1, 1)],
            None,
        )
        .unwrap();
        let p = Polyhedron::unconstrained(BlockStructure::single(1));
        let err = armijo_step(&f, &p, &v(&[0.0]), &ScalingMatrix::identity(1), 0.5, 0.25).unwrap_err();
        assert!(matches!(err, Error::BacktrackCap { cap: 60, .. }));
    }

    #[test]
    fn centralized_examples() {
        let b = BlockStructure::single(2);
        let f = quad(&[2.0, 1.0, 1.0, 2.0], &[1.0, -1.0], b.clone());
        let p = Polyhedron::unconstrained(b.clone());
        let cfg = SolverConfig::new(Variant::Centralized, Scaling::NewtonBlock);
        let (y, a) = centralized_step(&f, &p, &cfg, &v(&[5.0, 5.0])).unwrap();
        // λ* = −Q⁻¹c = (−1, 1)
        assert!((y - v(&[-1.0, 1.0])).amax() < 1e-14);
        assert_eq!(a, 1.0);

        let g = quad(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], b.clone());
        let mut cfg = SolverConfig::new(Variant::Centralized, Scaling::Identity);
        cfg.step_rule = StepRule::Unit;
        assert_eq!(centralized_step(&g, &p, &cfg, &v(&[1.0, 1.0])).unwrap().0, v(&[0.0, 0.0]));

        let h = quad(&[1.0, 0.0, 0.0, 1.0], &[1.0, -1.0], b.clone());
        let nonneg = Polyhedron::from_box(&[0.0, 0.0], &[f64::INFINITY; 2], b).unwrap();
        assert_eq!(centralized_step(&h, &nonneg, &cfg, &v(&[1.0, 1.0])).unwrap().0, v(&[0.0, 1.0]));
    }

    fn coupled() -> (ObjectiveModel, Polyhedron) {
        let b = BlockStructure::scalar(2);
        (quad(&[2.0, 1.0, 1.0, 2.0], &[0.0, 0.0], b.clone()), Polyhedron::unconstrained(b))
    }

    fn separable() -> (ObjectiveModel, Polyhedron) {
        let b = BlockStructure::scalar(2);
        (quad(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0], b.clone()), Polyhedron::unconstrained(b))
    }

    fn newton_unit(variant: Variant) -> SolverConfig {
        let mut c = SolverConfig::new(variant, Scaling::NewtonBlock);
        c.step_rule = StepRule::Unit;
        c
    }

    #[test]
    fn cyclic_examples() {
        let (f, p) = coupled();
        let cfg = newton_unit(Variant::Cyclic);
        let (y, a) = cyclic_sweep(&f, &p, &cfg, &v(&[1.0, 1.0])).unwrap();
        assert_eq!(y, v(&[-0.5, 0.25]));
        assert_eq!(a, vec![1.0, 1.0]);

        let (g, p2) = separable();
        assert_eq!(cyclic_sweep(&g, &p2, &cfg, &v(&[1.0, 1.0])).unwrap().0, v(&[0.0, 0.0]));
        assert_eq!(cyclic_sweep(&f, &p, &cfg, &v(&[0.0, 0.0])).unwrap().0, v(&[0.0, 0.0]));

        // Armijo accepts the unit step here as well.
        let armijo = SolverConfig::new(Variant::Cyclic, Scaling::NewtonBlock);
        assert_eq!(cyclic_sweep(&f, &p, &armijo, &v(&[1.0, 1.0])).unwrap().0, v(&[-0.5, 0.25]));
    }

    #[test]
    fn reversed_order() {
        let (f, p) = coupled();
        let mut cfg = newton_unit(Variant::Cyclic);
        cfg.order = Some(vec![1, 0]);
        // λ_2 ← −λ_1/2 = −0.5, then λ_1 ← −λ_2/2 = 0.25
        assert_eq!(cyclic_sweep(&f, &p, &cfg, &v(&[1.0, 1.0])).unwrap().0, v(&[0.25, -0.5]));
        cfg.order = Some(vec![1, 1]);
        assert!(cfg.validate(2, 2).is_err());
    }

    #[test]
    fn jacobi_examples() {
        let (f, p) = coupled();
        let cfg = newton_unit(Variant::Jacobi);
        assert_eq!(jacobi_step(&f, &p, &cfg, &v(&[1.0, 1.0])).unwrap().0, v(&[-0.5, -0.5]));
        let (g, p2) = separable();
        let x = v(&[0.7, -0.2]);
        assert_eq!(
            jacobi_step(&g, &p2, &cfg, &x).unwrap().0,
            cyclic_sweep(&g, &p2, &newton_unit(Variant::Cyclic), &x).unwrap().0
        );
        assert_eq!(jacobi_step(&f, &p, &cfg, &v(&[0.0, 0.0])).unwrap().0, v(&[0.0, 0.0]));
    }

    #[test]
    fn random_examples() {
        let mut cfg = newton_unit(Variant::Random);
        cfg.pi = Some(vec![1.0, 0.0]);
        assert!(cfg.validate(2, 2).is_err());
        cfg.pi = None;

        let (f, p) = separable();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut first = 0;
        for _ in 0..draws {
            let (i, y, _) = random_step(&f, &p, &cfg, &v(&[1.0, 1.0]), &mut rng).unwrap();
            if i == 0 {
                assert_eq!(y, v(&[0.0, 1.0]));
                first += 1;
            } else {
                assert_eq!(y, v(&[1.0, 0.0]));
            }
        }
        let frac = first as f64 / draws as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");

        let (g, p2) = coupled();
        for _ in 0..10 {
            let (_, y, _) = random_step(&g, &p2, &cfg, &v(&[0.0, 0.0]), &mut rng).unwrap();
            assert_eq!(y, v(&[0.0, 0.0]));
        }
    }

    #[test]
    fn run_examples() {
        let b = BlockStructure::single(2);
        let f = quad(&[2.0, 1.0, 1.0, 2.0], &[1.0, 0.0], b.clone());
        let p = Polyhedron::unconstrained(b);
        let cfg = SolverConfig::new(Variant::Centralized, Scaling::Newton);
        let t = run(&f, &p, &v(&[3.0, -2.0]), &cfg).unwrap();
        assert!(t.converged);
        assert_eq!(t.len(), 2);

        let (g, p2) = coupled();
        let mut cfg = SolverConfig::new(Variant::Cyclic, Scaling::NewtonBlock);
        let t = run(&g, &p2, &v(&[1.0, 1.0]), &cfg).unwrap();
        assert!(t.converged);
        let r: Vec<f64> = t.records.iter().map(|r| r.residual).collect();
        let n = r.len();
        let ratio = r[n - 2] / r[n - 3];
        assert!((ratio - 0.25).abs() < 1e-6, "{ratio}");

        cfg.max_iters = 0;
        let t = run(&g, &p2, &v(&[1.0, 1.0]), &cfg).unwrap();
        assert_eq!(t.len(), 1);
        assert!(!t.converged);
    }

    #[test]
    fn trace_csv_layout() {
        let (g, p) = coupled();
        let mut cfg = SolverConfig::new(Variant::Cyclic, Scaling::NewtonBlock);
        cfg.max_iters = 2;
        let t = run(&g, &p, &v(&[1.0, 1.0]), &cfg).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,f,residual,alpha,block,active_set,t_wall_ms,lambda_0,lambda_1");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,"));
        assert!(lines[2].contains(",1;1,"));
    }

    #[test]
    fn scaling_parsing() {
        for s in ["identity", "newton-block", "newton", "newton-taylor:2", "diag:1,0.5", "inverse-lipschitz"] {
            let parsed: Scaling = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert_eq!("newton-taylor(3)".parse::<Scaling>().unwrap(), Scaling::NewtonTaylor(3));
        assert!("bogus".parse::<Scaling>().is_err());
    }
}
