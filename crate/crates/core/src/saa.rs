//! Sample average approximation: estimator objectives built from simulated
//! samples, the sequential scheme `λ^{k+1} = A(f^k, λ^k)` and delta-method
//! diagnostics for the SAA minimizers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::{Objective, ObjectiveModel};
use crate::polytope::{BlockStructure, Polyhedron, ReducedBasis};
use crate::projection;
use crate::solvers::{self, IterateTrace, Scaling, SolverConfig, StepRule, Stepper, TraceRecord, Variant};

/// `g(λ, ω)` with its sampler. Samples are vectors.
pub trait StochasticObjective: Send + Sync {
    fn blocks(&self) -> &BlockStructure;
    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64>;
    fn value(&self, x: &DVector<f64>, omega: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>, omega: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>, _omega: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// Common block Lipschitz bound for every `g(·, ω)`.
    fn lipschitz_blocks(&self) -> Vec<DMatrix<f64>>;
    fn true_objective(&self) -> Option<ObjectiveModel> {
        None
    }
    /// `Cov(∇g(λ, ω))` when known in closed form.
    fn gradient_covariance_at(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        self.value(y, omega) - self.value(x, omega)
    }
}

/// `g(λ, ω) = ½(λ − ω)ᵀQ(λ − ω) + cᵀλ` with `ω ~ N(t, diag(s²))`.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub target: DVector<f64>,
    pub noise_std: DVector<f64>,
    blocks: BlockStructure,
}

impl NoisyQuadratic {
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        target: DVector<f64>,
        noise_std: DVector<f64>,
        blocks: BlockStructure,
    ) -> Result<Self> {
        let m = blocks.total();
        for (name, len) in [("Q", q.nrows()), ("c", c.len()), ("target", target.len()), ("noise", noise_std.len())] {
            if len != m {
                return Err(Error::InvalidProblem(format!("{name} has dimension {len}, expected {m}")));
            }
        }
        if !linalg::is_positive_definite(&q) || linalg::max_asymmetry(&q) > 1e-12 {
            return Err(Error::NotPositiveDefinite("noisy quadratic Q".into()));
        }
        if noise_std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameters("noise standard deviations must be nonnegative".into()));
        }
        Ok(Self {
            q,
            c,
            target,
            noise_std,
            blocks,
        })
    }
}

impl StochasticObjective for NoisyQuadratic {
    fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(self.target.len(), |i, _| {
            let z: f64 = StandardNormal.sample(rng);
            self.target[i] + self.noise_std[i] * z
        })
    }

    fn value(&self, x: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        let d = x - omega;
        0.5 * d.dot(&(&self.q * &d)) + self.c.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>, omega: &DVector<f64>) -> DVector<f64> {
        &self.q * (x - omega) + &self.c
    }

    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        let d = y - x;
        d.dot(&(&self.q * (x + &d * 0.5 - omega) + &self.c))
    }

    fn hessian(&self, _x: &DVector<f64>, _omega: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }

    fn lipschitz_blocks(&self) -> Vec<DMatrix<f64>> {
        (0..self.blocks.count())
            .map(|i| {
                let r = self.blocks.range(i);
                self.q.view((r.start, r.start), (r.len(), r.len())).clone_owned()
            })
            .collect()
    }

    /// The expectation up to the additive constant `½tr(Q diag(s²))`.
    fn true_objective(&self) -> Option<ObjectiveModel> {
        let c = &self.c - &self.q * &self.target;
        let shifted = ShiftedQuadratic {
            q: self.q.clone(),
            c,
            constant: 0.5 * self.target.dot(&(&self.q * &self.target)),
        };
        ObjectiveModel::new(
            Arc::new(shifted),
            self.blocks.clone(),
            self.lipschitz_blocks(),
            Some(self.q.clone()),
        )
        .ok()
    }

    fn gradient_covariance_at(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let s2 = DMatrix::from_diagonal(&self.noise_std.map(|s| s * s));
        Some(&self.q * s2 * &self.q)
    }
}

struct ShiftedQuadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    constant: f64,
}

impl Objective for ShiftedQuadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.constant
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }
    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d = y - x;
        d.dot(&(&self.q * (x + &d * 0.5) + &self.c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum SampleSchedule {
    /// `q(k) = ⌈q₀γ^k⌉`.
    Geometric { q0: usize, gamma: f64 },
    /// `q(k) = ⌈q₀ + ck⌉`.
    Linear { q0: usize, c: f64 },
}

impl SampleSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Geometric { q0, gamma } if q0 >= 1 && gamma > 1.0 && gamma.is_finite() => Ok(()),
            Self::Linear { q0, c } if q0 >= 1 && c > 0.0 && c.is_finite() => Ok(()),
            other => Err(Error::InvalidParameters(format!("invalid sample schedule {other:?}"))),
        }
    }

    pub fn count(&self, k: usize) -> usize {
        match *self {
            Self::Geometric { q0, gamma } => (q0 as f64 * gamma.powi(k as i32)).ceil() as usize,
            Self::Linear { q0, c } => (q0 as f64 + c * k as f64).ceil() as usize,
        }
    }

    pub fn counts(&self, steps: usize) -> Vec<usize> {
        (0..steps).map(|k| self.count(k)).collect()
    }
}

/// Pairwise sum. Exact for `2^j` identical terms.
fn pairwise<T: Clone>(items: &[T], add: &impl Fn(&T, &T) -> T) -> T {
    if items.len() == 1 {
        return items[0].clone();
    }
    let mid = items.len() / 2;
    add(&pairwise(&items[..mid], add), &pairwise(&items[mid..], add))
}

struct SaaObjective {
    stoch: Arc<dyn StochasticObjective>,
    samples: Vec<DVector<f64>>,
}

impl Objective for SaaObjective {
    fn dim(&self) -> usize {
        self.stoch.blocks().total()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let v: Vec<f64> = self.samples.iter().map(|w| self.stoch.value(x, w)).collect();
        pairwise(&v, &|a, b| a + b) / v.len() as f64
    }

    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let v: Vec<f64> = self.samples.iter().map(|w| self.stoch.value_difference(x, y, w)).collect();
        pairwise(&v, &|a, b| a + b) / v.len() as f64
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g: Vec<DVector<f64>> = self.samples.iter().map(|w| self.stoch.gradient(x, w)).collect();
        pairwise(&g, &|a, b| a + b) / g.len() as f64
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let h = self
            .samples
            .iter()
            .map(|w| self.stoch.hessian(x, w))
            .collect::<Option<Vec<_>>>()?;
        Some(pairwise(&h, &|a, b| a + b) / h.len() as f64)
    }
}

/// `f^k(λ) = (1/q) Σ_l g(λ, ω_l)`.
pub fn saa_objective(stoch: Arc<dyn StochasticObjective>, samples: Vec<DVector<f64>>) -> Result<ObjectiveModel> {
    if samples.is_empty() {
        return Err(Error::InvalidParameters("SAA objective needs at least one sample".into()));
    }
    let blocks = stoch.blocks().clone();
    let lipschitz = stoch.lipschitz_blocks();
    ObjectiveModel::new(Arc::new(SaaObjective { stoch, samples }), blocks, lipschitz, None)
}

/// Sample covariance of `∇g(x, ω)` from `n` draws, for samplers without a
/// closed form.
pub fn estimate_gradient_covariance(
    stoch: &dyn StochasticObjective,
    x: &DVector<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let m = x.len();
    let grads: Vec<DVector<f64>> = (0..n).map(|_| stoch.gradient(x, &stoch.sample(rng))).collect();
    let mean = grads.iter().fold(DVector::zeros(m), |acc, g| acc + g) / n as f64;
    let mut cov = DMatrix::zeros(m, m);
    for g in &grads {
        let d = g - &mean;
        cov += &d * d.transpose();
    }
    cov / (n.max(2) - 1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaaTrace {
    pub trace: IterateTrace,
    /// `μ^k`, the minimizer of `f^k`, when requested.
    pub mu: Vec<DVector<f64>>,
    pub sample_counts: Vec<usize>,
}

/// Generators for one trial: stream `2t` chooses blocks, `2t + 1` draws samples.
pub fn trial_rngs(seed: u64, trial: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut blocks = ChaCha8Rng::seed_from_u64(seed);
    blocks.set_stream(2 * trial);
    let mut samples = ChaCha8Rng::seed_from_u64(seed);
    samples.set_stream(2 * trial + 1);
    (blocks, samples)
}

/// High-accuracy minimizer of `f` over `p` by centralized Newton steps.
pub fn diagnostic_minimizer(f: &ObjectiveModel, p: &Polyhedron, start: &DVector<f64>) -> Result<DVector<f64>> {
    let cfg = SolverConfig {
        variant: Variant::Centralized,
        scaling: Scaling::Newton,
        step_rule: StepRule::Armijo,
        stop_tol: 1e-12,
        max_iters: 200,
        ..SolverConfig::default()
    };
    let t = solvers::run(f, p, start, &cfg)?;
    Ok(t.last().lambda.clone())
}

/// Runs `steps` outer iterations of the sequential SAA scheme. Each step
/// draws `q(k)` fresh samples and applies the inner map once.
#[allow(clippy::too_many_arguments)]
pub fn saa_sequential_run(
    stoch: Arc<dyn StochasticObjective>,
    schedule: &SampleSchedule,
    inner: &SolverConfig,
    p: &Polyhedron,
    start: &DVector<f64>,
    steps: usize,
    record_mu: bool,
    trial: u64,
) -> Result<SaaTrace> {
    schedule.validate()?;
    let (mut block_rng, mut sample_rng) = trial_rngs(inner.seed, trial);
    let clock = std::time::Instant::now();
    let mut x = start.clone();
    let mut start_projected = false;
    if !p.contains(&x, crate::polytope::ACTIVE_TOL)? {
        x = projection::scaled_project(p, &x, &projection::ScalingMatrix::identity(p.dim()))?;
        start_projected = true;
    }

    let record = |k: usize, x: &DVector<f64>, f: &ObjectiveModel, alphas: Vec<f64>, block| -> Result<TraceRecord> {
        let fx = f.value(x);
        if !fx.is_finite() {
            return Err(Error::NonFinite { k, what: "SAA objective value" });
        }
        Ok(TraceRecord {
            k,
            lambda: x.clone(),
            f: fx,
            residual: projection::optimality_residual(f, p, x)?,
            alphas,
            block,
            active_set: p.active_set(x, crate::polytope::ACTIVE_TOL)?,
            t_wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        })
    };

    let mut records = Vec::with_capacity(steps + 1);
    let mut mu = Vec::new();
    let counts = schedule.counts(steps);
    for (k, &qk) in counts.iter().enumerate() {
        let samples: Vec<DVector<f64>> = (0..qk).map(|_| stoch.sample(&mut sample_rng)).collect();
        let fk = saa_objective(stoch.clone(), samples)?;
        if k == 0 {
            records.push(record(0, &x, &fk, Vec::new(), None)?);
        }
        if record_mu {
            mu.push(diagnostic_minimizer(&fk, p, &x)?);
        }
        let stepper = Stepper::new(&fk, p, inner)?;
        let out = stepper.step(&x, &mut block_rng)?;
        x = out.point;
        records.push(record(k + 1, &x, &fk, out.alphas, out.block)?);
    }
    let converged = records.last().is_some_and(|r| r.residual <= inner.stop_tol);
    Ok(SaaTrace {
        trace: IterateTrace {
            records,
            converged,
            start_projected,
        },
        mu,
        sample_counts: counts,
    })
}

/// Independent trials in parallel; trial `t` uses the streams of `trial_rngs`.
#[allow(clippy::too_many_arguments)]
pub fn saa_trials(
    stoch: Arc<dyn StochasticObjective>,
    schedule: &SampleSchedule,
    inner: &SolverConfig,
    p: &Polyhedron,
    start: &DVector<f64>,
    steps: usize,
    record_mu: bool,
    trials: usize,
) -> Result<Vec<SaaTrace>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| saa_sequential_run(stoch.clone(), schedule, inner, p, start, steps, record_mu, t))
        .collect()
}

/// `C = E H̃⁻¹ Eᵀ Σ_∇ E H̃⁻¹ Eᵀ` with `H̃ = EᵀHE`.
pub fn delta_method_covariance(h: &DMatrix<f64>, e: &ReducedBasis, sigma_grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = e.ambient_dim();
    if h.shape() != (m, m) || sigma_grad.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: h.nrows(),
        });
    }
    let em = e.matrix();
    if em.ncols() == 0 {
        return Ok(DMatrix::zeros(m, m));
    }
    let ht = linalg::symmetrize(&(em.transpose() * h * &em));
    let hinv = linalg::sym_inverse(&ht, "reduced Hessian")?;
    let a = &em * hinv * em.transpose();
    Ok(&a * sigma_grad * &a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaaReport {
    pub trials: usize,
    pub sample_count: usize,
    /// Second moment of `q^{1/2}(μ − λ*)`, row-major.
    pub empirical_covariance: Vec<Vec<f64>>,
    pub predicted_covariance: Vec<Vec<f64>>,
    pub frobenius_relative_error: f64,
    /// Per-coordinate RMS of `q^{1/2}(μ − λ*)`.
    pub scaled_rms: Vec<f64>,
    /// RMS of `‖λ^k − λ*‖` divided by `q^{-1/2}`, when iterates are supplied.
    pub iterate_rms_ratio: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Compares the scatter of `q^{1/2}(μ − λ*)` across trials with the
/// predicted covariance.
pub fn saa_diagnostics(
    mu: &[DVector<f64>],
    q: usize,
    lambda_star: &DVector<f64>,
    predicted: &DMatrix<f64>,
    iterates: Option<&[DVector<f64>]>,
) -> Result<SaaReport> {
    const MIN_TRIALS: usize = 100;
    if mu.len() < MIN_TRIALS {
        return Err(Error::InsufficientTrials {
            got: mu.len(),
            needed: MIN_TRIALS,
        });
    }
    let m = lambda_star.len();
    let sq = (q as f64).sqrt();
    let mut cov = DMatrix::zeros(m, m);
    for x in mu {
        let d = (x - lambda_star) * sq;
        cov += &d * d.transpose();
    }
    cov /= mu.len() as f64;
    let pn = predicted.norm();
    let diff = (&cov - predicted).norm();
    let frobenius_relative_error = if pn > 0.0 { diff / pn } else { diff };
    let scaled_rms = (0..m).map(|i| cov[(i, i)].sqrt()).collect();
    let iterate_rms_ratio = iterates.map(|xs| {
        let ms: f64 = xs.iter().map(|x| (x - lambda_star).norm_squared()).sum::<f64>() / xs.len() as f64;
        ms.sqrt() * sq
    });
    Ok(SaaReport {
        trials: mu.len(),
        sample_count: q,
        empirical_covariance: rows(&cov),
        predicted_covariance: rows(predicted),
        frobenius_relative_error,
        scaled_rms,
        iterate_rms_ratio,
    })
}

/// Least-squares `A` with `y_k ≈ A x_k`.
pub fn fit_linear_map(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidParameters("need matching, nonempty residual pairs".into()));
    }
    let m = xs[0].len();
    let x = DMatrix::from_fn(m, xs.len(), |r, c| xs[c][r]);
    let y = DMatrix::from_fn(m, ys.len(), |r, c| ys[c][r]);
    // Aᵀ solves Xᵀ Aᵀ = Yᵀ in the least-squares sense.
    let at = x
        .transpose()
        .svd(true, true)
        .solve(&y.transpose(), 1e-14)
        .map_err(|e| Error::InvalidParameters(e.to_string()))?;
    Ok(at.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_family(s: f64) -> Arc<dyn StochasticObjective> {
        Arc::new(
            NoisyQuadratic::new(
                DMatrix::identity(1, 1),
                DVector::zeros(1),
                DVector::zeros(1),
                DVector::from_element(1, s),
                BlockStructure::single(1),
            )
            .unwrap(),
        )
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn saa_objective_examples() {
        let st = scalar_family(1.0);
        let one = saa_objective(st.clone(), vec![v(&[0.3])]).unwrap();
        for x in [-1.0, 0.0, 2.0] {
            assert_eq!(one.value(&v(&[x])), st.value(&v(&[x]), &v(&[0.3])));
        }
        let two = saa_objective(st.clone(), vec![v(&[-1.0]), v(&[1.0])]).unwrap();
        for x in [-1.5, 0.0, 0.25, 3.0] {
            assert_eq!(two.value(&v(&[x])), 0.5 * x * x + 0.5);
        }
        assert_eq!(two.gradient(&v(&[0.0]))[0], 0.0);
        let dup = saa_objective(st, vec![v(&[-1.0]), v(&[1.0]), v(&[-1.0]), v(&[1.0])]).unwrap();
        for x in [-1.5, 0.0, 0.25, 3.0] {
            assert_eq!(dup.value(&v(&[x])), two.value(&v(&[x])));
        }
        assert!(saa_objective(scalar_family(1.0), vec![]).is_err());
    }

    #[test]
    fn schedule_arithmetic() {
        let s = SampleSchedule::Geometric { q0: 1, gamma: 2.0 };
        assert_eq!(s.counts(3), vec![1, 2, 4]);
        let l = SampleSchedule::Linear { q0: 3, c: 2.5 };
        assert_eq!(l.counts(3), vec![3, 6, 8]);
        assert!(SampleSchedule::Geometric { q0: 1, gamma: 1.0 }.validate().is_err());
        assert!(SampleSchedule::Linear { q0: 0, c: 1.0 }.validate().is_err());
    }

    #[test]
    fn delta_method_examples() {
        let b1 = BlockStructure::single(1);
        let c = delta_method_covariance(
            &DMatrix::from_element(1, 1, 4.0),
            &ReducedBasis::identity(&b1),
            &DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert!((c[(0, 0)] - 3.0 / 16.0).abs() < 1e-15);

        let b2 = BlockStructure::scalar(2);
        let p = Polyhedron::from_box(&[0.0, f64::NEG_INFINITY], &[f64::INFINITY; 2], b2.clone()).unwrap();
        let e = p.reduced_basis(&crate::polytope::ActiveSet::from_sorted(vec![0]));
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = delta_method_covariance(&h, &e, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(c.row(0).amax(), 0.0);
        assert_eq!(c.column(0).amax(), 0.0);
        assert!((c[(1, 1)] - 0.25).abs() < 1e-15);

        let c = delta_method_covariance(&h, &ReducedBasis::identity(&b2), &DMatrix::identity(2, 2)).unwrap();
        let hinv = h.clone().try_inverse().unwrap();
        assert!((c - &hinv * &hinv).amax() < 1e-14);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(delta_method_covariance(&singular, &ReducedBasis::identity(&b2), &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn diagnostics_need_trials() {
        let mu = vec![v(&[0.0]); 99];
        let err = saa_diagnostics(&mu, 4, &v(&[0.0]), &DMatrix::zeros(1, 1), None).unwrap_err();
        assert!(matches!(err, Error::InsufficientTrials { got: 99, needed: 100 }));
    }

    #[test]
    fn zero_noise_diagnostics() {
        let st = scalar_family(0.0);
        let p = Polyhedron::unconstrained(BlockStructure::single(1));
        let cfg = SolverConfig::new(Variant::Centralized, Scaling::NewtonBlock);
        let sched = SampleSchedule::Geometric { q0: 1, gamma: 2.0 };
        let runs = saa_trials(st, &sched, &cfg, &p, &v(&[1.0]), 5, true, 100).unwrap();
        let mu: Vec<_> = runs.iter().map(|r| r.mu[4].clone()).collect();
        let rep = saa_diagnostics(&mu, sched.count(4), &v(&[0.0]), &DMatrix::zeros(1, 1), None).unwrap();
        assert!(rep.empirical_covariance[0][0] < 1e-20);
    }

    #[test]
    fn measurement_gradient_matches_differences() {
        let st = NoisyQuadratic::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            v(&[0.1, -0.3]),
            v(&[1.0, 2.0]),
            v(&[0.5, 0.5]),
            BlockStructure::scalar(2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = st.sample(&mut rng);
            let x = st.sample(&mut rng);
            let g = st.gradient(&x, &w);
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += 1e-5;
                xm[k] -= 1e-5;
                let fd = (st.value(&xp, &w) - st.value(&xm, &w)) / 2e-5;
                assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn linear_map_fit_recovers_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.5]);
        let xs: Vec<_> = (0..6).map(|i| v(&[(i as f64).sin(), (i as f64 * 0.7).cos()])).collect();
        let ys: Vec<_> = xs.iter().map(|x| &a * x).collect();
        let fit = fit_linear_map(&xs, &ys).unwrap();
        assert!((fit - a).amax() < 1e-12);
    }
}
