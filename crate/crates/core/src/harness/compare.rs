//! Predicted-versus-empirical rate comparison on a single problem.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::fit;
use super::problem::Problem;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveModel;
use crate::polytope::{ActiveSet, Polyhedron, ReducedBasis, ACTIVE_TOL};
use crate::projection::{self, ScalingMatrix};
use crate::rates::{self, EfficiencyFlags, RateReport, ReducedModel};
use crate::saa;
use crate::solvers::{self, IterateTrace, Scaling, SolverConfig, Variant};

/// Tolerance for the stationarity residual and the smallest multiplier when
/// checking strict complementarity at the reference solution.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionSource {
    Analytic,
    Solve,
}

/// Everything about `λ*` that the rate formulas need.
#[derive(Debug, Clone)]
pub struct SolutionAnalysis {
    pub lambda: DVector<f64>,
    pub f_star: f64,
    pub source: SolutionSource,
    pub residual: f64,
    pub active_set: ActiveSet,
    pub strict_complementarity: bool,
    pub min_multiplier: f64,
    pub basis: ReducedBasis,
    pub hessian: DMatrix<f64>,
}

/// `λ*` from the problem file when present, otherwise a centralized Newton
/// solve to residual 1e-12.
pub fn reference_solution(problem: &Problem) -> Result<(DVector<f64>, SolutionSource)> {
    if let Some(s) = &problem.solution {
        return Ok((s.clone(), SolutionSource::Analytic));
    }
    let x = saa::diagnostic_minimizer(&problem.objective, &problem.polyhedron, &problem.start)?;
    Ok((x, SolutionSource::Solve))
}

pub fn analyze_solution(
    f: &ObjectiveModel,
    p: &Polyhedron,
    lambda: DVector<f64>,
    source: SolutionSource,
) -> Result<SolutionAnalysis> {
    let hessian = f.hessian(&lambda).ok_or(Error::MissingHessian("rate prediction"))?;
    let active_set = p.active_set(&lambda, ACTIVE_TOL)?;
    let g = f.gradient(&lambda);
    let (strict_complementarity, min_multiplier) = p.strict_complementarity(&active_set, &g, KKT_TOL)?;
    let basis = p.reduced_basis(&active_set);
    Ok(SolutionAnalysis {
        f_star: f.value(&lambda),
        residual: projection::optimality_residual(f, p, &lambda)?,
        lambda,
        source,
        active_set,
        strict_complementarity,
        min_multiplier,
        basis,
        hessian,
    })
}

pub fn analyze_problem(problem: &Problem) -> Result<SolutionAnalysis> {
    let (x, src) = reference_solution(problem)?;
    analyze_solution(&problem.objective, &problem.polyhedron, x, src)
}

/// Predicted rate of the map configured by `cfg` at `λ*`, with the scaling
/// evaluated at `λ*`. Random variants get the `N^F` rate of the expected
/// objective gap; the others get the rate of `‖λ^k − λ*‖`.
pub fn predicted_rate(f: &ObjectiveModel, sol: &SolutionAnalysis, cfg: &SolverConfig) -> Result<(RateReport, ReducedModel, ScalingMatrix)> {
    let n = f.blocks().count();
    cfg.validate(n, f.dim())?;
    let gamma = solvers::scaling_at(f, cfg, &sol.lambda)?;
    let rm = rates::reduce(&sol.hessian, &gamma, &sol.basis)?;
    let mut report = match cfg.variant {
        Variant::Cyclic => {
            if cfg.block_order(n) != (0..n).collect::<Vec<_>>() {
                return Err(Error::InvalidConfig("rate prediction assumes the ascending block order".into()));
            }
            rates::cyclic_rate(&rm)?
        }
        Variant::Jacobi => rates::jacobi_rate(&rm)?,
        Variant::Random => rates::random_rate_f(&rm, &cfg.probabilities(n), true)?,
        Variant::Centralized => match cfg.scaling {
            Scaling::NewtonTaylor(q) => rates::newton_taylor_rate(&sol.hessian, &gamma, &sol.basis, f.blocks(), q)?,
            _ => rates::centralized_rate(&rm)?,
        },
    };
    report.hypotheses.strict_complementarity = Some(sol.strict_complementarity);
    if let Ok(flags) = efficiency(f, sol, &gamma, cfg.sigma, &rm) {
        report.hypotheses.efficiency = Some(flags.efficiency);
    }
    Ok((report, rm, gamma))
}

fn efficiency(
    f: &ObjectiveModel,
    sol: &SolutionAnalysis,
    gamma: &ScalingMatrix,
    sigma: f64,
    rm: &ReducedModel,
) -> Result<EfficiencyFlags> {
    let d = f.blocks().diagonal_part(&sol.hessian);
    rates::efficiency_conditions(gamma, &d, sigma, rm)
}

#[derive(Debug, Clone, Serialize)]
#[serde(default)]
pub struct CompareOptions {
    pub scaling: Scaling,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Independent runs for the random variant.
    pub trials: usize,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub window: (f64, f64),
    pub random_window: (f64, f64),
    /// Upper bound on the random-variant horizon.
    pub random_max_iters: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            scaling: Scaling::NewtonBlock,
            beta: 0.5,
            sigma: 0.25,
            seed: 0,
            trials: 100,
            max_iters: 100_000,
            stop_tol: 1e-12,
            window: (0.6, 0.95),
            random_window: (0.2, 0.8),
            random_max_iters: 5000,
        }
    }
}

impl CompareOptions {
    pub fn config(&self, variant: Variant) -> SolverConfig {
        SolverConfig {
            beta: self.beta,
            sigma: self.sigma,
            variant,
            scaling: self.scaling.clone(),
            seed: self.seed,
            max_iters: self.max_iters,
            stop_tol: self.stop_tol,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub scaling: String,
    pub predicted: RateReport,
    /// Rate of `‖λ^k − λ*‖`; not estimated for random variants.
    pub empirical_rate: Option<f64>,
    pub relative_gap: Option<f64>,
    /// `ρ²` for deterministic maps, `N^F` for random ones.
    pub predicted_f_rate: f64,
    pub empirical_f_rate: Option<f64>,
    pub f_relative_gap: Option<f64>,
    pub efficiency: Option<EfficiencyFlags>,
    pub runs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// First index from which every recorded active set equals `𝒜(λ*)`.
    pub identification_index: Option<usize>,
    /// Identification happened within the first half of the trace.
    pub identified: bool,
    /// Every step size recorded in the second half of the trace equals 1.
    pub unit_steps_in_tail: bool,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub traces: Vec<IterateTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub m: usize,
    pub blocks: Vec<usize>,
    pub solution: Vec<f64>,
    pub solution_source: SolutionSource,
    pub solution_residual: f64,
    pub f_star: f64,
    pub active_set: ActiveSet,
    pub strict_complementarity: bool,
    pub min_multiplier: Option<f64>,
    pub reduced_dim: usize,
    pub variants: Vec<VariantReport>,
}

pub fn identification_index(trace: &IterateTrace, active: &ActiveSet) -> Option<usize> {
    let last_bad = trace.records.iter().rposition(|r| &r.active_set != active);
    match last_bad {
        None => Some(0),
        Some(k) if k + 1 < trace.len() => Some(k + 1),
        Some(_) => None,
    }
}

pub fn unit_steps_in_tail(trace: &IterateTrace) -> bool {
    trace.records[trace.len() / 2..]
        .iter()
        .flat_map(|r| r.alphas.iter())
        .all(|&a| a == 1.0)
}

/// Horizon for random runs: long enough for the predicted rate to shrink the
/// gap by about `e^{-23}`.
pub fn random_horizon(rho: f64, cap: usize) -> usize {
    if rho <= 0.0 {
        return 20.min(cap.max(1));
    }
    if rho >= 1.0 {
        return cap;
    }
    ((-23.0 / rho.ln()).ceil() as usize).clamp(20, cap.max(20))
}

/// Random-variant traces: trial `t` draws its blocks from stream `t` of the
/// generator seeded with `cfg.seed`, so trial 0 reproduces `solvers::run`.
pub fn random_traces(f: &ObjectiveModel, p: &Polyhedron, start: &DVector<f64>, cfg: &SolverConfig, trials: usize) -> Result<Vec<IterateTrace>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t);
            solvers::run_with_rng(f, p, start, cfg, &mut rng)
        })
        .collect()
}

fn rel_gap(empirical: f64, predicted: f64) -> f64 {
    if predicted == 0.0 {
        empirical.abs()
    } else {
        (empirical - predicted).abs() / predicted.abs()
    }
}

pub fn compare_variant(problem: &Problem, sol: &SolutionAnalysis, cfg: &SolverConfig, opts: &CompareOptions) -> Result<VariantReport> {
    let f = &problem.objective;
    let p = &problem.polyhedron;
    let (predicted, rm, gamma) = predicted_rate(f, sol, cfg)?;
    let rho = predicted.spectral_radius;
    let mut notes = Vec::new();
    let random = cfg.variant == Variant::Random;

    let traces = if random {
        let mut rc = cfg.clone();
        rc.max_iters = random_horizon(rho, opts.random_max_iters);
        rc.stop_tol = 0.0;
        random_traces(f, p, &problem.start, &rc, opts.trials)?
    } else {
        vec![solvers::run(f, p, &problem.start, cfg)?]
    };
    let first = &traces[0];

    let (empirical_rate, predicted_f_rate, window) = if random {
        (None, rho, opts.random_window)
    } else {
        let r = match fit::empirical_rate(first, &sol.lambda, opts.window) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("distance rate: {e}"));
                None
            }
        };
        (r, rho * rho, opts.window)
    };
    let empirical_f_rate = match fit::empirical_gap_rate(f, &traces, &sol.lambda, window, random) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("objective-gap rate: {e}"));
            None
        }
    };
    let identification_index = identification_index(first, &sol.active_set);
    let identified = identification_index.is_some_and(|k| k <= first.len() / 2);
    if !identified {
        notes.push("active set not identified within the first half of the trace".into());
    }
    Ok(VariantReport {
        variant: cfg.variant,
        scaling: cfg.scaling.to_string(),
        relative_gap: empirical_rate.map(|r| rel_gap(r, rho)),
        f_relative_gap: empirical_f_rate.map(|r| rel_gap(r, predicted_f_rate)),
        efficiency: efficiency(f, sol, &gamma, cfg.sigma, &rm).ok(),
        predicted,
        empirical_rate,
        predicted_f_rate,
        empirical_f_rate,
        runs: traces.len(),
        iterations: first.len() - 1,
        converged: first.converged,
        identification_index,
        identified,
        unit_steps_in_tail: unit_steps_in_tail(first),
        notes,
        traces,
    })
}

pub fn compare(problem: &Problem, configs: &[SolverConfig], opts: &CompareOptions) -> Result<CompareReport> {
    let sol = analyze_problem(problem)?;
    let variants = configs
        .iter()
        .map(|cfg| compare_variant(problem, &sol, cfg, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport {
        m: problem.file.m,
        blocks: problem.file.blocks.clone(),
        solution: sol.lambda.iter().copied().collect(),
        solution_source: sol.source,
        solution_residual: sol.residual,
        f_star: sol.f_star,
        active_set: sol.active_set.clone(),
        strict_complementarity: sol.strict_complementarity,
        min_multiplier: sol.min_multiplier.is_finite().then_some(sol.min_multiplier),
        reduced_dim: sol.basis.reduced_dim(),
        variants,
    })
}
