//! File-driven experiments: a single solver configuration on one problem
//! with per-trial traces, and the sequential SAA study.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::{self, CompareOptions, SolutionSource, VariantReport};
use super::generate::generate_problem;
use super::problem::{matrix_from_rows, ConstraintSpec, Problem, ProblemFile};
use crate::error::{Error, Result};
use crate::linalg;
use crate::polytope::{BlockStructure, Polyhedron};
use crate::rates::RateReport;
use crate::saa::{self, NoisyQuadratic, SaaReport, SampleSchedule, StochasticObjective};
use crate::solvers::{SolverConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    File {
        path: PathBuf,
    },
    Generate {
        family: String,
        #[serde(default)]
        params: serde_json::Value,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Use the solution stored in the problem, falling back to a solve.
    #[default]
    Analytic,
    /// Always solve to high accuracy, ignoring any stored solution.
    Solve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemSource,
    pub config: SolverConfig,
    #[serde(default = "one")]
    pub trials: usize,
    /// Trace path with `{t}` replaced by the trial index; relative paths are
    /// taken from the spec's directory.
    #[serde(default)]
    pub trace_pattern: Option<String>,
    pub report: PathBuf,
    #[serde(default)]
    pub reference: ReferenceSource,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub solution: Vec<f64>,
    pub solution_source: SolutionSource,
    pub active_set: Vec<usize>,
    pub strict_complementarity: bool,
    pub result: VariantReport,
    pub traces: Vec<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if let Some(pat) = &self.trace_pattern {
            if self.trials > 1 && !pat.contains("{t}") {
                return Err(Error::InvalidConfig("trace_pattern needs '{t}' when trials > 1".into()));
            }
        }
        Ok(())
    }

    pub fn problem(&self, base: &Path) -> Result<Problem> {
        let file = match &self.problem {
            ProblemSource::File { path } => ProblemFile::load(resolve(base, path))?,
            ProblemSource::Generate { family, params, seed } => generate_problem(family, params, *seed)?,
        };
        let mut file = file;
        if self.reference == ReferenceSource::Solve {
            file.solution = None;
        }
        file.build()
    }
}

/// Runs the experiment. Relative paths in the spec resolve against `base`.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    let problem = spec.problem(base)?;
    let sol = compare::analyze_problem(&problem)?;
    let opts = CompareOptions {
        trials: spec.trials,
        ..CompareOptions::default()
    };
    let mut result = compare::compare_variant(&problem, &sol, &spec.config, &opts)?;
    let mut traces = Vec::new();
    if let Some(pat) = &spec.trace_pattern {
        let paths: Vec<PathBuf> = (0..result.traces.len())
            .map(|t| resolve(base, Path::new(&pat.replace("{t}", &t.to_string()))))
            .collect();
        for p in &paths {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
        }
        result
            .traces
            .par_iter()
            .zip(&paths)
            .try_for_each(|(t, p)| t.save_csv(p))?;
        traces = paths;
    }
    if spec.config.variant != Variant::Random {
        result.traces.truncate(1);
    }
    let report = ExperimentReport {
        solution: sol.lambda.iter().copied().collect(),
        solution_source: sol.source,
        active_set: sol.active_set.indices().to_vec(),
        strict_complementarity: sol.strict_complementarity,
        result,
        traces,
    };
    let out = resolve(base, &spec.report);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyQuadraticParams {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub target: Vec<f64>,
    pub noise_std: Vec<f64>,
    pub blocks: Vec<usize>,
    #[serde(default)]
    pub constraints: Option<ConstraintSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaaSpec {
    /// Only `noisy_quadratic` is built in.
    pub family: String,
    pub params: NoisyQuadraticParams,
    pub schedule: SampleSchedule,
    pub inner: SolverConfig,
    pub steps: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub start: Vec<f64>,
    /// Write `trial_{t}.csv` for every trial.
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct SaaExperimentReport {
    pub solution: Vec<f64>,
    pub active_set: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub diagnostics: SaaReport,
    /// Largest scaled RMS over pinned directions divided by the smallest over
    /// free directions, when both exist.
    pub pinned_to_free_rms: Option<f64>,
    /// `ρ` of the linear map fitted to `λ^{k+1} − μ^k ≈ A(λ^k − μ^k)` over the
    /// second half of every trial.
    pub fitted_map_rho: f64,
    /// Rate of the inner map at the solution of the expected objective.
    pub predicted: RateReport,
    pub fitted_map_relative_gap: f64,
}

impl SaaSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self) -> Result<(Arc<NoisyQuadratic>, Polyhedron, DVector<f64>)> {
        if self.family != "noisy_quadratic" {
            return Err(Error::InvalidParameters(format!("unknown SAA family '{}'", self.family)));
        }
        if self.trials == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("trials and steps must be at least 1".into()));
        }
        self.schedule.validate()?;
        let p = &self.params;
        let blocks = BlockStructure::new(p.blocks.clone())?;
        let m = blocks.total();
        let vec = |v: &[f64], what: &str| -> Result<DVector<f64>> {
            if v.len() != m {
                return Err(Error::InvalidProblem(format!("{what} has length {}, expected {m}", v.len())));
            }
            Ok(DVector::from_row_slice(v))
        };
        let stoch = NoisyQuadratic::new(
            matrix_from_rows(&p.q, m, "Q")?,
            vec(&p.c, "c")?,
            vec(&p.target, "target")?,
            vec(&p.noise_std, "noise_std")?,
            blocks.clone(),
        )?;
        let poly = match &p.constraints {
            Some(c) => Polyhedron::new(matrix_from_rows(&c.a, m, "A")?, DVector::from_row_slice(&c.b), blocks)?,
            None => Polyhedron::unconstrained(blocks),
        };
        Ok((Arc::new(stoch), poly, vec(&self.start, "start")?))
    }
}

pub fn run_saa_experiment(spec: &SaaSpec, out_dir: &Path) -> Result<SaaExperimentReport> {
    let (stoch, poly, start) = spec.build()?;
    let truth = stoch
        .true_objective()
        .ok_or_else(|| Error::InvalidProblem("family has no closed-form expectation".into()))?;
    let star = saa::diagnostic_minimizer(&truth, &poly, &start)?;
    let sol = compare::analyze_solution(&truth, &poly, star.clone(), SolutionSource::Solve)?;
    let sigma = stoch
        .gradient_covariance_at(&star)
        .ok_or_else(|| Error::InvalidProblem("family has no closed-form gradient covariance".into()))?;
    let predicted_cov = saa::delta_method_covariance(&sol.hessian, &sol.basis, &sigma)?;

    let mut inner = spec.inner.clone();
    inner.seed = spec.seed;
    let runs = saa::saa_trials(stoch.clone(), &spec.schedule, &inner, &poly, &start, spec.steps, true, spec.trials)?;

    if spec.write_traces {
        std::fs::create_dir_all(out_dir)?;
        runs.par_iter()
            .enumerate()
            .try_for_each(|(t, r)| r.trace.save_csv(out_dir.join(format!("trial_{t}.csv"))))?;
    }

    let last = spec.steps - 1;
    let mu: Vec<DVector<f64>> = runs.iter().map(|r| r.mu[last].clone()).collect();
    let iterates: Vec<DVector<f64>> = runs.iter().map(|r| r.trace.last().lambda.clone()).collect();
    let q = spec.schedule.count(last);
    let diagnostics = saa::saa_diagnostics(&mu, q, &star, &predicted_cov, Some(&iterates))?;

    let pinned_to_free_rms = pinned_ratio(&sol.basis.matrix(), &mu, &star, q);

    let (xs, ys): (Vec<_>, Vec<_>) = runs
        .iter()
        .flat_map(|r| {
            (spec.steps / 2..spec.steps).map(move |k| {
                let lam = &r.trace.records[k].lambda;
                let next = &r.trace.records[k + 1].lambda;
                (lam - &r.mu[k], next - &r.mu[k])
            })
        })
        .unzip();
    let fitted = saa::fit_linear_map(&xs, &ys)?;
    let fitted_map_rho = linalg::spectral_radius(&fitted)?;
    let (predicted, _, _) = compare::predicted_rate(&truth, &sol, &inner)?;
    let fitted_map_relative_gap = if predicted.spectral_radius > 0.0 {
        (fitted_map_rho - predicted.spectral_radius).abs() / predicted.spectral_radius
    } else {
        fitted_map_rho
    };

    let report = SaaExperimentReport {
        solution: star.iter().copied().collect(),
        active_set: sol.active_set.indices().to_vec(),
        sample_counts: spec.schedule.counts(spec.steps),
        diagnostics,
        pinned_to_free_rms,
        fitted_map_rho,
        predicted,
        fitted_map_relative_gap,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// RMS of `q^{1/2}(μ − λ*)` along the orthogonal complement of the reduced
/// space, relative to the RMS inside it.
fn pinned_ratio(e: &DMatrix<f64>, mu: &[DVector<f64>], star: &DVector<f64>, q: usize) -> Option<f64> {
    let m = star.len();
    if e.ncols() == 0 || e.ncols() == m {
        return None;
    }
    let sq = (q as f64).sqrt();
    let (mut free, mut pinned) = (0.0, 0.0);
    for x in mu {
        let d = (x - star) * sq;
        let inside = e * (e.transpose() * &d);
        free += inside.norm_squared();
        pinned += (&d - &inside).norm_squared();
    }
    let n = mu.len() as f64;
    let free = (free / n / e.ncols() as f64).sqrt();
    let pinned = (pinned / n / (m - e.ncols()) as f64).sqrt();
    Some(if free > 0.0 { pinned / free } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Scaling;

    #[test]
    fn spec_round_trip() {
        let spec = ExperimentSpec {
            problem: ProblemSource::Generate {
                family: "engineered_box".into(),
                params: serde_json::json!({"blocks": [1, 1, 1, 1, 1]}),
                seed: 3,
            },
            config: SolverConfig::new(Variant::Cyclic, Scaling::NewtonBlock),
            trials: 1,
            trace_pattern: Some("t{t}.csv".into()),
            report: "r.json".into(),
            reference: ReferenceSource::Solve,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&text).unwrap(), spec);
        let bad = ExperimentSpec { trials: 0, ..spec.clone() };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec {
            trials: 3,
            trace_pattern: Some("same.csv".into()),
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_saa_family() {
        let spec: SaaSpec = serde_json::from_value(serde_json::json!({
            "family": "other",
            "params": {"Q": [[1.0]], "c": [0.0], "target": [0.0], "noise_std": [1.0], "blocks": [1]},
            "schedule": {"rule": "geometric", "q0": 1, "gamma": 2.0},
            "inner": {},
            "steps": 3, "trials": 2, "start": [0.0]
        }))
        .unwrap();
        assert!(spec.build().is_err());
    }
}
