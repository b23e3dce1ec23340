//! Checks the linear supernorm envelope of the random map along averaged
//! trajectories.
//!
//! For every trial the exact conditional expectation
//! `E[Ψ(λ^{k+1}) | λ^k] = Σ_i π_i Ψ(R_i(λ^k))` is formed by applying every
//! block update, so the only Monte Carlo error left is in the law of `λ^k`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::ObjectiveModel;
use crate::polytope::{Polyhedron, ACTIVE_TOL};
use crate::projection::{self, ScalingMatrix};
use crate::rates;
use crate::solvers::{self, Scaling, SolverConfig, Variant};

/// Slack on the envelope, as a fraction of the bound.
pub const ENVELOPE_SLACK: f64 = 0.02;

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub blocks: usize,
    pub p_min: f64,
    pub u_min: f64,
    pub linear_factor: f64,
    pub trials: usize,
    /// Steps actually checked; stops early once `E[Ψ]` reaches roundoff.
    pub steps_checked: usize,
    /// `max_k E[Ψ(λ^{k+1})] / E[Ψ(λ^k)]`.
    pub max_averaged_ratio: f64,
    /// Same ratio for the worst single trajectory.
    pub max_path_ratio: f64,
    /// Largest `E[Ψ(λ^k)] / (Ψ(λ^0)/(1 + p̲k))`, for information only.
    pub max_sublinear_ratio: f64,
    pub violations: usize,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Runs `trials` random trajectories of `steps` block updates with the fixed
/// scaling `Γ̂_i = L_i⁻¹` and checks
/// `E[Ψ(λ^{k+1})] ≤ (1 − 2p̲u̲/(u̲ + np̲))·E[Ψ(λ^k)]·(1 + ENVELOPE_SLACK)`.
#[allow(clippy::too_many_arguments)]
pub fn check_linear_envelope(
    f: &ObjectiveModel,
    p: &Polyhedron,
    start: &DVector<f64>,
    lambda_star: &DVector<f64>,
    pi: Option<Vec<f64>>,
    trials: usize,
    steps: usize,
    seed: u64,
) -> Result<EnvelopeReport> {
    let n = f.blocks().count();
    let cfg = SolverConfig {
        variant: Variant::Random,
        scaling: Scaling::InverseLipschitz,
        pi,
        seed,
        ..SolverConfig::default()
    };
    cfg.validate_for_envelopes(n, f.dim())?;
    let u = f
        .strong_convexity()
        .ok_or(Error::MissingStrongConvexity("the linear envelope"))?;
    let pi = cfg.probabilities(n);
    let p_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let gamma_hat = f
        .lipschitz_blocks()
        .iter()
        .map(|l| linalg::sym_inverse(l, "Lipschitz block"))
        .collect::<Result<Vec<_>>>()?;
    let v = rates::supernorm_metric(&pi, &gamma_hat)?;
    let u_min = rates::min_generalized_eigenvalue(u, &v)?;
    let linear = rates::lemma1_envelopes(n, p_min, u_min, 0).linear;
    let psi = |x: &DVector<f64>| rates::supernorm(x, lambda_star, f, &v, n, p_min);

    let x0 = if p.contains(start, ACTIVE_TOL)? {
        start.clone()
    } else {
        projection::scaled_project(p, start, &ScalingMatrix::identity(p.dim()))?
    };
    let stepper = solvers::Stepper::new(f, p, &cfg)?;

    // per trial: (Ψ(λ^k), Σ π_i Ψ(R_i(λ^k))) for k < steps
    let paths: Vec<Vec<(f64, f64)>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<Vec<(f64, f64)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let mut x = x0.clone();
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                let updates = (0..n)
                    .map(|i| stepper.step_block(&x, i).map(|(y, _)| y))
                    .collect::<Result<Vec<_>>>()?;
                let cond: f64 = updates.iter().zip(&pi).map(|(y, &w)| w * psi(y)).sum();
                out.push((psi(&x), cond));
                let i = solvers::draw_block(&pi, &mut rng);
                x = updates[i].clone();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let floor = (crate::harness::fit::distance_floor(lambda_star)).powi(2);
    let mut max_avg: f64 = 0.0;
    let mut max_sub: f64 = 0.0;
    let mut violations = 0;
    let mut checked = 0;
    let psi0 = psi(&x0);
    for k in 0..steps {
        let mean_psi = paths.iter().map(|p| p[k].0).sum::<f64>() / trials as f64;
        let mean_next = paths.iter().map(|p| p[k].1).sum::<f64>() / trials as f64;
        if mean_psi <= floor {
            break;
        }
        checked += 1;
        let r = mean_next / mean_psi;
        max_avg = max_avg.max(r);
        if r > linear * (1.0 + ENVELOPE_SLACK) {
            violations += 1;
        }
        if psi0 > 0.0 {
            let sub = rates::lemma1_envelopes(n, p_min, u_min, k).sublinear;
            max_sub = max_sub.max(mean_psi / (psi0 * sub));
        }
    }
    let max_path = paths
        .iter()
        .flat_map(|p| p[..checked].iter())
        .filter(|(a, _)| *a > floor)
        .map(|(a, b)| b / a)
        .fold(0.0, f64::max);
    Ok(EnvelopeReport {
        blocks: n,
        p_min,
        u_min,
        linear_factor: linear,
        trials,
        steps_checked: checked,
        max_averaged_ratio: max_avg,
        max_path_ratio: max_path,
        max_sublinear_ratio: max_sub,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::BlockStructure;
    use nalgebra::DMatrix;

    #[test]
    fn separable_contracts_at_the_bound() {
        // Ψ = ‖λ‖² here; one exact block step removes half of it on average.
        let b = BlockStructure::scalar(2);
        let f = ObjectiveModel::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), b.clone()).unwrap();
        let p = Polyhedron::unconstrained(b);
        let r = check_linear_envelope(&f, &p, &DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(2), None, 20, 5, 1).unwrap();
        assert!((r.linear_factor - (1.0 - 2.0 * 0.5 / 2.0)).abs() < 1e-15);
        assert!((r.max_averaged_ratio - 0.5).abs() < 1e-12, "{}", r.max_averaged_ratio);
        assert!(r.passed());
    }

    #[test]
    fn needs_strong_convexity() {
        let b = BlockStructure::scalar(2);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = ObjectiveModel::quadratic(q, DVector::zeros(2), b.clone()).unwrap();
        let p = Polyhedron::unconstrained(b);
        assert!(check_linear_envelope(&f, &p, &DVector::zeros(2), &DVector::zeros(2), None, 5, 5, 1).is_err());
    }
}
