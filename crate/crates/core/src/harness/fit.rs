//! Empirical convergence rates from traces.
//!
//! Each estimator fits `log r_k ≈ a + k·log ρ` by least squares over a
//! window of the sequence. The window fractions refer to the usable prefix,
//! i.e. the points before the sequence first drops to the noise floor.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objectives::ObjectiveModel;
use crate::solvers::IterateTrace;

pub const MIN_WINDOW: usize = 5;
pub const MIN_RANDOM_TRACES: usize = 100;
/// Multiples of machine epsilon below which residuals are treated as noise.
pub const FLOOR_FACTOR: f64 = 100.0;

pub fn distance_floor(target: &DVector<f64>) -> f64 {
    FLOOR_FACTOR * f64::EPSILON * target.norm().max(1.0)
}

pub fn value_floor(f_star: f64) -> f64 {
    FLOOR_FACTOR * f64::EPSILON * f_star.abs().max(1.0)
}

/// exp of the least-squares slope of `log values[k]` against `k`.
pub fn geometric_fit(values: &[f64]) -> Result<f64> {
    if values.len() < MIN_WINDOW {
        return Err(Error::WindowTooShort {
            len: values.len(),
            needed: MIN_WINDOW,
        });
    }
    let n = values.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    Ok((sxy / sxx).exp())
}

/// Fits the windowed part of `seq` after cutting it at the first entry
/// at or below `floor`.
pub fn windowed_rate(seq: &[f64], floor: f64, window: (f64, f64)) -> Result<f64> {
    let (lo, hi) = window;
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::InvalidParameters(format!("window ({lo}, {hi}) is not inside [0, 1]")));
    }
    let usable = seq.iter().position(|&v| !(v > floor)).unwrap_or(seq.len());
    if usable == 0 {
        return Err(Error::NoiseFloor {
            value: seq.first().copied().unwrap_or(0.0),
            floor,
        });
    }
    let start = (lo * usable as f64).floor() as usize;
    let end = ((hi * usable as f64).ceil() as usize).min(usable);
    if end.saturating_sub(start) < MIN_WINDOW {
        if usable < MIN_WINDOW && usable < seq.len() {
            return Err(Error::NoiseFloor {
                value: seq[usable],
                floor,
            });
        }
        return Err(Error::WindowTooShort {
            len: end.saturating_sub(start),
            needed: MIN_WINDOW,
        });
    }
    geometric_fit(&seq[start..end])
}

/// Per-iteration rate of `‖λ^k − λ*‖`.
pub fn empirical_rate(trace: &IterateTrace, target: &DVector<f64>, window: (f64, f64)) -> Result<f64> {
    windowed_rate(&trace.distances(target), distance_floor(target), window)
}

/// Entrywise mean of sequences; shorter ones are extended with their last
/// value, which is where a run that stopped early stays.
pub fn mean_sequence(seqs: &[Vec<f64>]) -> Vec<f64> {
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut acc = vec![0.0; len];
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        for (k, a) in acc.iter_mut().enumerate() {
            *a += s.get(k).copied().unwrap_or(s[s.len() - 1]);
        }
    }
    let n = seqs.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

fn check_ensemble(n: usize, random: bool) -> Result<()> {
    if n == 0 || (random && n < MIN_RANDOM_TRACES) {
        return Err(Error::InsufficientTrials {
            got: n,
            needed: if random { MIN_RANDOM_TRACES } else { 1 },
        });
    }
    Ok(())
}

/// Rate of the trial-averaged `f(λ^k) − f*`. Random variants need at least
/// `MIN_RANDOM_TRACES` traces.
pub fn empirical_f_rate(traces: &[IterateTrace], f_star: f64, window: (f64, f64), random: bool) -> Result<f64> {
    check_ensemble(traces.len(), random)?;
    let seqs: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.values().iter().map(|v| v - f_star).collect())
        .collect();
    windowed_rate(&mean_sequence(&seqs), value_floor(f_star), window)
}

/// Same as `empirical_f_rate`, with each gap formed by
/// `ObjectiveModel::value_difference` against `λ*` instead of subtracting
/// `f*`. This keeps relative accuracy down to squared-distance scale, so the
/// floor is the square of the distance floor.
pub fn empirical_gap_rate(
    f: &ObjectiveModel,
    traces: &[IterateTrace],
    target: &DVector<f64>,
    window: (f64, f64),
    random: bool,
) -> Result<f64> {
    check_ensemble(traces.len(), random)?;
    let seqs: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.records.iter().map(|r| f.value_difference(target, &r.lambda)).collect())
        .collect();
    windowed_rate(&mean_sequence(&seqs), distance_floor(target).powi(2), window)
}
