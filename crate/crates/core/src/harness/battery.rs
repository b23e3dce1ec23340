//! Randomized check of the closed form for a product of block relaxations.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::rates;

pub const PRODUCT_TOL: f64 = 1e-10;

/// A block system `(D, L, T)` on block sizes `dims`: `D` symmetric block
/// diagonal, `L` strictly lower block triangular, both with U(−1, 1)
/// entries, and `T` block diagonal with PD blocks `BBᵀ + ½I`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub dims: Vec<usize>,
    pub d: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

pub fn random_block_system(rng: &mut impl Rng, max_blocks: usize, max_dim: usize) -> BlockSystem {
    let nb = rng.random_range(1..=max_blocks);
    let dims: Vec<usize> = (0..nb).map(|_| rng.random_range(1..=max_dim)).collect();
    let m: usize = dims.iter().sum();
    let mut block_of = Vec::with_capacity(m);
    for (i, &k) in dims.iter().enumerate() {
        block_of.extend(std::iter::repeat_n(i, k));
    }
    let mut d = DMatrix::zeros(m, m);
    let mut l = DMatrix::zeros(m, m);
    let mut t = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..m {
            if block_of[r] == block_of[c] && c <= r {
                let x = rng.random_range(-1.0..1.0);
                d[(r, c)] = x;
                d[(c, r)] = x;
            } else if block_of[c] < block_of[r] {
                l[(r, c)] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let mut start = 0;
    for &k in &dims {
        let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let tb = &b * b.transpose() + DMatrix::identity(k, k) * 0.5;
        t.view_mut((start, start), (k, k)).copy_from(&tb);
        start += k;
    }
    BlockSystem { dims, d, l, t }
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_abs_error: f64,
    pub failures: usize,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `trials` systems with at most 6 blocks of size at most 4; trial `t`
/// draws from stream `t` of the seeded generator.
pub fn product_identity_battery(trials: usize, seed: u64) -> Result<BatteryReport> {
    let errors = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let s = random_block_system(&mut rng, 6, 4);
            rates::verify_product_identity(&s.d, &s.l, &s.t, &s.dims).map(|r| r.max_abs_error)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BatteryReport {
        trials,
        seed,
        tolerance: PRODUCT_TOL,
        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
        failures: errors.iter().filter(|e| !(**e <= PRODUCT_TOL)).count(),
    })
}
