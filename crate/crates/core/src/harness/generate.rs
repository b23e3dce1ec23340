//! Seeded problem generators.
//!
//! * `random_pd_quadratic`: PD quadratic with log-spaced spectrum between 1
//!   and `cond`, optionally boxed.
//! * `engineered_box`: box-constrained quadratic with a chosen active set,
//!   positive multipliers and a known solution.
//! * `simplex`: PD quadratic over a product of simplices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use serde_json::Value;

use super::problem::{matrix_to_rows, ConstraintSpec, ObjectiveSpec, ProblemFile};
use crate::error::{Error, Result};
use crate::linalg;
use crate::polytope::{BlockStructure, Polyhedron};
use crate::projection::ScalingMatrix;
use crate::rates;

pub const FAMILIES: [&str; 3] = ["random_pd_quadratic", "engineered_box", "simplex"];

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric PD matrix with eigenvalues log-spaced on `[lo, hi]`.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    if lo == hi {
        return DMatrix::identity(n, n) * lo;
    }
    let eig = DVector::from_fn(n, |i, _| {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        lo * (hi / lo).powf(t)
    });
    let u = random_orthogonal(rng, n);
    linalg::symmetrize(&(&u * DMatrix::from_diagonal(&eig) * u.transpose()))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    linalg::max_eigenvalue_sym(m) / linalg::min_eigenvalue_sym(m)
}

fn parse<T: for<'de> Deserialize<'de>>(params: &Value) -> Result<T> {
    let v = if params.is_null() { Value::Object(Default::default()) } else { params.clone() };
    serde_json::from_value(v).map_err(|e| Error::InvalidParameters(e.to_string()))
}

fn check_blocks(blocks: &[usize]) -> Result<BlockStructure> {
    BlockStructure::new(blocks.to_vec()).map_err(|e| Error::InvalidParameters(e.to_string()))
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RandomPdParams {
    blocks: Vec<usize>,
    cond: f64,
    /// Add the box `[-1, 1]^m`.
    boxed: bool,
}

impl Default for RandomPdParams {
    fn default() -> Self {
        Self {
            blocks: vec![1; 4],
            cond: 10.0,
            boxed: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EngineeredParams {
    blocks: Vec<usize>,
    cond_max: f64,
    /// Coordinates pinned at a bound; drawn at random when absent.
    active: Option<Vec<usize>>,
    n_active: Option<usize>,
    /// Lower bound on ρ of the reduced cyclic and Jacobi matrices under
    /// block-Newton scaling, so that traces are long enough to fit rates.
    min_rate: f64,
    /// Upper bound on `|μ₂|/ρ`, where `|μ₂|` is the largest eigenvalue
    /// modulus of the same matrices strictly below `ρ`. Near ties (often a
    /// `±ρ` pair for the synchronous map) make the tail of a short trace a
    /// mixture of two modes. Exact ties such as conjugate pairs are allowed.
    max_modulus_ratio: f64,
    max_tries: usize,
}

impl Default for EngineeredParams {
    fn default() -> Self {
        Self {
            blocks: vec![1; 6],
            cond_max: 100.0,
            active: None,
            n_active: None,
            min_rate: 0.2,
            max_modulus_ratio: 0.8,
            max_tries: 2000,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimplexParams {
    blocks: Vec<usize>,
    cond: f64,
}

impl Default for SimplexParams {
    fn default() -> Self {
        Self {
            blocks: vec![3, 3],
            cond: 10.0,
        }
    }
}

pub fn generate_problem(family: &str, params: &Value, seed: u64) -> Result<ProblemFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match family {
        "random_pd_quadratic" => random_pd(parse(params)?, &mut rng, seed),
        "engineered_box" => engineered(parse(params)?, &mut rng, seed),
        "simplex" => simplex(parse(params)?, &mut rng, seed),
        other => Err(Error::InvalidParameters(format!(
            "unknown family '{other}' (known: {})",
            FAMILIES.join(", ")
        ))),
    }
}

fn box_rows(m: usize, lo: f64, hi: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = Vec::with_capacity(2 * m);
    let mut b = Vec::with_capacity(2 * m);
    for j in 0..m {
        let mut row = vec![0.0; m];
        row[j] = -1.0;
        a.push(row);
        b.push(-lo);
        let mut row = vec![0.0; m];
        row[j] = 1.0;
        a.push(row);
        b.push(hi);
    }
    (a, b)
}

fn random_pd(p: RandomPdParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<ProblemFile> {
    let blocks = check_blocks(&p.blocks)?;
    if !(p.cond >= 1.0 && p.cond.is_finite()) {
        return Err(Error::InvalidParameters("cond must be at least 1".into()));
    }
    let m = blocks.total();
    let q = spd_with_spectrum(rng, m, 1.0, p.cond);
    let c = gaussian_vector(rng, m);
    let (a, b, start, solution) = if p.boxed {
        let (a, b) = box_rows(m, -1.0, 1.0);
        let start = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        (a, b, start, None)
    } else {
        let sol = linalg::sym_inverse(&q, "Q")? * -&c;
        (Vec::new(), Vec::new(), gaussian_vector(rng, m), Some(vec_of(&sol)))
    };
    Ok(ProblemFile {
        m,
        blocks: p.blocks,
        objective: ObjectiveSpec {
            kind: "quadratic".into(),
            q: matrix_to_rows(&q),
            c: vec_of(&c),
        },
        constraints: ConstraintSpec { a, b },
        start: vec_of(&start),
        solution,
        notes: format!("random_pd_quadratic seed={seed} cond={}", p.cond),
    })
}

/// `H = D^{1/2}(I + S)D^{1/2}` with `S` supported off the diagonal blocks and
/// `−0.9I ⪯ S ⪯ 0.45I`, so `1.5D ≻ H ≻ 0`.
fn engineered_hessian(rng: &mut ChaCha8Rng, blocks: &BlockStructure) -> DMatrix<f64> {
    let m = blocks.total();
    let parts: Vec<_> = blocks
        .dims()
        .iter()
        .map(|&d| {
            let hi = rng.random_range(1.0..4.0);
            spd_with_spectrum(rng, d, 1.0, hi)
        })
        .collect();
    let d = linalg::block_diag(&parts);
    let mut s = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in 0..r {
            if blocks.block_of(r) != blocks.block_of(c) {
                let v = rng.random_range(-1.0..1.0);
                s[(r, c)] = v;
                s[(c, r)] = v;
            }
        }
    }
    if m > 1 && s.amax() > 0.0 {
        let hi = linalg::max_eigenvalue_sym(&s);
        let lo = linalg::min_eigenvalue_sym(&s);
        let mut t = f64::INFINITY;
        if hi > 0.0 {
            t = t.min(0.45 / hi);
        }
        if lo < 0.0 {
            t = t.min(0.9 / -lo);
        }
        s *= t * rng.random_range(0.5..1.0);
    }
    let (root, _, _) = linalg::sym_sqrt_pair(&d, 0.0);
    linalg::symmetrize(&(&root * (DMatrix::identity(m, m) + s) * &root))
}

fn engineered(p: EngineeredParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<ProblemFile> {
    let blocks = check_blocks(&p.blocks)?;
    let m = blocks.total();
    if let Some(act) = &p.active {
        if act.iter().any(|&j| j >= m) {
            return Err(Error::InvalidParameters("active coordinate out of range".into()));
        }
    }
    let n_active = p.active.as_ref().map_or(p.n_active.unwrap_or(m / 3), |a| a.len());
    if n_active > m {
        return Err(Error::InvalidParameters("more active coordinates than variables".into()));
    }
    let (a_rows, b) = box_rows(m, -1.0, 1.0);
    let poly = Polyhedron::new(
        super::problem::matrix_from_rows(&a_rows, m, "A")?,
        DVector::from_row_slice(&b),
        blocks.clone(),
    )?;

    for _ in 0..p.max_tries {
        let h = engineered_hessian(rng, &blocks);
        if condition_number(&h) > p.cond_max {
            continue;
        }
        let active: Vec<usize> = match &p.active {
            Some(a) => a.clone(),
            None => {
                let mut idx: Vec<usize> = (0..m).collect();
                for i in 0..n_active {
                    let j = rng.random_range(i..m);
                    idx.swap(i, j);
                }
                idx.truncate(n_active);
                idx.sort_unstable();
                idx
            }
        };
        let mut lam = DVector::from_fn(m, |_, _| rng.random_range(-0.8..0.8));
        let mut grad_target = DVector::zeros(m);
        let mut rows = Vec::new();
        for &j in &active {
            let upper = rng.random_bool(0.5);
            let zeta = rng.random_range(0.5..2.0);
            // row 2j is −λ_j ≤ 1, row 2j+1 is λ_j ≤ 1
            if upper {
                lam[j] = 1.0;
                grad_target[j] = -zeta;
                rows.push(2 * j + 1);
            } else {
                lam[j] = -1.0;
                grad_target[j] = zeta;
                rows.push(2 * j);
            }
        }
        // ∇f(λ*) = Hλ* + c must equal −Σζ_j a_j.
        let c = &grad_target - &h * &lam;

        rows.sort_unstable();
        let e = poly.reduced_basis(&crate::polytope::ActiveSet::from_sorted(rows));
        let nb: Vec<DMatrix<f64>> = (0..blocks.count())
            .map(|i| {
                let r = blocks.range(i);
                linalg::sym_inverse(&h.view((r.start, r.start), (r.len(), r.len())).clone_owned(), "block")
            })
            .collect::<Result<_>>()?;
        let gamma = ScalingMatrix::from_blocks(&nb, &blocks)?;
        let rm = rates::reduce(&h, &gamma, &e)?;
        if rm.reduced_dim() > 0 {
            let mut ok = true;
            for rep in [rates::jacobi_rate(&rm)?, rates::cyclic_rate(&rm)?] {
                let mods = linalg::eigenvalue_moduli(rep.matrix.as_ref().expect("rate matrix"))?;
                let rho = mods[0];
                let second = mods.iter().copied().find(|&v| v < rho * (1.0 - 1e-9)).unwrap_or(0.0);
                ok &= rho < 1.0 && rho >= p.min_rate && second <= p.max_modulus_ratio * rho;
            }
            if !ok {
                continue;
            }
        }
        let start = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        return Ok(ProblemFile {
            m,
            blocks: p.blocks.clone(),
            objective: ObjectiveSpec {
                kind: "quadratic".into(),
                q: matrix_to_rows(&h),
                c: vec_of(&c),
            },
            constraints: ConstraintSpec { a: a_rows, b },
            start: vec_of(&start),
            solution: Some(vec_of(&lam)),
            notes: format!("engineered_box seed={seed} active={active:?}"),
        });
    }
    Err(Error::InvalidParameters(format!(
        "no instance met the requirements in {} tries",
        p.max_tries
    )))
}

fn simplex(p: SimplexParams, rng: &mut ChaCha8Rng, seed: u64) -> Result<ProblemFile> {
    let blocks = check_blocks(&p.blocks)?;
    if !(p.cond >= 1.0 && p.cond.is_finite()) {
        return Err(Error::InvalidParameters("cond must be at least 1".into()));
    }
    let m = blocks.total();
    let q = spd_with_spectrum(rng, m, 1.0, p.cond);
    let c = gaussian_vector(rng, m);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut start = vec![0.0; m];
    for i in 0..blocks.count() {
        let r = blocks.range(i);
        for j in r.clone() {
            let mut row = vec![0.0; m];
            row[j] = -1.0;
            a.push(row);
            b.push(0.0);
            start[j] = 1.0 / r.len() as f64;
        }
        // Σ λ = 1 as a pair of inequalities
        let mut up = vec![0.0; m];
        let mut down = vec![0.0; m];
        for j in r {
            up[j] = 1.0;
            down[j] = -1.0;
        }
        a.push(up);
        b.push(1.0);
        a.push(down);
        b.push(-1.0);
    }
    Ok(ProblemFile {
        m,
        blocks: p.blocks,
        objective: ObjectiveSpec {
            kind: "quadratic".into(),
            q: matrix_to_rows(&q),
            c: vec_of(&c),
        },
        constraints: ConstraintSpec { a, b },
        start,
        solution: None,
        notes: format!("simplex seed={seed} cond={}", p.cond),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seed_determinism() {
        for fam in FAMILIES {
            let a = generate_problem(fam, &Value::Null, 11).unwrap().to_json().unwrap();
            let b = generate_problem(fam, &Value::Null, 11).unwrap().to_json().unwrap();
            let c = generate_problem(fam, &Value::Null, 12).unwrap().to_json().unwrap();
            assert_eq!(a, b, "{fam}");
            assert_ne!(a, c, "{fam}");
        }
    }

    #[test]
    fn unit_condition_gives_scaled_identity() {
        let p = generate_problem("random_pd_quadratic", &json!({"blocks": [2, 1], "cond": 1.0}), 3).unwrap();
        let q = super::super::problem::matrix_from_rows(&p.objective.q, 3, "Q").unwrap();
        assert_eq!(q, DMatrix::identity(3, 3));
    }

    #[test]
    fn spectrum_and_condition() {
        let p = generate_problem("random_pd_quadratic", &json!({"blocks": [1, 1, 1, 1, 1], "cond": 50.0}), 9).unwrap();
        let q = super::super::problem::matrix_from_rows(&p.objective.q, 5, "Q").unwrap();
        assert!((condition_number(&q) - 50.0).abs() < 1e-8);
    }

    #[test]
    fn engineered_kkt_by_construction() {
        let p = generate_problem("engineered_box", &json!({"blocks": [2, 1, 3], "active": [0, 4]}), 5).unwrap();
        let built = p.build().unwrap();
        let star = built.solution.clone().unwrap();
        let act = built.polyhedron.active_set(&star, 1e-12).unwrap();
        assert_eq!(act.len(), 2);
        let g = built.objective.gradient(&star);
        let (sc, min) = built.polyhedron.strict_complementarity(&act, &g, 1e-8).unwrap();
        assert!(sc && min >= 0.5 - 1e-9, "{min}");
        assert!(crate::projection::optimality_residual(&built.objective, &built.polyhedron, &star).unwrap() < 1e-12);
    }

    #[test]
    fn simplex_start_is_feasible() {
        let p = generate_problem("simplex", &json!({"blocks": [3, 2]}), 1).unwrap().build().unwrap();
        assert!(p.polyhedron.contains(&p.start, 1e-12).unwrap());
    }

    #[test]
    fn rejects_unknown_params() {
        assert!(generate_problem("simplex", &json!({"bogus": 1}), 1).is_err());
        assert!(generate_problem("nope", &Value::Null, 1).is_err());
        assert!(generate_problem("random_pd_quadratic", &json!({"cond": 0.5}), 1).is_err());
    }
}
