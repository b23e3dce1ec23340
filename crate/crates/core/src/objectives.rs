//! Smooth convex objectives: the callback trait, the model that carries block
//! Lipschitz data, the quadratic family and the coordinate restriction used
//! by every block-wise map.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::polytope::BlockStructure;

/// Value/gradient/Hessian callbacks. Implementations must be pure so that
/// they can be evaluated from several threads at once.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// `f(y) − f(x)`. Override when it can be formed without subtracting two
    /// nearly equal values; line searches near a minimizer depend on it.
    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.value(y) - self.value(x)
    }
}

/// An objective together with its block Lipschitz matrices `L_i` and an
/// optional strong-convexity matrix `U`.
#[derive(Clone)]
pub struct ObjectiveModel {
    func: Arc<dyn Objective>,
    blocks: BlockStructure,
    lipschitz: Vec<DMatrix<f64>>,
    strong_convexity: Option<DMatrix<f64>>,
}

impl std::fmt::Debug for ObjectiveModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveModel")
            .field("dim", &self.dim())
            .field("blocks", &self.blocks.dims())
            .field("has_strong_convexity", &self.strong_convexity.is_some())
            .finish()
    }
}

impl ObjectiveModel {
    pub fn new(
        func: Arc<dyn Objective>,
        blocks: BlockStructure,
        lipschitz: Vec<DMatrix<f64>>,
        strong_convexity: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if func.dim() != blocks.total() {
            return Err(Error::DimensionMismatch {
                expected: blocks.total(),
                found: func.dim(),
            });
        }
        if lipschitz.len() != blocks.count() {
            return Err(Error::InvalidProblem(format!(
                "{} Lipschitz blocks supplied for {} coordinate blocks",
                lipschitz.len(),
                blocks.count()
            )));
        }
        for (i, l) in lipschitz.iter().enumerate() {
            let d = blocks.dims()[i];
            if l.shape() != (d, d) {
                return Err(Error::InvalidProblem(format!(
                    "Lipschitz block {i} has shape {:?}, expected ({d}, {d})",
                    l.shape()
                )));
            }
            if !linalg::is_positive_definite(l) {
                return Err(Error::NotPositiveDefinite(format!("Lipschitz block {i}")));
            }
        }
        if let Some(u) = &strong_convexity {
            let m = blocks.total();
            if u.shape() != (m, m) || !linalg::is_positive_definite(u) {
                return Err(Error::NotPositiveDefinite("strong convexity matrix".into()));
            }
        }
        Ok(Self {
            func,
            blocks,
            lipschitz,
            strong_convexity,
        })
    }

    /// `f(λ) = ½ λᵀQλ + cᵀλ` with exact `L_i = Q_ii` and `U = Q` when `Q`
    /// is positive definite.
    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>, blocks: BlockStructure) -> Result<Self> {
        let quad = QuadraticObjective::new(q, c)?;
        let lipschitz = (0..blocks.count())
            .map(|i| {
                let r = blocks.range(i);
                let blk = quad.q.view((r.start, r.start), (r.len(), r.len())).clone_owned();
                // PSD blocks with a zero eigenvalue get a tiny floor so that
                // the Lipschitz matrix stays invertible.
                if linalg::is_positive_definite(&blk) {
                    blk
                } else {
                    linalg::sym_map_eigenvalues(&blk, |v| v.max(1e-12))
                }
            })
            .collect();
        let u = linalg::is_positive_definite(&quad.q).then(|| quad.q.clone());
        if quad.dim() != blocks.total() {
            return Err(Error::DimensionMismatch {
                expected: blocks.total(),
                found: quad.dim(),
            });
        }
        Self::new(Arc::new(quad), blocks, lipschitz, u)
    }

    pub fn dim(&self) -> usize {
        self.blocks.total()
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.func.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.func.gradient(x)
    }

    pub fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.func.value_difference(x, y)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.func.hessian(x)
    }

    pub fn lipschitz_blocks(&self) -> &[DMatrix<f64>] {
        &self.lipschitz
    }

    pub fn lipschitz_matrix(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.lipschitz)
    }

    pub fn strong_convexity(&self) -> Option<&DMatrix<f64>> {
        self.strong_convexity.as_ref()
    }

    pub fn callbacks(&self) -> &Arc<dyn Objective> {
        &self.func
    }

    /// Restriction of `f` to block `i` with the other blocks frozen at `x`:
    /// `g(μ) = f(x_1, …, x_{i−1}, μ, x_{i+1}, …, x_n)`.
    pub fn coordinate_restriction(&self, i: usize, x: &DVector<f64>) -> ObjectiveModel {
        let range = self.blocks.range(i);
        let d = range.len();
        let restricted = Restricted {
            base: self.func.clone(),
            anchor: x.clone(),
            start: range.start,
            len: d,
        };
        let u = self
            .strong_convexity
            .as_ref()
            .map(|u| u.view((range.start, range.start), (d, d)).clone_owned());
        ObjectiveModel {
            func: Arc::new(restricted),
            blocks: BlockStructure::single(d),
            lipschitz: vec![self.lipschitz[i].clone()],
            strong_convexity: u,
        }
    }

    /// Samples the descent-lemma slack
    /// `∇f(λ)ᵀ(μ−λ) − f(μ) + f(λ) + ½‖μ−λ‖²_L` over pairs that differ in a
    /// single block (nonnegative when every `L_i` is valid) and, when `U` is present, the strong-convexity slack
    /// `(∇f(λ)−∇f(μ))ᵀ(λ−μ) − ‖λ−μ‖²_U`. Returns the minima.
    pub fn sampled_slacks(&self, samples: usize, radius: f64, seed: u64) -> (f64, Option<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = self.lipschitz_matrix();
        let m = self.dim();
        let mut descent = f64::INFINITY;
        let mut strong: Option<f64> = self.strong_convexity.as_ref().map(|_| f64::INFINITY);
        for _ in 0..samples {
            let x = DVector::from_fn(m, |_, _| rng.random_range(-radius..radius));
            let y = DVector::from_fn(m, |_, _| rng.random_range(-radius..radius));
            let gx = self.gradient(&x);
            // block Lipschitz data only bounds curvature along one block
            let i = rng.random_range(0..self.blocks.count());
            let r = self.blocks.range(i);
            let mut yi = x.clone();
            yi.rows_mut(r.start, r.len()).copy_from(&y.rows(r.start, r.len()));
            let d = &yi - &x;
            let s = gx.dot(&d) - self.value(&yi) + self.value(&x) + 0.5 * d.dot(&(&l * &d));
            descent = descent.min(s);
            if let (Some(u), Some(cur)) = (&self.strong_convexity, strong.as_mut()) {
                let d = &y - &x;
                let gy = self.gradient(&y);
                let t = (&gx - &gy).dot(&(&x - &y)) - d.dot(&(u * &d));
                *cur = cur.min(t);
            }
        }
        (descent, strong)
    }
}

/// `f(λ) = ½ λᵀQλ + cᵀλ`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                found: q.nrows(),
            });
        }
        if linalg::max_asymmetry(&q) > 1e-12 {
            return Err(Error::InvalidProblem("Q is not symmetric".into()));
        }
        if q.nrows() > 0 && linalg::min_eigenvalue_sym(&q) < -1e-12 {
            return Err(Error::InvalidProblem("Q is not positive semidefinite".into()));
        }
        Ok(Self { q, c })
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
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

struct Restricted {
    base: Arc<dyn Objective>,
    anchor: DVector<f64>,
    start: usize,
    len: usize,
}

impl Restricted {
    fn lift(&self, mu: &DVector<f64>) -> DVector<f64> {
        let mut x = self.anchor.clone();
        x.rows_mut(self.start, self.len).copy_from(mu);
        x
    }
}

impl Objective for Restricted {
    fn dim(&self) -> usize {
        self.len
    }

    fn value(&self, mu: &DVector<f64>) -> f64 {
        self.base.value(&self.lift(mu))
    }

    fn gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        self.base
            .gradient(&self.lift(mu))
            .rows(self.start, self.len)
            .clone_owned()
    }

    fn hessian(&self, mu: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.base.hessian(&self.lift(mu)).map(|h| {
            h.view((self.start, self.start), (self.len, self.len))
                .clone_owned()
        })
    }

    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.base.value_difference(&self.lift(x), &self.lift(y))
    }
}

/// `½ λᵀQλ + cᵀλ + Σ_i φ(λ_i)` for a smooth convex scalar `φ` with bounded
/// curvature. Used by the built-in registry.
#[derive(Debug, Clone)]
pub struct SeparablePerturbedQuadratic {
    pub quad: QuadraticObjective,
    pub kind: ScalarPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarPenalty {
    /// `log(1 + e^t)`, curvature in `(0, ¼]`.
    Softplus,
    /// `log cosh t`, curvature in `(0, 1]`.
    LogCosh,
}

impl ScalarPenalty {
    fn value(self, t: f64) -> f64 {
        match self {
            Self::Softplus => {
                if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                }
            }
            Self::LogCosh => {
                let a = t.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
        }
    }

    fn deriv(self, t: f64) -> f64 {
        match self {
            Self::Softplus => 1.0 / (1.0 + (-t).exp()),
            Self::LogCosh => t.tanh(),
        }
    }

    fn second(self, t: f64) -> f64 {
        match self {
            Self::Softplus => {
                let s = 1.0 / (1.0 + (-t).exp());
                s * (1.0 - s)
            }
            Self::LogCosh => {
                let th = t.tanh();
                1.0 - th * th
            }
        }
    }

    pub fn max_curvature(self) -> f64 {
        match self {
            Self::Softplus => 0.25,
            Self::LogCosh => 1.0,
        }
    }
}

impl Objective for SeparablePerturbedQuadratic {
    fn dim(&self) -> usize {
        self.quad.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.quad.value(x) + x.iter().map(|&t| self.kind.value(t)).sum::<f64>()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.quad.gradient(x) + x.map(|t| self.kind.deriv(t))
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = self.quad.q.clone();
        for i in 0..x.len() {
            h[(i, i)] += self.kind.second(x[i]);
        }
        Some(h)
    }

    fn value_difference(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let pen: f64 = x.iter().zip(y.iter()).map(|(&a, &b)| self.kind.value(b) - self.kind.value(a)).sum();
        self.quad.value_difference(x, y) + pen
    }
}

/// Built-in nonquadratic objectives addressable as `registry:<name>`.
/// Each one is strictly convex whenever `Q` is positive definite; no global
/// convexity check is performed beyond that.
pub fn registry(name: &str, q: DMatrix<f64>, c: DVector<f64>, blocks: BlockStructure) -> Result<ObjectiveModel> {
    let kind = match name {
        "softplus_ridge" => ScalarPenalty::Softplus,
        "logcosh_ridge" => ScalarPenalty::LogCosh,
        other => {
            return Err(Error::InvalidProblem(format!(
                "unknown registry objective '{other}' (known: softplus_ridge, logcosh_ridge)"
            )))
        }
    };
    let quad = QuadraticObjective::new(q, c)?;
    let bump = kind.max_curvature();
    let lipschitz = (0..blocks.count())
        .map(|i| {
            let r = blocks.range(i);
            let mut blk = quad.q.view((r.start, r.start), (r.len(), r.len())).clone_owned();
            for k in 0..r.len() {
                blk[(k, k)] += bump;
            }
            blk
        })
        .collect();
    let u = linalg::is_positive_definite(&quad.q).then(|| quad.q.clone());
    ObjectiveModel::new(
        Arc::new(SeparablePerturbedQuadratic { quad, kind }),
        blocks,
        lipschitz,
        u,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport {
    pub max_gradient_error: f64,
    pub max_hessian_error: Option<f64>,
}

/// Compares analytic derivatives with central differences at random points
/// in `[-1, 1]^m`. Errors are relative to `max(1, ‖exact‖_∞)`.
pub fn finite_diff_audit(f: &ObjectiveModel, samples: usize, step: f64, seed: u64) -> Result<FiniteDiffReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidParameters("finite-difference step must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = f.dim();
    let mut grad_err: f64 = 0.0;
    let mut hess_err: Option<f64> = None;
    for _ in 0..samples {
        let x = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let g = f.gradient(&x);
        let mut fd = DVector::zeros(m);
        for k in 0..m {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            fd[k] = (f.value(&xp) - f.value(&xm)) / (2.0 * step);
        }
        let scale = g.amax().max(1.0);
        grad_err = grad_err.max((&fd - &g).amax() / scale);

        if let Some(h) = f.hessian(&x) {
            let mut fdh = DMatrix::zeros(m, m);
            for k in 0..m {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += step;
                xm[k] -= step;
                let col = (f.gradient(&xp) - f.gradient(&xm)) / (2.0 * step);
                fdh.set_column(k, &col);
            }
            let scale = h.amax().max(1.0);
            let e = (&fdh - &h).amax() / scale;
            hess_err = Some(hess_err.map_or(e, |cur| cur.max(e)));
        }
    }
    Ok(FiniteDiffReport {
        max_gradient_error: grad_err,
        max_hessian_error: hess_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ExpPlusSquare;

    impl Objective for ExpPlusSquare {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            x[0].exp() + x[1] * x[1]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![x[0].exp(), 2.0 * x[1]])
        }
        fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::from_row_slice(2, 2, &[x[0].exp(), 0.0, 0.0, 2.0]))
        }
    }

    struct Zero;

    impl Objective for Zero {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, _x: &DVector<f64>) -> f64 {
            0.0
        }
        fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(3)
        }
        fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::zeros(3, 3))
        }
    }

    fn q21() -> ObjectiveModel {
        ObjectiveModel::quadratic(
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            DVector::zeros(2),
            BlockStructure::scalar(2),
        )
        .unwrap()
    }

    #[test]
    fn restriction_separable() {
        let f = ObjectiveModel::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), BlockStructure::scalar(2))
            .unwrap();
        let x = DVector::from_vec(vec![3.0, 7.0]);
        let g = f.coordinate_restriction(0, &x);
        for mu in [-2.0, 0.0, 1.5] {
            let m = DVector::from_vec(vec![mu]);
            assert!((g.value(&m) - (0.5 * mu * mu + 24.5)).abs() < 1e-12);
            assert!((g.gradient(&m)[0] - mu).abs() < 1e-15);
        }
    }

    #[test]
    fn restriction_coupled() {
        let f = q21();
        let g = f.coordinate_restriction(1, &DVector::from_vec(vec![1.0, 0.0]));
        for mu in [-1.0, 0.0, 2.0] {
            // row product by hand: d/dμ of ½[2 + 2μ + 2μ²] = 1 + 2μ
            assert_eq!(g.gradient(&DVector::from_vec(vec![mu]))[0], 1.0 + 2.0 * mu);
        }
        assert_eq!(g.hessian(&DVector::zeros(1)).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn restriction_consistent_with_value() {
        let f = q21();
        let x = DVector::from_vec(vec![0.3, -1.2]);
        for i in 0..2 {
            let g = f.coordinate_restriction(i, &x);
            let mu = DVector::from_vec(vec![x[i]]);
            assert_eq!(g.value(&mu), f.value(&x));
        }
    }

    #[test]
    fn audit_examples() {
        let f = q21();
        let r = finite_diff_audit(&f, 20, 1e-5, 1).unwrap();
        assert!(r.max_gradient_error <= 1e-7, "{r:?}");

        let e = ObjectiveModel::new(
            Arc::new(ExpPlusSquare),
            BlockStructure::scalar(2),
            vec![DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 2.0)],
            None,
        )
        .unwrap();
        let r = finite_diff_audit(&e, 20, 1e-5, 2).unwrap();
        assert!(r.max_gradient_error <= 1e-5);
        assert!(r.max_hessian_error.unwrap() <= 1e-5);

        let z = ObjectiveModel::new(
            Arc::new(Zero),
            BlockStructure::single(3),
            vec![DMatrix::identity(3, 3)],
            None,
        )
        .unwrap();
        let r = finite_diff_audit(&z, 5, 1e-5, 3).unwrap();
        assert_eq!(r.max_gradient_error, 0.0);
        assert_eq!(r.max_hessian_error, Some(0.0));

        assert!(finite_diff_audit(&z, 5, 0.0, 3).is_err());
    }

    #[test]
    fn registry_functions_satisfy_invariants() {
        let q = DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.0, 0.5, 2.0, 0.3, 0.0, 0.3, 1.5]);
        let c = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        for name in ["softplus_ridge", "logcosh_ridge"] {
            let f = registry(name, q.clone(), c.clone(), BlockStructure::new(vec![1, 2]).unwrap()).unwrap();
            let r = finite_diff_audit(&f, 50, 1e-5, 7).unwrap();
            assert!(r.max_gradient_error < 1e-5, "{name}: {r:?}");
            assert!(r.max_hessian_error.unwrap() < 1e-4, "{name}: {r:?}");
            let (descent, strong) = f.sampled_slacks(60, 3.0, 11);
            assert!(descent >= -1e-8, "{name}: descent slack {descent}");
            assert!(strong.unwrap() >= -1e-8, "{name}: strong slack {strong:?}");
        }
        assert!(registry("nope", q, c, BlockStructure::single(3)).is_err());
    }

    #[test]
    fn quadratic_invariants() {
        let f = q21();
        assert_eq!(f.lipschitz_blocks()[0][(0, 0)], 2.0);
        assert_eq!(f.lipschitz_blocks()[1][(0, 0)], 2.0);
        let (descent, strong) = f.sampled_slacks(50, 5.0, 3);
        assert!(descent >= -1e-8);
        assert!(strong.unwrap() >= -1e-8);
        let g = f.coordinate_restriction(0, &DVector::from_vec(vec![0.4, 0.1]));
        assert_eq!(g.hessian(&DVector::zeros(1)).unwrap(), DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn rejects_asymmetric_q() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticObjective::new(q, DVector::zeros(2)).is_err());
    }
}
