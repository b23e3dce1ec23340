use nalgebra::{DMatrix, DVector};
use polycd::harness::battery::random_block_system;
use polycd::harness::generate_problem;
use polycd::linalg;
use polycd::polytope::ACTIVE_TOL;
use polycd::projection::{optimality_residual, scaled_project};
use polycd::rates;
use polycd::{BlockStructure, Polyhedron, ScalingMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn gvec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = gmat(rng, n, n);
    linalg::symmetrize(&(&b * b.transpose() + DMatrix::identity(n, n) * 0.2))
}

/// Random polyhedron in one block that contains `x0`, plus `x0`.
fn polyhedron(rng: &mut ChaCha8Rng, m: usize, rows: usize) -> (Polyhedron, DVector<f64>) {
    let a = gmat(rng, rows, m);
    let x0 = gvec(rng, m, 1.0);
    let b = &a * &x0 + DVector::from_fn(rows, |_, _| rng.random_range(0.0..0.5));
    (Polyhedron::new(a, b, BlockStructure::single(m)).unwrap(), x0)
}

/// Feasible point by a random convex step from `x0` towards a projected point.
fn feasible_point(rng: &mut ChaCha8Rng, p: &Polyhedron, x0: &DVector<f64>) -> DVector<f64> {
    let z = gvec(rng, p.dim(), 3.0);
    let y = scaled_project(p, &z, &ScalingMatrix::identity(p.dim())).unwrap();
    let t = rng.random_range(0.0..1.0);
    x0 * (1.0 - t) + y * t
}

fn gamma_norm(ginv: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    d.dot(&(ginv * d)).max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_idempotent_and_variational(seed in any::<u64>(), m in 1usize..6, rows in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, x0) = polyhedron(&mut rng, m, rows);
        let g = ScalingMatrix::new(spd(&mut rng, m)).unwrap();
        let ginv = g.inverse().unwrap();
        let z = gvec(&mut rng, m, 4.0);
        let y = scaled_project(&p, &z, &g).unwrap();
        prop_assert!(p.max_violation(&y).unwrap() <= 1e-9);
        let yy = scaled_project(&p, &y, &g).unwrap();
        prop_assert!((&yy - &y).amax() <= 1e-9 * (1.0 + y.amax()));
        for _ in 0..20 {
            let w = feasible_point(&mut rng, &p, &x0);
            let slack = -(&z - &y).dot(&(&ginv * (&w - &y)));
            prop_assert!(slack >= -1e-8, "slack {}", slack);
        }
    }

    #[test]
    fn projection_is_nonexpansive(seed in any::<u64>(), m in 1usize..6, rows in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, _) = polyhedron(&mut rng, m, rows);
        let g = ScalingMatrix::new(spd(&mut rng, m)).unwrap();
        let ginv = g.inverse().unwrap();
        let z1 = gvec(&mut rng, m, 4.0);
        let z2 = gvec(&mut rng, m, 4.0);
        let d_out = gamma_norm(&ginv, &(scaled_project(&p, &z1, &g).unwrap() - scaled_project(&p, &z2, &g).unwrap()));
        let d_in = gamma_norm(&ginv, &(&z1 - &z2));
        prop_assert!(d_out <= d_in * (1.0 + 1e-9) + 1e-12, "{} > {}", d_out, d_in);
    }

    #[test]
    fn reduced_basis_is_orthonormal_null_space(seed in any::<u64>(), dims in prop::collection::vec(1usize..4, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = BlockStructure::new(dims.clone()).unwrap();
        let m = blocks.total();
        // a few rows per block, with active rows passing through x0
        let x0 = gvec(&mut rng, m, 1.0);
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut active = Vec::new();
        for i in 0..blocks.count() {
            let r = blocks.range(i);
            for _ in 0..rng.random_range(0..=r.len() + 1) {
                let mut a = DVector::zeros(m);
                for c in r.clone() {
                    a[c] = rng.random_range(-1.0..1.0);
                }
                let tight = rng.random_bool(0.5);
                if tight {
                    active.push(rows.len());
                }
                rhs.push(a.dot(&x0) + if tight { 0.0 } else { 1.0 });
                rows.push(a);
            }
        }
        prop_assume!(!rows.is_empty());
        let a = DMatrix::from_fn(rows.len(), m, |r, c| rows[r][c]);
        let p = Polyhedron::new(a.clone(), DVector::from_vec(rhs), blocks.clone()).unwrap();
        let act = p.active_set(&x0, ACTIVE_TOL).unwrap();
        for j in &active {
            prop_assert!(act.contains(*j));
        }
        let e = p.reduced_basis(&act);
        for i in 0..blocks.count() {
            let ei = e.block(i);
            let gram = ei.transpose() * ei;
            prop_assert!((gram - DMatrix::identity(ei.ncols(), ei.ncols())).amax() < 1e-12);
        }
        let em = e.matrix();
        for &j in act.indices() {
            prop_assert!((a.row(j) * &em).amax() < 1e-10);
        }
        // rank-nullity per block
        prop_assert!(e.reduced_dim() + rank(&act, &a, &blocks) == m);
    }

    #[test]
    fn kkt_residual_vanishes_only_at_the_solution(seed in 0u64..10_000) {
        let file = generate_problem("engineered_box", &serde_json::json!({"blocks": [1, 1, 1, 1, 1]}), seed).unwrap();
        let p = file.build().unwrap();
        let star = p.solution.clone().unwrap();
        prop_assert!(optimality_residual(&p.objective, &p.polyhedron, &star).unwrap() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = scaled_project(&p.polyhedron, &(&star + gvec(&mut rng, 5, 0.3)), &ScalingMatrix::identity(5)).unwrap();
        prop_assume!((&other - &star).norm() > 1e-6);
        prop_assert!(optimality_residual(&p.objective, &p.polyhedron, &other).unwrap() > 0.0);
    }

    #[test]
    fn product_identity_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_block_system(&mut rng, 6, 4);
        let r = rates::verify_product_identity(&s.d, &s.l, &s.t, &s.dims).unwrap();
        prop_assert!(r.max_abs_error <= 1e-10, "{}", r.max_abs_error);
    }

    #[test]
    fn spectral_radius_is_similarity_invariant(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = gmat(&mut rng, n, n);
        let s = gmat(&mut rng, n, n) + DMatrix::identity(n, n) * 3.0;
        let si = s.clone().try_inverse().unwrap();
        let a = linalg::spectral_radius(&m).unwrap();
        let b = linalg::spectral_radius(&(&s * &m * si)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a), "{} vs {}", a, b);
    }

    #[test]
    fn spectral_radius_matches_gelfand(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = gmat(&mut rng, n, n);
        let rho = linalg::spectral_radius(&m).unwrap();
        prop_assume!(rho > 1e-3);
        let scaled = &m / rho;
        let mut pow = DMatrix::identity(n, n);
        for k in 1..=400 {
            pow = &pow * &scaled;
            let g = pow.norm().powf(1.0 / k as f64);
            prop_assert!(g >= 1.0 - 1e-9, "k={} {}", k, g);
        }
        prop_assert!(pow.norm().powf(1.0 / 400.0) < 1.05);
    }
}

fn rank(act: &polycd::ActiveSet, a: &DMatrix<f64>, blocks: &BlockStructure) -> usize {
    let idx = act.indices();
    if idx.is_empty() {
        return 0;
    }
    let sub = DMatrix::from_fn(idx.len(), blocks.total(), |r, c| a[(idx[r], c)]);
    sub.svd(false, false).singular_values.iter().filter(|s| **s > 1e-9).count()
}
