use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use romelab_core::numerics::*;
use romelab_core::Error;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

/// A least-squares memory instance: keys `K` (D×N), values `V` (H×N), the
/// normal-equations optimum `W`, `C = KKᵀ` and a new pair.
struct Instance {
    k: Matrix,
    v: Matrix,
    w: Matrix,
    c: Matrix,
    k_star: Vec<f64>,
    v_star: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=8);
    let h = rng.random_range(1..=8);
    let n = rng.random_range(d.max(2)..=32);
    let k = random_matrix(d, n, &mut rng);
    let v = random_matrix(h, n, &mut rng);
    let w = normal_equations_solution(&k, &v).unwrap();
    let c = k.matmul(&k.transpose()).unwrap();
    Instance {
        k_star: random_vec(d, &mut rng),
        v_star: random_vec(h, &mut rng),
        k,
        v,
        w,
        c,
    }
}

#[test]
fn rank_one_update_solves_the_constrained_problem() {
    for seed in 0..20 {
        let inst = instance(seed);
        let update = rank_one_update(&inst.w, &inst.c, &inst.k_star, &inst.v_star).unwrap();
        let oracle = constrained_ls_oracle(&inst.k, &inst.v, &inst.k_star, &inst.v_star).unwrap();
        assert!(relative_frobenius(&update.w_hat, &oracle) <= 1e-8, "seed {seed}");
        assert!(constraint_residual(&update.w_hat, &inst.k_star, &inst.v_star).unwrap() <= 1e-8);
        let block = block_solution(&inst.w, &inst.c, &inst.k_star, &inst.v_star).unwrap();
        assert!(relative_frobenius(&block.w_hat, &update.w_hat) <= 1e-8);
    }
}

#[test]
fn oracle_fixture_with_identity_keys() {
    // ‖Ŵ − I‖² subject to Ŵ e₁ = e₂ only moves the first column.
    let w = constrained_ls_oracle(&Matrix::identity(2), &Matrix::identity(2), &[1.0, 0.0], &[0.0, 1.0]).unwrap();
    let expected = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    assert!(w.sub(&expected).unwrap().max_abs() < 1e-12);
}

#[test]
fn update_delta_has_rank_one() {
    for seed in 100..110 {
        let inst = instance(seed);
        let update = rank_one_update(&inst.w, &inst.c, &inst.k_star, &inst.v_star).unwrap();
        let sv = to_na(&update.delta()).singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        if s.len() > 1 {
            assert!(s[1] <= 1e-10 * s[0], "seed {seed}: {s:?}");
        }
        let direct = inst.w.add(&update.delta()).unwrap();
        assert!(relative_frobenius(&direct, &update.w_hat) < 1e-14);
    }
}

#[test]
fn scaling_c_leaves_the_update_unchanged() {
    for seed in 200..220 {
        let inst = instance(seed);
        let base = rank_one_update(&inst.w, &inst.c, &inst.k_star, &inst.v_star).unwrap();
        for alpha in [1e-3, 1.0, 1e3] {
            let scaled = rank_one_update(&inst.w, &inst.c.scale(alpha), &inst.k_star, &inst.v_star).unwrap();
            assert!(relative_frobenius(&scaled.w_hat, &base.w_hat) <= 1e-10, "seed {seed} alpha {alpha}");
        }
    }
}

#[test]
fn solve_matches_an_independent_lu() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=8 {
        let mut a = random_matrix(n, n, &mut rng);
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        let b = random_vec(n, &mut rng);
        let x = solve_linear(&a, &b).unwrap();
        let expected = to_na(&a).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for (xi, ei) in x.iter().zip(expected.iter()) {
            assert!((xi - ei).abs() <= 1e-10 * (1.0 + ei.abs()));
        }
        let r = sub(&a.matvec(&x).unwrap(), &b);
        assert!(norm(&r) <= 1e-8 * (1.0 + norm(&b)));
    }
}

#[test]
fn singular_systems_are_reported() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
    assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(Error::Singular { .. })));
}

#[test]
fn ridge_lifts_a_rank_one_sum() {
    let acc = CovarianceAccumulator::new(3).with(&[1.0, 2.0, -1.0]).unwrap();
    let c = acc.finalize(1e-6).unwrap();
    let eig = to_na(&c).symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min >= 1e-6 * (1.0 - 1e-6), "{min}");
}

#[test]
fn keys_the_inverse_flips_are_degenerate() {
    let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
    let w = Matrix::identity(2);
    assert!(matches!(rank_one_update(&w, &c, &[0.0, 1.0], &[1.0, 1.0]), Err(Error::DegenerateKey(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constraint_holds_for_any_positive_definite_c(seed in any::<u64>()) {
        let inst = instance(seed);
        let (c, _) = auto_ridge(&inst.c);
        let update = rank_one_update(&inst.w, &c, &inst.k_star, &inst.v_star).unwrap();
        prop_assert!(constraint_residual(&update.w_hat, &inst.k_star, &inst.v_star).unwrap() <= 1e-8);
    }

    #[test]
    fn satisfied_constraint_changes_nothing(seed in any::<u64>()) {
        let inst = instance(seed);
        let v_star = inst.w.matvec(&inst.k_star).unwrap();
        let update = rank_one_update(&inst.w, &inst.c, &inst.k_star, &v_star).unwrap();
        prop_assert!(update.delta().frobenius_norm() <= 1e-10 * (1.0 + inst.w.frobenius_norm()));
    }

    #[test]
    fn accumulated_statistics_are_symmetric_psd(seed in any::<u64>(), n in 1usize..40, dim in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = CovarianceAccumulator::new(dim);
        for _ in 0..n {
            acc.accumulate(&random_vec(dim, &mut rng)).unwrap();
        }
        let c = acc.finalize(0.0).unwrap();
        prop_assert_eq!(acc.n_samples(), n);
        prop_assert!(c.asymmetry() <= 1e-12);
        let min = to_na(&c).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10);
    }

    #[test]
    fn merging_equals_accumulating_everything(seed in any::<u64>(), split in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<Vec<f64>> = (0..20).map(|_| random_vec(4, &mut rng)).collect();
        let mut whole = CovarianceAccumulator::new(4);
        let mut left = CovarianceAccumulator::new(4);
        let mut right = CovarianceAccumulator::new(4);
        for (i, k) in keys.iter().enumerate() {
            whole.accumulate(k).unwrap();
            if i < split { left.accumulate(k).unwrap() } else { right.accumulate(k).unwrap() }
        }
        left.merge(&right).unwrap();
        prop_assert_eq!(left.n_samples(), whole.n_samples());
        prop_assert!(left.sum_outer().sub(whole.sum_outer()).unwrap().max_abs() <= 1e-12);
    }
}
