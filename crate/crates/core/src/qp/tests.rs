use super::*;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings() -> QpSettings {
    QpSettings::default()
}

fn kkt_ok(sol: &QpSolution, tol: f64) {
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!(sol.primal_residual < tol, "primal {}", sol.primal_residual);
    assert!(sol.dual_residual < tol, "dual {}", sol.dual_residual);
    assert!(sol.complementarity < tol, "comp {}", sol.complementarity);
}

#[test]
fn active_lower_bound() {
    let prob = QpProblem::unconstrained(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -2.0)).with_ineq(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 2.0),
        DVector::from_element(1, f64::INFINITY),
    );
    let sol = solve(&prob, &settings(), None).unwrap();
    kkt_ok(&sol, 1e-6);
    assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-5);
    assert!(sol.y_in[0] < 0.0);
}

#[test]
fn symmetric_equality() {
    let prob = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
    let sol = solve(&prob, &settings(), None).unwrap();
    kkt_ok(&sol, 1e-6);
    assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-5);
}

#[test]
fn unconstrained_stationary_point() {
    let prob = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]), DVector::from_row_slice(&[-2.0, -4.0]));
    let sol = solve(&prob, &settings(), None).unwrap();
    kkt_ok(&sol, 1e-6);
    assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-5);
}

/// Random feasible problem: PSD `P` (possibly rank deficient), constraints built around
/// a known interior-ish point `x0`. Returns the problem and `x0`.
pub(crate) fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (QpProblem, DVector<f64>) {
    let rank = rng.random_range(1..=n);
    let g = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose();
    let p = (&p + p.transpose()) * 0.5;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let me = rng.random_range(0..=n / 3);
    let a_eq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let mi = rng.random_range(n / 2..=2 * n);
    let a_in = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let ax = &a_in * &x0;
    let lo = DVector::from_fn(mi, |i, _| if rng.random_bool(0.2) { f64::NEG_INFINITY } else { ax[i] - rng.random_range(0.0..1.0) });
    let hi = DVector::from_fn(mi, |i, _| if rng.random_bool(0.2) { f64::INFINITY } else { ax[i] + rng.random_range(0.0..1.0) });
    // Box on every variable keeps rank-deficient problems bounded.
    let mut a_box = DMatrix::zeros(mi + n, n);
    a_box.rows_mut(0, mi).copy_from(&a_in);
    a_box.view_mut((mi, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let lo = DVector::from_iterator(mi + n, lo.iter().copied().chain(x0.iter().map(|v| v - 3.0)));
    let hi = DVector::from_iterator(mi + n, hi.iter().copied().chain(x0.iter().map(|v| v + 3.0)));
    (QpProblem::unconstrained(p, q).with_eq(a_eq, b_eq).with_ineq(a_box, lo, hi), x0)
}

fn null_space_projector(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let pinv = a.clone().pseudo_inverse(1e-12).unwrap();
    DMatrix::identity(n, n) - pinv * a
}

#[test]
fn random_problems_reach_kkt_tolerance_and_beat_feasible_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..20 {
        let n = rng.random_range(2..=30);
        let (prob, x0) = random_problem(&mut rng, n);
        let sol = solve(&prob, &settings(), None).unwrap();
        kkt_ok(&sol, 1e-6);
        let proj = null_space_projector(&prob.a_eq, n);
        let ax0 = &prob.a_in * &x0;
        for _ in 0..1000 {
            let d = &proj * DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let ad = &prob.a_in * &d;
            let mut t_max = f64::INFINITY;
            for i in 0..ad.len() {
                if ad[i] > 1e-12 {
                    t_max = t_max.min((prob.hi[i] - ax0[i]) / ad[i]);
                } else if ad[i] < -1e-12 {
                    t_max = t_max.min((prob.lo[i] - ax0[i]) / ad[i]);
                }
            }
            let pt = &x0 + d * (rng.random_range(0.0..1.0) * t_max.max(0.0));
            assert!(sol.objective <= prob.objective(&pt) + 1e-7, "trial {trial}");
        }
    }
}

#[test]
fn argmin_is_invariant_to_cost_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let (prob, _) = random_problem(&mut rng, 8);
        let mut scaled = prob.clone();
        scaled.p *= 37.0;
        scaled.q *= 37.0;
        let a = solve(&prob, &settings(), None).unwrap();
        let b = solve(&scaled, &settings(), None).unwrap();
        // Rank-deficient P can have non-unique minimizers; compare objectives there.
        assert_abs_diff_eq!(a.objective * 37.0, b.objective, epsilon = 1e-4 * (1.0 + b.objective.abs()));
        if Cholesky::new(prob.p.clone()).is_some() {
            assert!((a.x - b.x).amax() < 1e-5);
        }
    }
}

#[test]
fn detects_primal_infeasibility() {
    let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let prob = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1)).with_ineq(
        a,
        DVector::from_row_slice(&[2.0, f64::NEG_INFINITY]),
        DVector::from_row_slice(&[f64::INFINITY, 1.0]),
    );
    assert_eq!(solve(&prob, &settings(), None).unwrap().status, QpStatus::Infeasible);

    let eq = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_eq(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), DVector::from_row_slice(&[1.0, 3.0]));
    assert_eq!(solve(&eq, &settings(), None).unwrap().status, QpStatus::Infeasible);
}

#[test]
fn detects_unbounded_objective() {
    let prob = QpProblem::unconstrained(DMatrix::zeros(1, 1), DVector::from_element(1, -1.0)).with_ineq(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        DVector::from_element(1, f64::INFINITY),
    );
    assert_eq!(solve(&prob, &settings(), None).unwrap().status, QpStatus::Unbounded);
}

#[test]
fn rejects_invalid_problems() {
    let nonsym = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
    assert!(solve(&nonsym, &settings(), None).is_err());
    let indefinite = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), DVector::zeros(2));
    assert!(solve(&indefinite, &settings(), None).is_err());
    let shape = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(3));
    assert!(solve(&shape, &settings(), None).is_err());
    let bounds = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1)).with_ineq(
        DMatrix::identity(1, 1),
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 0.0),
    );
    assert!(solve(&bounds, &settings(), None).is_err());
}

#[test]
fn semidefinite_cost_is_accepted() {
    // min x2 subject to 0 <= x <= 1: P = 0 in the second coordinate.
    let prob = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DVector::from_row_slice(&[-0.5, 1.0]))
        .with_ineq(DMatrix::identity(2, 2), DVector::zeros(2), DVector::from_element(2, 1.0));
    let sol = solve(&prob, &settings(), None).unwrap();
    kkt_ok(&sol, 1e-6);
    assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-5);
    assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-5);
}

#[test]
fn warm_start_from_solution_converges_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (prob, _) = random_problem(&mut rng, 20);
    let cold = solve(&prob, &settings(), None).unwrap();
    let warm = WarmStart {
        x: Some(cold.x.clone()),
        y: Some(DVector::from_iterator(cold.y_eq.len() + cold.y_in.len(), cold.y_eq.iter().chain(cold.y_in.iter()).copied())),
    };
    let hot = solve(&prob, &settings(), Some(&warm)).unwrap();
    kkt_ok(&hot, 1e-6);
    assert!(hot.iterations <= cold.iterations);
    assert!((hot.x - cold.x).amax() < 1e-5);
}

#[test]
fn iteration_cap_reports_max_iter() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (prob, _) = random_problem(&mut rng, 25);
    let s = QpSettings {
        max_iter: 3,
        check_every: 1,
        ..settings()
    };
    let sol = solve(&prob, &s, None).unwrap();
    assert_ne!(sol.status, QpStatus::Optimal);
    assert_eq!(sol.iterations, 3);
}

#[test]
fn solve_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (prob, _) = random_problem(&mut rng, 15);
    let a = solve(&prob, &settings(), None).unwrap();
    let b = solve(&prob, &settings(), None).unwrap();
    assert_eq!(a, b);
}
