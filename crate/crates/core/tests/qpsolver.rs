mod support;

use ihpm_core::dispatch::build_ihpd;
use ihpm_core::qpsolver::{self, kkt_report, solve_lp, solve_qp, QuadraticProgram, SolveStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = qpsolver::DEFAULT_TOL;
const ITER: usize = qpsolver::DEFAULT_MAX_ITER;

struct BoxQp {
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// PSD `Q = B'B` with `B` of random rank, box constraints around the origin.
fn random_box_qp(seed: u64) -> BoxQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let k = rng.random_range(1..=n);
    let b: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let q = (0..n).map(|i| (0..n).map(|j| (0..k).map(|r| b[r][i] * b[r][j]).sum()).collect()).collect();
    let c = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..0.0)).collect();
    let hi = lo.iter().map(|l| l + rng.random_range(0.5..5.0)).collect();
    BoxQp { q, c, lo, hi }
}

fn to_program(p: &BoxQp) -> QuadraticProgram {
    let n = p.c.len();
    let mut qp = QuadraticProgram::new(n);
    qp.q = DMatrix::from_fn(n, n, |i, j| p.q[i][j]);
    qp.c = DVector::from_vec(p.c.clone());
    for i in 0..n {
        qp.add_ineq(format!("x{i}<=hi"), &[(i, 1.0)], p.hi[i]);
        qp.add_ineq(format!("x{i}>=lo"), &[(i, -1.0)], -p.lo[i]);
    }
    qp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_qp_matches_grid_oracle(seed in any::<u64>()) {
        let p = random_box_qp(seed);
        let sol = solve_qp(&to_program(&p), TOL, ITER).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = support::box_qp_oracle(&p.q, &p.c, &p.lo, &p.hi);
        let rel = (sol.objective - oracle).abs() / oracle.abs().max(1.0);
        prop_assert!(rel <= 1e-4, "solver {} oracle {} rel {:e}", sol.objective, oracle, rel);
    }

    #[test]
    fn optimal_solutions_pass_independent_kkt_check(seed in any::<u64>()) {
        let p = random_box_qp(seed);
        let qp = to_program(&p);
        let sol = solve_qp(&qp, TOL, ITER).unwrap();
        prop_assert!(kkt_report(&qp, &sol.x, &sol.y, &sol.z).max() <= TOL);
        prop_assert!(sol.z.iter().all(|&z| z >= -1e-9));
    }

    #[test]
    fn inequality_duals_price_the_bounds(seed in any::<u64>()) {
        let p = random_box_qp(seed);
        let qp = to_program(&p);
        let sol = solve_qp(&qp, TOL, ITER).unwrap();
        let delta = 1e-3;
        for k in 0..qp.n_ineq() {
            // Nondegenerate active rows only.
            if sol.z[k] < 1e-2 {
                continue;
            }
            // Central difference cancels the curvature of the value function.
            let mut up = qp.clone();
            up.u[k] += delta;
            let mut down = qp.clone();
            down.u[k] -= delta;
            let up = solve_qp(&up, TOL, ITER).unwrap();
            let down = solve_qp(&down, TOL, ITER).unwrap();
            let change = (up.objective - down.objective) / 2.0;
            let predicted = -sol.z[k] * delta;
            prop_assert!(
                (change - predicted).abs() <= 0.05 * predicted.abs(),
                "row {}: change {:e} predicted {:e}", k, change, predicted
            );
        }
    }

    #[test]
    fn lp_strong_duality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let mi = rng.random_range(1..=5);
        let me = rng.random_range(0..=1);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..4.0)).collect();
        let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let mut g = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
        let mut u = DVector::from_fn(mi, |i, _| (0..n).map(|j| g[(i, j)] * x0[j]).sum::<f64>() + rng.random_range(0.1..2.0));
        // Box 0 <= x <= 5 keeps the LP bounded.
        for j in 0..n {
            for (coef, rhs) in [(1.0, 5.0), (-1.0, 0.0)] {
                let row = g.nrows();
                g = g.insert_row(row, 0.0);
                g[(row, j)] = coef;
                u = u.push(rhs);
            }
        }
        let a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(me, |i, _| (0..n).map(|j| a[(i, j)] * x0[j]).sum::<f64>());
        let sol = solve_lp(c.clone(), a, b.clone(), g, u.clone(), TOL, ITER).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let primal = c.dot(&sol.x);
        let dual = -b.dot(&sol.y) - u.dot(&sol.z);
        // primal - dual = rd'x - y'rp + z's exactly, so the gap is bounded by the KKT tolerance
        // scaled by |x|_1 + |y|_1 + (number of inequality rows).
        let bound = TOL * (sol.x.abs().sum() + sol.y.abs().sum() + u.len() as f64);
        prop_assert!((primal - dual).abs() <= bound, "primal {} dual {} bound {:e}", primal, dual, bound);
    }
}

#[test]
fn lp_with_equality_reports_signed_dual() {
    // minimize x0 + 2 x1 subject to x0 + x1 = 3, x >= 0: x = (3, 0), y = -1.
    let mut qp = QuadraticProgram::new(2);
    qp.c = DVector::from_vec(vec![1.0, 2.0]);
    qp.add_eq("sum", &[(0, 1.0), (1, 1.0)], 3.0);
    qp.add_ineq("x0>=0", &[(0, -1.0)], 0.0);
    qp.add_ineq("x1>=0", &[(1, -1.0)], 0.0);
    let sol = solve_qp(&qp, TOL, ITER).unwrap();
    assert!((sol.x[0] - 3.0).abs() < 1e-6 && sol.x[1].abs() < 1e-6);
    assert!((sol.y[0] + 1.0).abs() < 1e-6);
    assert!((sol.z[1] - 1.0).abs() < 1e-6);
}

#[test]
fn summer_dispatch_program_is_complementary() {
    let qp = build_ihpd(&support::fixture("summer")).unwrap();
    let sol = solve_qp(&qp, TOL, ITER).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let report = kkt_report(&qp, &sol.x, &sol.y, &sol.z);
    assert!(report.complementarity <= 1e-6, "{report:?}");
    // Power balance is row 0, written as demand minus supply; its dual is the electricity price.
    assert!((sol.y[0] - 30.0).abs() < 0.01, "y0 = {}", sol.y[0]);
}

#[test]
fn infeasible_lp_is_certified() {
    // x0 + x1 <= 1 and x0 + x1 >= 3.
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]);
    let u = DVector::from_vec(vec![1.0, -3.0]);
    let sol = solve_lp(DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0), g, u, TOL, ITER).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}
