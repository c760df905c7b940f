use proptest::prelude::*;

use srdfd::analysis::{i_n_functional, state_error};
use srdfd::grid::{Grid, GridFunction, SystemState};
use srdfd::mc::{failure_indicator, pulse_functional, FailureSpec};
use srdfd::noise::{discretize_kernel, project_increments, CovarianceKernel};
use srdfd::operators::{apply_laplacian, sbp_defect, solve_shifted_tridiagonal};
use srdfd::quadrature::GaussLegendre;
use srdfd::sim::Trajectory;

fn grid_values(max_n: usize) -> impl Strategy<Value = (usize, f64, Vec<f64>)> {
    (1..max_n, 0.1f64..50.0).prop_flat_map(|(n, length)| {
        (
            Just(n),
            Just(length),
            prop::collection::vec(-10.0f64..10.0, n + 1),
        )
    })
}

fn gf(n: usize, length: f64, values: Vec<f64>) -> GridFunction {
    GridFunction::new(Grid::new(n, length).unwrap(), values).unwrap()
}

fn dot_h(a: &GridFunction, b: &GridFunction) -> f64 {
    a.grid().spacing()
        * a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .sum::<f64>()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn refinement_keeps_the_interpolant((n, length, values) in grid_values(40), r in 1usize..6) {
        let v = gf(n, length, values);
        let fine = v.refine_interpolant(r).unwrap();
        prop_assert!(close(fine.h_norm_interpolant(), v.h_norm_interpolant(), 1e-12));
        prop_assert!(close(fine.v_seminorm(), v.v_seminorm(), 1e-12));
        for k in 0..=n {
            prop_assert!((fine.values()[k * r] - v.values()[k]).abs() <= 1e-12 * (1.0 + v.values()[k].abs()));
        }
    }

    #[test]
    fn interpolant_norms_match_quadrature((n, length, values) in grid_values(30)) {
        let v = gf(n, length, values);
        let g = *v.grid();
        let rule = GaussLegendre::new(3).unwrap();
        let mut l2 = 0.0;
        let mut grad = 0.0;
        for c in 0..n {
            let (a, b) = (g.node(c), g.node(c + 1));
            let slope = (v.values()[c + 1] - v.values()[c]) / (b - a);
            l2 += rule.integrate(a, b, |x| v.interpolate(x).unwrap().powi(2));
            grad += slope * slope * (b - a);
        }
        prop_assert!(close(v.h_norm_interpolant(), l2.sqrt(), 1e-10));
        prop_assert!(close(v.v_seminorm(), grad.sqrt(), 1e-10));
    }

    #[test]
    fn lp_norm_is_homogeneous((n, length, values) in grid_values(30), c in -5.0f64..5.0, p in 1.0f64..6.0) {
        let v = gf(n, length, values.clone());
        let scaled = gf(n, length, values.iter().map(|x| c * x).collect());
        let expected = c.abs().powf(p) * v.lp_norm(p).unwrap();
        prop_assert!(close(scaled.lp_norm(p).unwrap(), expected, 1e-10));
    }

    #[test]
    fn interpolation_stays_between_neighbours((n, length, values) in grid_values(30), t in 0.0f64..1.0) {
        let v = gf(n, length, values);
        let xi = t * length;
        let y = v.interpolate(xi).unwrap();
        let c = ((xi / v.grid().spacing()) as usize).min(n - 1);
        let (a, b) = (v.values()[c], v.values()[c + 1]);
        prop_assert!(y >= a.min(b) - 1e-12 && y <= a.max(b) + 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric_and_nonpositive(
        (n, length, values) in grid_values(64),
        other in prop::collection::vec(-10.0f64..10.0, 64),
    ) {
        let v = gf(n, length, values);
        let u = gf(n, length, other[..=n].to_vec());
        let (av, au) = (apply_laplacian(&v), apply_laplacian(&u));
        let scale = dot_h(&av, &av).sqrt() * dot_h(&u, &u).sqrt()
            + dot_h(&au, &au).sqrt() * dot_h(&v, &v).sqrt() + 1e-300;
        prop_assert!((dot_h(&av, &u) - dot_h(&v, &au)).abs() <= 1e-12 * scale);
        prop_assert!(sbp_defect(&v, &u).unwrap().abs() <= 1e-11 * scale);
        prop_assert!(dot_h(&av, &v) <= 1e-12 * scale);
    }

    #[test]
    fn constants_span_the_null_space(n in 1usize..64, length in 0.1f64..50.0, c in -100.0f64..100.0) {
        let v = GridFunction::constant(Grid::new(n, length).unwrap(), c).unwrap();
        prop_assert!(apply_laplacian(&v).values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn shifted_solve_has_small_residual((n, length, values) in grid_values(200), mu in 0.0f64..10.0) {
        let rhs = gf(n, length, values);
        let x = solve_shifted_tridiagonal(mu, &rhs).unwrap();
        let ax = apply_laplacian(&x);
        let size = rhs.values().iter().map(|r| r.abs()).fold(1.0, f64::max);
        for k in 0..=n {
            let residual = x.values()[k] - mu * ax.values()[k] - rhs.values()[k];
            prop_assert!(residual.abs() <= 1e-10 * size, "k={} residual={}", k, residual);
        }
    }

    #[test]
    fn projection_composes(z in prop::collection::vec(-4.0f64..4.0, 1..8), r1 in 1usize..5, r2 in 1usize..5) {
        let blocks = z.len();
        let fine: Vec<f64> = (0..blocks * r1 * r2).map(|i| z[i % blocks] * (1.0 + i as f64 * 0.01)).collect();
        let two_step = project_increments(&project_increments(&fine, r1).unwrap(), r2).unwrap();
        let one_step = project_increments(&fine, r1 * r2).unwrap();
        for (a, b) in two_step.iter().zip(&one_step) {
            prop_assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constant_kernel_couples_exactly(
        coarse_n in 1usize..12,
        r in 1usize..5,
        c in 0.1f64..3.0,
        dt in 1e-4f64..1.0,
        seed in any::<u64>(),
    ) {
        let coarse = Grid::new(coarse_n, 2.0).unwrap();
        let fine = coarse.refined(r).unwrap();
        let kernel = CovarianceKernel::constant(c);
        let qf = discretize_kernel(&kernel, &fine, 2).unwrap();
        let qc = discretize_kernel(&kernel, &coarse, 2).unwrap();
        let z: Vec<f64> = (0..fine.n())
            .map(|i| ((seed.wrapping_add(i as u64 * 7919)) % 1000) as f64 / 250.0 - 2.0)
            .collect();
        let mut df = vec![0.0; fine.node_count()];
        let mut dc = vec![0.0; coarse.node_count()];
        qf.increments_from_normals(&z, dt, &mut df);
        qc.increments_from_normals(&project_increments(&z, r).unwrap(), dt, &mut dc);
        for k in 1..=coarse_n {
            prop_assert!((dc[k] - df[k * r]).abs() <= 1e-13 * (1.0 + df[k * r].abs()));
        }
    }

    #[test]
    fn pulse_functional_is_affine(
        (n, length, values) in grid_values(40),
        other in prop::collection::vec(-10.0f64..10.0, 40),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        v_star in -2.0f64..2.0,
    ) {
        let v = gf(n, length, values.clone());
        let u = gf(n, length, other[..=n].to_vec());
        let combo = gf(n, length, values.iter().zip(u.values()).map(|(x, y)| a * x + b * y).collect());
        let expected = a * pulse_functional(&v, 0.0) + b * pulse_functional(&u, 0.0);
        prop_assert!(close(pulse_functional(&combo, 0.0), expected, 1e-10));
        prop_assert!(close(pulse_functional(&v, v_star), pulse_functional(&v, 0.0) - length * v_star, 1e-10));
    }

    #[test]
    fn failure_is_monotone_in_kappa(
        phi in prop::collection::vec(-5.0f64..40.0, 1..30),
        kappa in 0.5f64..20.0,
        bump in 0.0f64..10.0,
    ) {
        let times: Vec<f64> = (0..phi.len()).map(|i| i as f64).collect();
        let traj = Trajectory {
            horizon: *times.last().unwrap(),
            min_phi_after_t0: phi.iter().copied().fold(f64::INFINITY, f64::min),
            times,
            phi_series: phi,
            snapshots: Vec::new(),
            energy: Vec::new(),
            observe_from: 0.0,
        };
        let low = FailureSpec {
            kappa,
            epsilon: 0.1 * kappa,
            observe_from: 0.0,
            confidence_alpha: 0.05,
            c_hat: 1.0,
            samples: 1,
        };
        let high = FailureSpec { kappa: kappa + bump, ..low };
        if failure_indicator(&traj, &low).unwrap() {
            prop_assert!(failure_indicator(&traj, &high).unwrap());
        }
    }

    #[test]
    fn lifted_coarse_states_have_zero_error(
        (n, length, values) in grid_values(20),
        r in 1usize..5,
        offset in -3.0f64..3.0,
    ) {
        let v = gf(n, length, values.clone());
        let w = gf(n, length, values.iter().map(|x| 0.5 * x - 1.0).collect());
        let coarse = SystemState::new(v.clone(), w.clone()).unwrap();
        let fine = SystemState::new(v.refine_interpolant(r).unwrap(), w.refine_interpolant(r).unwrap()).unwrap();
        prop_assert!(state_error(&coarse, &fine).unwrap() <= 1e-12 * (1.0 + v.h_norm_interpolant()));
        // A constant shift of v alone is measured exactly.
        let shifted = GridFunction::new(
            *fine.grid(),
            fine.v.values().iter().map(|x| x + offset).collect(),
        ).unwrap();
        let moved = SystemState::new(shifted, fine.w.clone()).unwrap();
        let expected = offset.abs() * length.sqrt();
        prop_assert!(close(state_error(&coarse, &moved).unwrap(), expected, 1e-9));
    }

    #[test]
    fn i_n_is_bounded_by_the_derivative_norm(
        knots in prop::collection::vec(-5.0f64..5.0, 17),
        n in 1usize..80,
    ) {
        // Piecewise-linear phi on 16 cells of [0, 1]; its derivative is piecewise constant.
        let cells = 16usize;
        let slopes: Vec<f64> = knots.windows(2).map(|k| (k[1] - k[0]) * cells as f64).collect();
        let dphi = |x: f64| slopes[((x * cells as f64) as usize).min(cells - 1)];
        let v_norm = (slopes.iter().map(|s| s * s).sum::<f64>() / cells as f64).sqrt();
        prop_assert!(i_n_functional(dphi, n, 1.0) <= 4.0 * v_norm + 1e-9);
    }
}
