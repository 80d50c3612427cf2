use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rdlab::expr::parse_nonlinearity;
use rdlab::recursion::{delta_lambda, geometric_schedule, spectral_projections, IterDirection};
use rdlab::stepper::{evolve, StepperConfig};
use rdlab::zeroes::{zero_count, DEFAULT_ZERO_TOL};
use rdlab::{CircleGrid, StateVector};

const CATALOG: [&str; 5] = [
    "0",
    "2*u - u^3",
    "(2 + 0.5*cos(2*pi*t/T))*u - u^3",
    "u - u^3 + 0.1*p",
    "-u^3 + 0.2*cos(2*pi*t/T)",
];

fn trig(grid: &CircleGrid, a: &[f64], b: &[f64]) -> StateVector {
    StateVector::from_fn(grid, |x| {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(k, (ak, bk))| ak * (k as f64 * x).cos() + bk * (k as f64 * x).sin())
            .sum()
    })
}

fn coeffs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0..1.0f64, n), prop::collection::vec(-1.0..1.0f64, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_is_linear((a1, b1) in coeffs(10), (a2, b2) in coeffs(10), s in -3.0..3.0f64, r in -3.0..3.0f64) {
        let g = CircleGrid::new(64).unwrap();
        let u = trig(&g, &a1, &b1);
        let v = trig(&g, &a2, &b2);
        for order in 1..=2 {
            let lhs = u.lin_comb(s, &v, r).unwrap().spectral_derivative(order).unwrap();
            let rhs = u.spectral_derivative(order).unwrap().lin_comb(s, &v.spectral_derivative(order).unwrap(), r).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-12 * (1.0 + rhs.sup_norm()) * 100.0);
        }
    }

    #[test]
    fn alpha_zero_norm_is_twice_l2((a, b) in coeffs(12)) {
        let g = CircleGrid::new(64).unwrap();
        let u = trig(&g, &a, &b);
        let l2 = u.l2_norm();
        prop_assert!((u.fractional_norm(0.0) - 2.0 * l2).abs() <= 1e-10 * (1.0 + l2));
    }

    #[test]
    fn fractional_norm_grows_with_alpha((a, b) in coeffs(12), lo in 0.0..1.0f64, step in 0.0..0.5f64) {
        let g = CircleGrid::new(64).unwrap();
        let mut a = a;
        a[0] = 0.0;
        let u = trig(&g, &a, &b);
        prop_assert!(u.fractional_norm(lo + step) >= u.fractional_norm(lo) * (1.0 - 1e-12));
    }

    #[test]
    fn refine_preserves_fractional_norm((a, b) in coeffs(12), alpha in 0.0..1.0f64) {
        let g = CircleGrid::new(32).unwrap();
        let u = trig(&g, &a, &b);
        let fine = u.refine(128).unwrap();
        let (n0, n1) = (u.fractional_norm(alpha), fine.fractional_norm(alpha));
        prop_assert!((n0 - n1).abs() <= 1e-10 * n0.max(1.0));
    }

    #[test]
    fn zero_counts_are_even_and_refinement_stable((a, b) in coeffs(9)) {
        let g = CircleGrid::new(64).unwrap();
        let u = trig(&g, &a, &b);
        prop_assume!(u.sup_norm() > 1e-3);
        let z = zero_count(&u, DEFAULT_ZERO_TOL).unwrap();
        prop_assert_eq!(z.count % 2, 0);
        prop_assume!(!z.is_flagged());
        let zf = zero_count(&u.refine(256).unwrap(), DEFAULT_ZERO_TOL).unwrap();
        prop_assert_eq!(z.count, zf.count);
    }

    #[test]
    fn single_mode_has_2j_zeros(j in 1usize..8, theta in 0.0..(2.0 * PI), amp in 0.1..10.0f64) {
        let g = CircleGrid::new(64).unwrap();
        let u = StateVector::from_fn(&g, |x| amp * (j as f64 * x + theta).cos());
        prop_assert_eq!(zero_count(&u, DEFAULT_ZERO_TOL).unwrap().count, 2 * j);
    }

    #[test]
    fn catalog_partials_match_finite_differences(t in 0.0..1.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
        let h = 1e-6;
        for src in CATALOG {
            let nl = parse_nonlinearity(src, 1.0).unwrap();
            let fy = (nl.f(t, y + h, z) - nl.f(t, y - h, z)) / (2.0 * h);
            let fz = (nl.f(t, y, z + h) - nl.f(t, y, z - h)) / (2.0 * h);
            prop_assert!((nl.df_dy(t, y, z) - fy).abs() <= 1e-6 * fy.abs().max(1.0), "{src}");
            prop_assert!((nl.df_dz(t, y, z) - fz).abs() <= 1e-6 * fz.abs().max(1.0), "{src}");
        }
    }

    #[test]
    fn catalog_expressions_are_periodic(t in -5.0..5.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
        for src in CATALOG {
            let nl = parse_nonlinearity(src, 1.0).unwrap();
            prop_assert!((nl.f(t + 1.0, y, z) - nl.f(t, y, z)).abs() <= 1e-12 * (1.0 + y.abs().powi(3)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constant_data_stays_constant(c in -3.0..3.0f64) {
        let g = CircleGrid::new(32).unwrap();
        let nl = parse_nonlinearity("(2 + 0.5*cos(2*pi*t/T))*u - u^3", 1.0).unwrap();
        let traj = evolve(&StateVector::constant(&g, c), &nl, &StepperConfig::default(), 0.0, 1.0).unwrap();
        for s in &traj.states {
            let m = s.mean();
            prop_assert!(s.values().iter().all(|v| (v - m).abs() <= 1e-10));
        }
    }

    #[test]
    fn even_data_stays_even(a in prop::collection::vec(-1.0..1.0f64, 5)) {
        let g = CircleGrid::new(64).unwrap();
        let nl = parse_nonlinearity("2*u - u^3", 1.0).unwrap();
        let zeros = vec![0.0; a.len()];
        let u0 = trig(&g, &a, &zeros);
        let u1 = evolve(&u0, &nl, &StepperConfig::default(), 0.0, 1.0).unwrap().last().clone();
        let mirrored = StateVector::from_fn(&g, |x| u1.interpolate(-x).unwrap());
        prop_assert!(u1.sub(&mirrored).unwrap().sup_norm() <= 1e-8);
    }

    #[test]
    fn delta_is_homogeneous_in_scale(scale in 1e-4..1e-2f64, factor in 0.1..10.0f64) {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        let gap = spectral_projections(&s, 1.0).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 0.4, 0.2]);
        let base = delta_lambda(&gap, &geometric_schedule(m.clone(), scale, 0.8), 1.0, IterDirection::Forward, 40).unwrap();
        let scaled = delta_lambda(&gap, &geometric_schedule(m, scale * factor, 0.8), 1.0, IterDirection::Forward, 40).unwrap();
        prop_assert!((scaled.value - factor * base.value).abs() <= 1e-10 * scaled.value.max(1e-300));
    }
}
