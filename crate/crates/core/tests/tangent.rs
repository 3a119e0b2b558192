mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use roughfk_core::field::{Profile, RidgeField};
use roughfk_core::presets::DriverKind;
use roughfk_core::rsde::{solve_rsde, HybridPathEnsemble};
use roughfk_core::tangent::*;
use roughfk_core::{Error, RoughPath, SmoothPath};

fn shifted_solver<'a>(
    dy: &'a roughfk_core::feynman_kac::Dynamics,
    x0: &'a [f64],
    w: &'a RoughPath,
    bs: &'a roughfk_core::rsde::BrownianSample,
) -> impl Fn(&[f64]) -> roughfk_core::Result<HybridPathEnsemble> + 'a {
    move |d: &[f64]| {
        let x: Vec<f64> = x0.iter().zip(d).map(|(a, b)| a + b).collect();
        solve_rsde(dy, &x, w, 0.0, w.steps(), bs)
    }
}

#[test]
fn constant_beta_tangent_is_the_direction() {
    let w = driver(DriverKind::BrownianIto, 1, 32, 1);
    let dy = scalar_dynamics(zero1("b"), zero1("s"), RidgeField::new("beta", 1, 1).constant(0, 0.7));
    let base = solve_rsde(&dy, &[0.4], &w, 0.0, 32, &brownian(5, 1, 32, w.dt(), 1)).unwrap();
    let y = first_variation_basis(&base, &dy, &w).unwrap();
    for p in 0..5 {
        for k in 0..=32 {
            assert_eq!(y.value(p, k), &[1.0]);
        }
    }
    let z = second_variation(&base, &y, &dy, &w, &[(0, 0)]).unwrap();
    assert!((0..5).all(|p| z.terminal_column(p, 0)[0] == 0.0));
}

#[test]
fn multiplicative_tangent_matches_closed_form() {
    let w = SmoothPath::Sin.lift(1, 1.0, 512, 4).unwrap();
    let dy = scalar_dynamics(zero1("b"), zero1("s"), RidgeField::new("beta", 1, 1).linear(0, 0, 1.0));
    let base = solve_rsde(&dy, &[0.8], &w, 0.0, 512, &brownian(1, 1, 512, w.dt(), 1)).unwrap();
    let y = first_variation_basis(&base, &dy, &w).unwrap();
    let want = 1.0f64.sin().exp();
    assert!((y.terminal_column(0, 0)[0] / want - 1.0).abs() <= 1e-3);
}

#[test]
fn gbm_tangent_is_the_normalized_solution() {
    let w = Arc::new(RoughPath::zero(1, 1.0, 128).unwrap());
    let p = preset_on("gbm", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let base = solve_rsde(dy, &[1.7], &w, 0.0, 128, &brownian(50, 1, 128, w.dt(), 3)).unwrap();
    let y = first_variation_basis(&base, dy, &w).unwrap();
    for q in 0..50 {
        let r = y.terminal_column(q, 0)[0] - base.terminal(q)[0] / 1.7;
        assert!(r.abs() <= 1e-10);
    }
    let z = second_variation(&base, &y, dy, &w, &[(0, 0)]).unwrap();
    assert!((0..50).all(|q| z.terminal_column(q, 0)[0] == 0.0), "affine coefficients");
    let solve = shifted_solver(dy, &[1.7], &w, base.brownian());
    assert!(fd_check(&solve, &y, 0, 1e-3).unwrap().max_abs <= 1e-8);
}

#[test]
fn second_variation_matches_second_differences() {
    let w = Arc::new(RoughPath::zero(1, 1.0, 64).unwrap());
    let dy = scalar_dynamics(
        RidgeField::new("b", 1, 1).coordinate(0, 0, 1.0, Profile::Sin),
        RidgeField::new("s", 1, 1).constant(0, 0.3),
        zero1("beta"),
    );
    let bs = brownian(500, 1, 64, w.dt(), 7);
    let base = solve_rsde(&dy, &[0.5], &w, 0.0, 64, &bs).unwrap();
    let y = first_variation_basis(&base, &dy, &w).unwrap();
    let z = second_variation(&base, &y, &dy, &w, &[(0, 0)]).unwrap();
    let rep = fd_check(shifted_solver(&dy, &[0.5], &w, &bs), &z, 0, 1e-2).unwrap();
    assert!(rep.mean_relative <= 5e-2, "{rep:?}");
}

#[test]
fn tanh_tangent_matches_central_differences() {
    let w = driver(DriverKind::BrownianIto, 2, 32, 2);
    let p = preset_on("tanh", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let bs = brownian(10_000, 2, 32, w.dt(), 3);
    let x0 = [0.3, -0.2];
    let base = solve_rsde(dy, &x0, &w, 0.0, 32, &bs).unwrap();
    let y = first_variation_basis(&base, dy, &w).unwrap();
    for c in 0..2 {
        let rep = fd_check(shifted_solver(dy, &x0, &w, &bs), &y, c, 1e-2).unwrap();
        assert!(rep.mean_relative <= 2e-2, "{rep:?}");
    }
}

#[test]
fn fd_error_curve_is_v_shaped() {
    let w = driver(DriverKind::BrownianIto, 2, 32, 2);
    let p = preset_on("tanh", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let bs = brownian(200, 2, 32, w.dt(), 3);
    let x0 = [0.3, -0.2];
    let base = solve_rsde(dy, &x0, &w, 0.0, 32, &bs).unwrap();
    let y = first_variation_basis(&base, dy, &w).unwrap();
    let solve = shifted_solver(dy, &x0, &w, &bs);
    let hs: Vec<f64> = (1..=9).map(|e| 10f64.powi(-e)).collect();
    let errs: Vec<f64> = hs.iter().map(|&h| fd_error(&solve, &y, 0, h).unwrap().mean_relative).collect();
    let best = (0..errs.len()).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
    assert!(errs[..=best].windows(2).all(|p| p[1] < p[0]), "{errs:?}");
    assert!(errs[best..].windows(2).all(|p| p[1] > p[0]), "{errs:?}");
    // Truncation only: the discrete tangent differentiates the scheme exactly,
    // so the optimum sits near the cube root of machine epsilon.
    assert!((1e-6..=1e-2).contains(&hs[best]), "optimum at {}", hs[best]);
    assert!(matches!(fd_check(&solve, &y, 0, 1e-5), Err(Error::StepTooSmall { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn second_variation_is_symmetric(seed in 0u64..1000) {
        let w = driver(DriverKind::BrownianIto, 2, 16, seed);
        let p = preset_on("full_hybrid", &[], &w, 0.45);
        let dy = &p.coefficients.dynamics;
        let base = solve_rsde(dy, &[0.1, 0.2], &w, 0.0, 16, &brownian(4, 2, 16, w.dt(), seed)).unwrap();
        let y = first_variation_basis(&base, dy, &w).unwrap();
        let z = second_variation(&base, &y, dy, &w, &[(0, 1), (1, 0)]).unwrap();
        for q in 0..4 {
            for k in 0..=16 {
                let (a, b) = (z.column(q, k, 0), z.column(q, k, 1));
                for i in 0..2 {
                    prop_assert!((a[i] - b[i]).abs() <= 1e-12);
                }
            }
        }
    }
}
