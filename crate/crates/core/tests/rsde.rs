mod common;

use std::sync::Arc;

use common::*;
use roughfk_core::controlled::ControlledSample;
use roughfk_core::field::RidgeField;
use roughfk_core::mcstats::{mean_stderr, tags, SeedLedger};
use roughfk_core::presets::DriverKind;
use roughfk_core::rsde::*;
use roughfk_core::{RoughPath, SmoothPath};

fn multiplicative() -> roughfk_core::feynman_kac::Dynamics {
    scalar_dynamics(zero1("b"), zero1("s"), RidgeField::new("beta", 1, 1).linear(0, 0, 1.0))
}

#[test]
fn gbm_mean_matches_closed_form() {
    let w = Arc::new(RoughPath::zero(1, 1.0, 256).unwrap());
    let p = preset_on("gbm", &[], &w, 0.45);
    let noise = NoiseSpec::new(SeedLedger::new(8), tags::BROWNIAN);
    let xt = terminal_values(&p.coefficients.dynamics, &[1.0], &w, 0.0, 256, &noise, 100_000).unwrap();
    let (mean, se) = mean_stderr(&xt);
    let exact = (0.05f64).exp();
    assert!((mean - exact).abs() <= 3.0 * se, "{mean} ± {se} vs {exact}");
}

#[test]
fn multiplicative_rde_converges_to_exponential() {
    let dy = multiplicative();
    let err = |n: usize| {
        let w = SmoothPath::Sin.lift(1, 1.0, n, 4).unwrap();
        let ens = solve_rsde(&dy, &[0.7], &w, 0.0, n, &brownian(1, 1, n, w.dt(), 1)).unwrap();
        (ens.terminal(0)[0] - 0.7 * 1.0f64.sin().exp()).abs()
    };
    let ratio = err(256) / err(512);
    assert!(ratio >= 1.9, "ratio {ratio}");
}

#[test]
fn constant_beta_transport_has_no_davie_remainder() {
    let w = driver(DriverKind::BrownianIto, 1, 256, 3);
    let dy = scalar_dynamics(zero1("b"), zero1("s"), RidgeField::new("beta", 1, 1).constant(0, 1.3));
    let ens = solve_rsde(&dy, &[0.0], &w, 0.0, 256, &brownian(4, 1, 256, w.dt(), 2)).unwrap();
    assert!(davie_remainder_scaling(&ens, &dy, &w, 2, 2).unwrap().vanishes(1e-12));
}

#[test]
fn gbm_davie_remainder_is_first_order() {
    let w = Arc::new(RoughPath::zero(1, 1.0, 1024).unwrap());
    let p = preset_on("gbm", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let ens = solve_rsde(dy, &[1.0], &w, 0.0, 1024, &brownian(400, 1, 1024, w.dt(), 5)).unwrap();
    let r = davie_remainder_scaling(&ens, dy, &w, 4, 2).unwrap();
    assert!(r.moment_slope.unwrap().slope >= 1.0 - 0.15, "{:?}", r.moment_slope);
}

#[test]
fn full_hybrid_davie_remainder_on_stratonovich_lift() {
    let w = driver(DriverKind::BrownianStrat, 2, 512, 7);
    let p = preset_on("full_hybrid", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let ens = solve_rsde(dy, &[0.3, -0.2], &w, 0.0, 512, &brownian(300, 2, 512, w.dt(), 6)).unwrap();
    let r = davie_remainder_scaling(&ens, dy, &w, 4, 2).unwrap();
    assert!(r.moment_slope.unwrap().slope >= 0.9 - 0.15, "{:?}", r.moment_slope);
}

#[test]
fn linear_rsde_forcing_homogeneity_and_closed_form() {
    let w = driver(DriverKind::BrownianStrat, 1, 128, 12);
    let bs = brownian(3, 1, 128, w.dt(), 3);
    let xi = [0.5, -1.0, 2.0];
    let mut ls = LinearSystem::zero(1, 1, 1);
    ls.forcing = Some(ControlledSample::from_driver(&w));
    let forced = solve_linear_rsde(&ls, &xi, &w, 128, &bs).unwrap();
    for p in 0..3 {
        for k in 0..=128 {
            assert!((forced.x(p, k)[0] - (xi[p] + w.value(k)[0])).abs() <= 1e-12);
        }
    }

    let mut ls = LinearSystem::zero(1, 1, 1);
    ls.g = vec![0.3];
    ls.s = vec![0.4];
    ls.f = vec![0.8];
    ls.fp = vec![0.1];
    let one = solve_linear_rsde(&ls, &xi, &w, 128, &bs).unwrap();
    let two = solve_linear_rsde(&ls, &xi.map(|v| 2.0 * v), &w, 128, &bs).unwrap();
    for p in 0..3 {
        for k in 0..=128 {
            assert!((two.x(p, k)[0] - 2.0 * one.x(p, k)[0]).abs() <= 1e-12 * (1.0 + one.x(p, k)[0].abs()));
        }
    }

    let err = |n: usize| {
        let w = SmoothPath::Sin.lift(1, 1.0, n, 4).unwrap();
        let mut ls = LinearSystem::zero(1, 1, 1);
        ls.f = vec![0.6];
        let y = solve_linear_rsde(&ls, &[1.5], &w, n, &brownian(1, 1, n, w.dt(), 1)).unwrap();
        (y.terminal(0)[0] - 1.5 * (0.6 * 1.0f64.sin()).exp()).abs()
    };
    let (e1, e2) = (err(128), err(256));
    assert!(e2 <= 1e-3 && e1 / e2 >= 1.5, "{e1} {e2}");
}

#[test]
fn solutions_are_locally_lipschitz() {
    let w = driver(DriverKind::BrownianStrat, 2, 128, 1);
    let p = preset_on("full_hybrid", &[], &w, 0.45);
    let dy = &p.coefficients.dynamics;
    let bs = brownian(200, 2, 128, w.dt(), 4);
    let base = solve_rsde(dy, &[0.3, -0.2], &w, 0.0, 128, &bs).unwrap();
    let same = solve_rsde(dy, &[0.3, -0.2], &w, 0.0, 128, &bs).unwrap();
    assert_eq!(stability_probe(&base, &same, 2, None).unwrap().distance, 0.0);

    let in_x0 = |h: f64| {
        let e = solve_rsde(dy, &[0.3 + h, -0.2], &w, 0.0, 128, &bs).unwrap();
        stability_probe(&base, &e, 2, None).unwrap().distance / h
    };
    let r = in_x0(1e-2) / in_x0(1e-3);
    assert!((1.0 / 1.5..=1.5).contains(&r), "x0 ratio {r}");

    // The coefficients are fixed on `w`; only the rough integration sees the
    // perturbed driver.
    let v = SmoothPath::Sin.lift(2, 1.0, 128, 4).unwrap();
    let in_driver = |eps: f64| {
        let b = w.translate(&v, eps).unwrap();
        let e = solve_rsde(dy, &[0.3, -0.2], &b, 0.0, 128, &bs).unwrap();
        let rep = stability_probe(&base, &e, 2, Some((&w, &b, 0.45))).unwrap();
        rep.distance / rep.driver_distance.unwrap().total
    };
    let r = in_driver(1e-2) / in_driver(1e-3);
    assert!((0.5..=2.0).contains(&r), "driver ratio {r}");
}
