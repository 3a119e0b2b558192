mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use roughfk_core::feynman_kac::*;
use roughfk_core::mesh::Mesh;
use roughfk_core::presets::DriverKind;
use roughfk_core::{RoughPath, SmoothPath};

fn heat(w: &Arc<RoughPath>, sigma: f64) -> CoefficientSet {
    preset_on("heat", &[("sigma", sigma)], w, 0.45).coefficients
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn weight_exponents_are_exact_for_constant_coefficients() {
    let w = driver(DriverKind::BrownianIto, 1, 64, 1);
    let free = heat(&w, 1.0);
    for (x, i) in propagate(&free, &w, 8, 56, &[0.1], &mc(20, 1)).unwrap() {
        assert!(x[0].is_finite() && i == 0.0);
    }
    let c = preset_on("exp_weight", &[("c", 0.7)], &w, 0.45).coefficients;
    for (_, i) in propagate(&c, &w, 16, 48, &[0.0], &mc(20, 1)).unwrap() {
        assert!((i - 0.7 * 0.75).abs() <= 1e-12);
    }
    let g = preset_on("rough_weight", &[("gamma", 0.5)], &w, 0.45).coefficients;
    let dw = w.value(64)[0] - w.value(16)[0];
    for (_, i) in propagate(&g, &w, 16, 48, &[0.0], &mc(20, 1)).unwrap() {
        assert!((i - 0.5 * dw).abs() <= 1e-12);
    }
}

#[test]
fn terminal_time_needs_no_simulation() {
    let w = driver(DriverKind::BrownianIto, 1, 16, 1);
    let e = estimate(&heat(&w, 1.0), &w, 16, &[0.4], 2, &mc(100, 1)).unwrap();
    assert_eq!(e.u, 0.4f64.cos());
    assert_eq!(e.grad, vec![-(0.4f64.sin())]);
    assert_eq!(e.hess, vec![-(0.4f64.cos())]);
    assert!(e.u_se == 0.0 && e.grad_se[0] == 0.0 && e.hess_se[0] == 0.0);
}

#[test]
fn heat_kernel_value_and_derivatives() {
    let w = driver(DriverKind::BrownianIto, 1, 64, 1);
    let cs = heat(&w, 1.0);
    let e = estimate(&cs, &w, 0, &[0.3], 2, &mc(100_000, 5)).unwrap();
    let k = (-0.5f64).exp();
    assert!((e.u - 0.3f64.cos() * k).abs() <= 3.0 * e.u_se + 1e-2);
    assert!((e.grad[0] + 0.3f64.sin() * k).abs() <= 3.0 * e.grad_se[0] + 1e-2);
    assert!((e.hess[0] + 0.3f64.cos() * k).abs() <= 3.0 * e.hess_se[0] + 2e-2);
}

#[test]
fn transport_is_exact_and_free_scenario_is_g() {
    let w = driver(DriverKind::BrownianStrat, 1, 64, 2);
    let p = preset_on("transport", &[], &w, 0.45);
    for s in [0, 20, 63] {
        let (u, se) = estimate_u(&p.coefficients, &w, s, &[0.2], &mc(3, 1)).unwrap();
        let exact = p.closed_form(&w, s, &[0.2]).unwrap();
        assert!((u - exact).abs() <= 1e-12 && se <= 1e-15, "{u} {exact} {se}");
    }
    let free = heat(&w, 0.0);
    let e = estimate(&free, &w, 10, &[0.7], 2, &mc(5, 1)).unwrap();
    assert_eq!(e.grad, vec![-(0.7f64.sin())]);
    assert_eq!(e.hess, vec![-(0.7f64.cos())]);
}

#[test]
fn gradient_agrees_with_common_seed_differences() {
    let w = driver(DriverKind::BrownianIto, 2, 32, 3);
    let cs = preset_on("tanh", &[], &w, 0.45).coefficients;
    let cfg = mc(10_000, 4);
    let h = 1e-2;
    let (mut num, mut den) = (0.0, 0.0);
    for x in [[0.3, -0.2], [-0.5, 0.4], [1.0, 0.0]] {
        let (g, _) = estimate_u_gradient(&cs, &w, 0, &x, &cfg).unwrap();
        for i in 0..2 {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let fd = (estimate_u(&cs, &w, 0, &a, &cfg).unwrap().0 - estimate_u(&cs, &w, 0, &b, &cfg).unwrap().0) / (2.0 * h);
            num += (fd - g[i]).abs();
            den += g[i].abs();
        }
    }
    assert!(num / den <= 2e-2, "mean relative error {}", num / den);
}

#[test]
fn hessian_is_symmetric() {
    let w = driver(DriverKind::BrownianIto, 2, 32, 3);
    let cs = preset_on("full_hybrid", &[], &w, 0.45).coefficients;
    let (hm, _) = estimate_u_hessian(&cs, &w, 0, &[0.3, -0.2], &mc(200, 1)).unwrap();
    assert!((hm[1] - hm[2]).abs() <= 1e-12);
}

#[test]
fn unit_payoff_without_weight_has_no_error() {
    let w = driver(DriverKind::BrownianIto, 1, 32, 3);
    let cs = heat(&w, 1.0).with_g_scale(0.0).with_g_offset(1.0);
    assert_eq!(estimate_u(&cs, &w, 0, &[0.5], &mc(100, 1)).unwrap(), (1.0, 0.0));
}

#[test]
fn markov_consistency_examples() {
    let w = driver(DriverKind::BrownianIto, 1, 32, 4);
    let cs = heat(&w, 1.0);
    let cfg = MarkovConfig { outer: mc(20_000, 2), slice_paths: 2000, mesh_points: 41, half_width: None };
    let same = markov_consistency(&cs, &w, 8, 8, 0.1, &cfg).unwrap();
    assert_eq!(same.discrepancy, 0.0);
    let end = markov_consistency(&cs, &w, 0, 32, 0.1, &cfg).unwrap();
    assert!(end.discrepancy <= 2.0 * end.combined_se, "{end:?}");
    let mid = markov_consistency(&cs, &w, 0, 16, 0.1, &cfg).unwrap();
    assert!(mid.discrepancy <= 3.0 * mid.combined_se + 2e-2, "{mid:?}");
}

#[test]
fn robustness_examples() {
    let w = driver(DriverKind::BrownianStrat, 1, 32, 5);
    let p = preset_on("transport", &[], &w, 0.45);
    let mesh = Mesh::line(-0.5, 0.5, 5).unwrap();
    let same = robustness_in_driver(&p.coefficients, &w, &w, &[0, 16], &mesh, 1, &mc(1, 1)).unwrap();
    assert!(same.exact_zero && same.ratio_total == 0.0);
    let v = SmoothPath::Sin.lift(1, 1.0, 32, 4).unwrap();
    let probe = |eps| {
        let b = w.translate(&v, eps).unwrap();
        robustness_in_driver(&p.coefficients, &w, &b, &[0, 16], &mesh, 1, &mc(1, 1)).unwrap()
    };
    let (a, b) = (probe(1e-2), probe(1e-3));
    assert!(a.dist_u > b.dist_u);
    let r = a.ratio_total / b.ratio_total;
    assert!((0.5..=2.0).contains(&r), "{r}");
}

#[test]
fn moment_probe_examples() {
    let w = driver(DriverKind::BrownianIto, 1, 32, 1);
    let ps = [0.5, 1.0, 3.0];
    let zero = weight_suprema(&heat(&w, 1.0), &w, 0, &[0.0], &mc(100, 1)).unwrap();
    assert!(exponential_moment_probe_from_sups(&zero, &ps).unwrap().iter().all(|r| r.full == 1.0 && r.subsample == 1.0));
    let c = preset_on("exp_weight", &[("c", -0.8)], &w, 0.45).coefficients;
    let sups = weight_suprema(&c, &w, 0, &[0.0], &mc(100, 1)).unwrap();
    for r in exponential_moment_probe_from_sups(&sups, &ps).unwrap() {
        assert!((r.full / (r.p * 0.8f64).exp() - 1.0).abs() <= 1e-12);
    }
    assert!(exponential_moment_probe_from_sups(&sups[..9], &ps).is_err());
}

#[test]
fn brownian_weight_moments_are_stable_in_sample_size() {
    let spec = roughfk_core::presets::DriverSpec { kind: DriverKind::BrownianIto, dim: 1, horizon: 1.0, steps: 32, refine: 4 };
    let ledger = roughfk_core::mcstats::SeedLedger::new(3);
    let sups = weight_suprema_over_drivers(
        20_000,
        |j| Ok(Arc::new(spec.build_with(&ledger, j)?)),
        |w| Ok(preset_on("rough_weight", &[], w, 0.45).coefficients),
        &[0.0],
        &mc(1, 2),
    )
    .unwrap();
    for r in exponential_moment_probe_from_sups(&sups, &[1.0, 2.0]).unwrap() {
        assert!((0.5..=2.0).contains(&r.ratio), "{r:?}");
    }
}

#[test]
fn surface_output_is_thread_count_invariant() {
    let w = driver(DriverKind::BrownianIto, 2, 16, 8);
    let cs = preset_on("full_hybrid", &[], &w, 0.45).coefficients;
    let mesh = Mesh::centred(&[0.0, 0.0], 0.5, 3).unwrap();
    let run = || build_surface(&cs, &w, &[0, 8], &mesh, 2, &mc(64, 3)).unwrap().to_csv();
    let (one, three) = (in_pool(1, run), in_pool(3, run));
    assert_eq!(one, three);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn payoff_scaling_is_exact(a in -3.0f64..3.0, seed in 0u64..1000) {
        let w = driver(DriverKind::BrownianIto, 2, 16, seed);
        let cs = preset_on("full_hybrid", &[], &w, 0.45).coefficients;
        let cfg = mc(50, seed);
        let base = estimate(&cs, &w, 0, &[0.1, 0.2], 2, &cfg).unwrap();
        let scaled = estimate(&cs.with_g_scale(a), &w, 0, &[0.1, 0.2], 2, &cfg).unwrap();
        let close = |x: f64, y: f64| (x - a * y).abs() <= 1e-12 * (1.0 + (a * y).abs());
        prop_assert!(close(scaled.u, base.u));
        for (s, b) in scaled.grad.iter().zip(&base.grad).chain(scaled.hess.iter().zip(&base.hess)) {
            prop_assert!(close(*s, *b));
        }
    }

    #[test]
    fn constant_c_shift_is_an_exponential_factor(c0 in -1.0f64..1.0, s in 0usize..16, seed in 0u64..1000) {
        let w = driver(DriverKind::BrownianIto, 2, 16, seed);
        let cs = preset_on("full_hybrid", &[], &w, 0.45).coefficients;
        let cfg = mc(50, seed);
        let base = estimate_u(&cs, &w, s, &[0.1, 0.2], &cfg).unwrap().0;
        let shifted = estimate_u(&cs.with_c_offset(c0), &w, s, &[0.1, 0.2], &cfg).unwrap().0;
        let tau = 1.0 - w.time(s);
        prop_assert!((shifted / (base * (c0 * tau).exp()) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn params_must_be_known() {
    let w = driver(DriverKind::BrownianIto, 1, 8, 1);
    let bad: BTreeMap<String, f64> = [("nope".to_string(), 1.0)].into();
    assert!(roughfk_core::presets::build("heat", &bad, &w, Exponents::defaults(0.45)).is_err());
}
