mod common;

use common::*;
use roughfk_core::feynman_kac::*;
use roughfk_core::mesh::Mesh;
use roughfk_core::pde_residual::*;
use roughfk_core::presets::DriverKind;
use roughfk_core::SmoothPath;

#[test]
fn transport_residual_and_condition_ii() {
    let (n, mesh) = (128, Mesh::line(-0.5, 0.5, 101).unwrap());
    let nodes: Vec<usize> = (0..=n).collect();
    let pairs = dyadic_pairs(0, n);
    let (mut rs, mut cs) = (vec![], vec![]);
    for seed in 0..8 {
        let w = driver(DriverKind::BrownianStrat, 1, n, 100 + seed);
        let p = preset_on("transport", &[], &w, 0.45);
        let surf = build_surface(&p.coefficients, &w, &nodes, &mesh, 0, &mc(1, 1)).unwrap();
        let zero = davie_residual_of_u(&surf, &p.coefficients, &w, &[(5, 5)]).unwrap();
        assert_eq!(zero.rows[0].sup_residual, 0.0);
        rs.push(davie_residual_of_u(&surf, &p.coefficients, &w, &pairs).unwrap());
        cs.push(condition_ii_check(&surf, &p.coefficients, &w, 0, &pairs).unwrap());
    }
    let e = roughfk_core::coefficients::Exponents::defaults(0.45);
    let gap = ((e.lambda - 2.0) * e.alpha).min(e.delta).min(e.eta);
    let r = ResidualReport::pooled(&rs);
    assert!(r.slope.unwrap().slope >= 1.0 + gap - 0.2, "{}", r.to_csv());
    let c = ConditionIiReport::pooled(&cs).unwrap();
    assert!(c.first.slope.unwrap().slope >= e.alpha.min(e.delta).min(e.eta) - 0.15);
    assert!(c.meets(0.2), "{c:?}");
}

#[test]
fn heat_residual_is_the_classical_trapezoid_error() {
    let n = 256;
    let w = driver(DriverKind::Canonical(SmoothPath::Zero), 1, n, 1);
    let p = preset_on("heat", &[], &w, 0.45);
    let mesh = Mesh::line(-1.0, 1.0, 1001).unwrap();
    let mut reports = vec![];
    let mut h = 2;
    while h <= n / 4 {
        // Knots only at the pair ends, so the time integral is one trapezoid.
        let nodes: Vec<usize> = (0..=n).step_by(h).collect();
        let surf = SolutionSurface::tabulate(&w, &nodes, &mesh, |k, x| p.closed_form(&w, k, x).unwrap());
        let pairs: Vec<(usize, usize)> = nodes.windows(2).map(|q| (q[0], q[1])).collect();
        reports.push(davie_residual_of_u(&surf, &p.coefficients, &w, &pairs).unwrap());
        if h == 8 {
            assert!(condition_ii_check(&surf, &p.coefficients, &w, 0, &pairs).unwrap().meets(0.2));
        }
        h *= 2;
    }
    let r = ResidualReport::pooled(&reports);
    assert!(r.slope.unwrap().slope >= 1.8, "{}", r.to_csv());
}

#[test]
fn direct_and_nested_gamma_products_agree() {
    let w = driver(DriverKind::BrownianIto, 2, 8, 1);
    let p = preset_on("full_hybrid", &[], &w, 0.45);
    // Nested first differences differ from the direct second difference by
    // O(pitch²); a pitch of 1e−3 keeps that below the tolerance.
    let mesh = Mesh::centred(&[0.1, -0.1], 0.05, 101).unwrap();
    let u: Vec<f64> = mesh.nodes().iter().map(|x| (x[0] - 0.5 * x[1]).sin() + x[1] * x[1]).collect();
    for (mu, nu) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let (_, direct) = apply_gamma_pair(&mesh, &u, &p.coefficients, 0.25, mu, nu).unwrap();
        let nested = apply_gamma_pair_nested(&mesh, &u, &p.coefficients, 0.25, mu, nu).unwrap();
        let worst = direct
            .iter()
            .zip(&nested)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "({mu},{nu}): {worst}");
    }
}

#[test]
fn smooth_driver_matches_the_classical_equation() {
    let mesh = Mesh::line(-0.5, 0.5, 3).unwrap();
    let w = driver(DriverKind::Canonical(SmoothPath::Zero), 1, 64, 1);
    let heat = preset_on("heat", &[], &w, 0.45);
    let cmp = smooth_case_reference(&heat.coefficients, SmoothPath::Zero, &w, 0, &mesh, 4, &mc(20_000, 2)).unwrap();
    assert!(cmp.sup_diff <= 2.0 * cmp.combined_se + 1e-12, "{cmp:?}");

    let w = driver(DriverKind::Canonical(SmoothPath::Sin), 1, 256, 1);
    for (name, params) in [("transport", vec![]), ("rough_weight", vec![("gamma", 0.7)])] {
        let p = preset_on(name, &params, &w, 0.45);
        let cmp = smooth_case_reference(&p.coefficients, SmoothPath::Sin, &w, 32, &mesh, 8, &mc(1, 1)).unwrap();
        assert!(cmp.sup_diff <= 1e-3, "{name}: {cmp:?}");
    }
    let ito = driver(DriverKind::BrownianIto, 1, 16, 1);
    let p = preset_on("transport", &[], &ito, 0.45);
    assert!(smooth_case_reference(&p.coefficients, SmoothPath::Sin, &ito, 0, &mesh, 4, &mc(1, 1)).is_err());
}
