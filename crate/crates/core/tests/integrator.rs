mod common;

use common::*;
use roughfk_core::controlled::{compose, ControlledSample, ControlledVectorField};
use roughfk_core::field::{Profile, RidgeField};
use roughfk_core::integrator::{ito_integral, local_expansion_residual, rough_integral};
use roughfk_core::mcstats::mean_stderr;
use roughfk_core::presets::DriverKind;
use roughfk_core::rsde::solve_rsde;
use roughfk_core::{RoughPath, SmoothPath};

#[test]
fn driver_against_itself_telescopes() {
    let w = driver(DriverKind::BrownianStrat, 1, 128, 6);
    let ip = rough_integral(&ControlledSample::from_driver(&w), &w).unwrap();
    let wt = w.value(128)[0];
    assert!((ip.terminal(0)[0] - 0.5 * wt * wt).abs() <= 1e-12);
}

#[test]
fn ito_integral_is_a_centred_isometry() {
    let (m, steps) = (100_000, 16);
    let dt = 1.0 / steps as f64;
    let bs = brownian(m, 1, steps, dt, 17);
    let nodes = steps + 1;
    let mut nu = vec![0.0; m * nodes];
    let mut db = vec![0.0; m * steps];
    for p in 0..m {
        let mut b = 0.0f64;
        for k in 0..nodes {
            nu[p * nodes + k] = b.sin();
            if k < steps {
                let inc = bs.step(p, k)[0];
                db[p * steps + k] = inc;
                b += inc;
            }
        }
    }
    let ip = ito_integral(m, nodes, 1, 1, &nu, &db).unwrap();
    let terminal: Vec<f64> = (0..m).map(|p| ip.terminal(p)[0]).collect();
    let (mean, se) = mean_stderr(&terminal);
    assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
    let sq: f64 = terminal.iter().map(|v| v * v).sum::<f64>() / m as f64;
    let qv: f64 = (0..m)
        .map(|p| (0..steps).map(|k| nu[p * nodes + k].powi(2) * dt).sum::<f64>())
        .sum::<f64>()
        / m as f64;
    assert!((sq / qv - 1.0).abs() <= 0.05, "{sq} vs {qv}");
}

#[test]
fn constant_integrand_expansion_is_exact() {
    let w = driver(DriverKind::BrownianIto, 2, 64, 1);
    let nodes = 65;
    // A constant controlled path has φ′ = 0; a constant non-zero φ′ would
    // contradict δφ = φ′ δW + R.
    let cs = ControlledSample::new(1, nodes, 2, 2, [0.3, -1.0].repeat(nodes), vec![0.0; 4 * nodes]).unwrap();
    let ip = rough_integral(&cs, &w).unwrap();
    assert!(local_expansion_residual(&ip, &cs, &w, 2).unwrap().vanishes(1e-12));
}

#[test]
fn smooth_integrand_residual_is_cubic() {
    let w = SmoothPath::Sin.lift(1, 1.0, 256, 4).unwrap();
    let cs = ControlledSample::from_driver(&w);
    // φ = sin(W) with φ′ = cos(W), away from the identity integrand.
    let f = ControlledVectorField::time_homogeneous(
        RidgeField::new("sin", 1, 1).coordinate(0, 0, 1.0, Profile::Sin).into_ref(),
        1,
    )
    .unwrap();
    let times: Vec<f64> = (0..=256).map(|k| w.time(k)).collect();
    let phi = compose(&f, &cs, &times).unwrap();
    let ip = rough_integral(&phi, &w).unwrap();
    let r = local_expansion_residual(&ip, &phi, &w, 2).unwrap();
    assert!(r.moment_slope.unwrap().slope >= 1.5, "{:?}", r.moment_slope);
}

#[test]
fn rsde_integrand_residual_slope() {
    let w = driver(DriverKind::BrownianStrat, 1, 512, 13);
    let dy = scalar_dynamics(zero1("b"), RidgeField::new("s", 1, 1).constant(0, 0.3), RidgeField::new("beta", 1, 1).coordinate(0, 0, 1.0, Profile::Cos));
    let ens = solve_rsde(&dy, &[0.1], &w, 0.0, 512, &brownian(100, 1, 512, w.dt(), 2)).unwrap();
    let times: Vec<f64> = (0..=512).map(|k| w.time(k)).collect();
    let phi = compose(&dy.beta, &ens.controlled(), &times).unwrap();
    let ip = rough_integral(&phi, &w).unwrap();
    let r = local_expansion_residual(&ip, &phi, &w, 2).unwrap();
    assert!(r.moment_slope.unwrap().slope >= 0.9 - 0.15, "{:?}", r.moment_slope);
}

#[test]
fn pure_area_driver_integrates_level_two_only() {
    let rate = [0.0, 1.5, -1.5, 0.0];
    let w = RoughPath::pure_area(&rate, 2, 2.0, 16).unwrap();
    let nodes = 17;
    let fp = [0.0, 1.0, 0.0, 0.0];
    let cs = ControlledSample::new(1, nodes, 2, 2, [4.0, -3.0].repeat(nodes), fp.repeat(nodes)).unwrap();
    let ip = rough_integral(&cs, &w).unwrap();
    // φ′_{(0,0),1} A^{10} summed over steps
    assert!((ip.terminal(0)[0] - (-1.5 * 2.0)).abs() < 1e-12);
}
