#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use roughfk_core::coefficients::Exponents;
use roughfk_core::feynman_kac::McConfig;
use roughfk_core::mcstats::{tags, SeedLedger};
use roughfk_core::presets::{self, DriverKind, DriverSpec, Preset};
use roughfk_core::rsde::{BrownianSample, NoiseSpec};
use roughfk_core::RoughPath;

pub fn driver(kind: DriverKind, dim: usize, steps: usize, seed: u64) -> Arc<RoughPath> {
    let refine = if kind.is_random() { 8 } else { 4 };
    let spec = DriverSpec { kind, dim, horizon: 1.0, steps, refine };
    Arc::new(spec.build(&SeedLedger::new(seed)).unwrap())
}

pub fn preset_on(name: &str, params: &[(&str, f64)], w: &Arc<RoughPath>, alpha: f64) -> Preset {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    presets::build(name, &p, w, Exponents::defaults(alpha)).unwrap()
}

pub fn mc(paths: usize, seed: u64) -> McConfig {
    McConfig::new(paths, NoiseSpec::new(SeedLedger::new(seed), tags::OUTER))
}

use roughfk_core::controlled::ControlledVectorField;
use roughfk_core::feynman_kac::Dynamics;
use roughfk_core::field::{FieldRef, RidgeField};

/// Scalar dynamics `dX = b dt + σ dB + β d𝐖` with one Brownian and one
/// rough direction.
pub fn scalar_dynamics(b: RidgeField, sigma: RidgeField, beta: RidgeField) -> Dynamics {
    let beta = ControlledVectorField::time_homogeneous(beta.into_ref(), 1).unwrap();
    Dynamics::new(b.into_ref(), sigma.into_ref(), beta, 1).unwrap()
}

pub fn zero1(name: &str) -> RidgeField {
    RidgeField::zero(name, 1, 1)
}

pub fn constant1(name: &str, v: f64) -> FieldRef {
    RidgeField::new(name, 1, 1).constant(0, v).into_ref()
}

pub fn brownian(paths: usize, dim: usize, steps: usize, dt: f64, seed: u64) -> BrownianSample {
    BrownianSample::generate(&NoiseSpec::new(SeedLedger::new(seed), tags::BROWNIAN), paths, dim, steps, dt)
}
