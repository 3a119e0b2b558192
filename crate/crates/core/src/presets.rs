//! Bundled drivers and coefficient sets.
//!
//! Every preset is a [`CoefficientSet`] on a fixed `(d, m, n)` with named
//! real parameters. Where `u` is known in closed form the preset carries it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Dynamics, Exponents};
use crate::controlled::{ControlledVectorField, DriverModulated};
use crate::error::{Error, Result};
use crate::field::{FieldRef, Profile, RidgeField};
use crate::mcstats::{tags, SeedLedger};
use crate::roughpath::{RoughPath, SmoothPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    /// Itô lift of a Brownian path (left-point areas on a finer grid).
    BrownianIto,
    /// The Itô lift with its symmetric part replaced by `½ δW ⊗ δW`.
    BrownianStrat,
    Canonical(SmoothPath),
    /// `W ≡ 0` with unit area rate between the first two components.
    PureArea,
}

impl DriverKind {
    pub fn is_random(self) -> bool {
        matches!(self, DriverKind::BrownianIto | DriverKind::BrownianStrat)
    }
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverKind::BrownianIto => f.write_str("brownian_ito"),
            DriverKind::BrownianStrat => f.write_str("brownian_strat"),
            DriverKind::Canonical(p) => write!(f, "canonical:{}", p.name()),
            DriverKind::PureArea => f.write_str("pure_area"),
        }
    }
}

impl FromStr for DriverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brownian_ito" => Ok(DriverKind::BrownianIto),
            "brownian_strat" => Ok(DriverKind::BrownianStrat),
            "pure_area" => Ok(DriverKind::PureArea),
            _ => s
                .strip_prefix("canonical:")
                .and_then(SmoothPath::parse)
                .map(DriverKind::Canonical)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "driver kind `{s}`; expected brownian_ito, brownian_strat, pure_area or canonical:<circle|linear|sin|zero>"
                    ))
                }),
        }
    }
}

impl Serialize for DriverKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DriverKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub kind: DriverKind,
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    /// Sub-steps per grid step used to build the areas.
    pub refine: usize,
}

impl DriverSpec {
    /// Brownian drivers draw from the `DRIVER` substream `(mesh, 0)`.
    pub fn build_with(&self, ledger: &SeedLedger, mesh: u64) -> Result<RoughPath> {
        match self.kind {
            DriverKind::BrownianIto | DriverKind::BrownianStrat => {
                let mut rng = ledger.stream(tags::DRIVER, mesh, 0);
                let (rp, _) = RoughPath::brownian_ito_lift(self.dim, self.horizon, self.steps, self.refine, &mut rng)?;
                Ok(if self.kind == DriverKind::BrownianStrat { rp.geometrize() } else { rp })
            }
            DriverKind::Canonical(p) => p.lift(self.dim, self.horizon, self.steps, self.refine),
            DriverKind::PureArea => {
                let n = self.dim;
                let mut rate = vec![0.0; n * n];
                if n >= 2 {
                    rate[1] = 1.0;
                    rate[n] = -1.0;
                }
                RoughPath::pure_area(&rate, n, self.horizon, self.steps)
            }
        }
    }

    pub fn build(&self, ledger: &SeedLedger) -> Result<RoughPath> {
        self.build_with(ledger, 0)
    }
}

/// Static description of a bundled preset.
#[derive(Debug, Clone, Copy)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub dim: usize,
    pub noise_dim: usize,
    pub rough_dim: usize,
    pub default_driver: DriverKind,
    pub x0: &'static [f64],
    pub params: &'static [(&'static str, f64)],
}

/// Alphabetical.
pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "exp_weight",
        summary: "heat equation with constant potential c; u = cos(x) exp((c - sigma^2/2)(T - s))",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::BrownianStrat,
        x0: &[0.0],
        params: &[("c", 0.5), ("sigma", 1.0)],
    },
    PresetInfo {
        name: "full_hybrid",
        summary: "d = m = n = 2, tanh coefficients with driver-modulated beta and gamma",
        dim: 2,
        noise_dim: 2,
        rough_dim: 2,
        default_driver: DriverKind::BrownianIto,
        x0: &[0.3, -0.2],
        params: &[("kappa", 1.0), ("scale", 1.0)],
    },
    PresetInfo {
        name: "gbm",
        summary: "geometric Brownian motion, g(x) = x; u = x exp(mu (T - s))",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::BrownianStrat,
        x0: &[1.0],
        params: &[("mu", 0.05), ("vol", 0.2)],
    },
    PresetInfo {
        name: "heat",
        summary: "dX = sigma dB, g = cos; u = cos(x) exp(-sigma^2 (T - s) / 2)",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::BrownianStrat,
        x0: &[0.0],
        params: &[("sigma", 1.0)],
    },
    PresetInfo {
        name: "rough_weight",
        summary: "heat dynamics with constant gamma; u = cos(x) exp(-(T - s)/2 + gamma (W_T - W_s))",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::BrownianIto,
        x0: &[0.0],
        params: &[("gamma", 0.5)],
    },
    PresetInfo {
        name: "smooth_reference",
        summary: "dX = a tanh(X) dW, g = cos; closed form asinh(sinh(x) e^{a dW}) for geometric drivers",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::Canonical(SmoothPath::Sin),
        x0: &[0.5],
        params: &[("a", 1.0)],
    },
    PresetInfo {
        name: "tanh",
        summary: "d = m = n = 2, time-homogeneous tanh coefficients",
        dim: 2,
        noise_dim: 2,
        rough_dim: 2,
        default_driver: DriverKind::BrownianStrat,
        x0: &[0.3, -0.2],
        params: &[("scale", 1.0)],
    },
    PresetInfo {
        name: "transport",
        summary: "dX = a dW, g = cos; u = cos(x + a (W_T - W_s))",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::BrownianStrat,
        x0: &[0.0],
        params: &[("a", 1.0)],
    },
    PresetInfo {
        name: "weighted_transport",
        summary: "dX = a dW, gamma = kappa tanh(x); u = cos(X) (cosh X / cosh x)^{kappa/a} for geometric drivers",
        dim: 1,
        noise_dim: 1,
        rough_dim: 1,
        default_driver: DriverKind::Canonical(SmoothPath::Sin),
        x0: &[0.5],
        params: &[("a", 1.0), ("kappa", 0.5)],
    },
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn info(name: &str) -> Result<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| Error::UnknownPreset {
        name: name.to_string(),
        available: names().join(", "),
    })
}

/// `u(s, x)` on a given driver, or `None` where no closed form applies.
pub type ClosedForm = Arc<dyn Fn(&RoughPath, usize, &[f64]) -> Option<f64> + Send + Sync>;

#[derive(Clone)]
pub struct Preset {
    pub info: &'static PresetInfo,
    pub params: BTreeMap<String, f64>,
    pub coefficients: CoefficientSet,
    closed_form: Option<ClosedForm>,
}

impl fmt::Debug for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Preset")
            .field("name", &self.info.name)
            .field("params", &self.params)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        self.info.name
    }

    pub fn x0(&self) -> Vec<f64> {
        self.info.x0.to_vec()
    }

    pub fn closed_form(&self, driver: &RoughPath, s_node: usize, x: &[f64]) -> Option<f64> {
        self.closed_form.as_ref().and_then(|f| f(driver, s_node, x))
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }
}

/// Defaults merged with `overrides`; unknown keys are rejected.
pub fn resolve_params(info: &PresetInfo, overrides: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, f64> = info.params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        match out.get_mut(k) {
            Some(slot) if v.is_finite() => *slot = *v,
            Some(_) => return Err(Error::InvalidParameter(format!("parameter `{k}` = {v} is not finite"))),
            None => {
                let known: Vec<&str> = info.params.iter().map(|(k, _)| *k).collect();
                return Err(Error::InvalidParameter(format!(
                    "preset `{}` has no parameter `{k}` (known: {})",
                    info.name,
                    known.join(", ")
                )));
            }
        }
    }
    Ok(out)
}

fn zero(name: &str, d: usize, len: usize) -> FieldRef {
    RidgeField::zero(name, d, len).into_ref()
}

fn cos_g() -> FieldRef {
    RidgeField::new("cos", 1, 1).coordinate(0, 0, 1.0, Profile::Cos).into_ref()
}

fn constant(name: &str, v: f64) -> FieldRef {
    RidgeField::new(name, 1, 1).constant(0, v).into_ref()
}

fn delta_w(driver: &RoughPath, s_node: usize) -> f64 {
    driver.value(driver.steps())[0] - driver.value(s_node)[0]
}

fn tau(driver: &RoughPath, s_node: usize) -> f64 {
    driver.horizon() - driver.time(s_node)
}

/// Nonlinear time-homogeneous fields on `ℝ²` shared by `tanh` and
/// `full_hybrid`: `(b, σ, β, c, γ, g)`.
fn tanh_fields(scale: f64) -> [FieldRef; 6] {
    use Profile::Tanh;
    let b = RidgeField::new("b", 2, 2)
        .coordinate(0, 1, 0.3, Tanh)
        .coordinate(1, 0, -0.2, Tanh)
        .constant(1, 0.1)
        .into_ref();
    let sigma = RidgeField::new("sigma", 2, 4)
        .constant(0, 0.3)
        .coordinate(0, 1, 0.1, Tanh)
        .term(1, 0.1, Tanh, &[1.0, 1.0], 0.0)
        .constant(3, 0.3)
        .coordinate(3, 0, 0.1, Tanh)
        .into_ref();
    let beta = RidgeField::new("beta", 2, 4)
        .coordinate(0, 0, 0.5, Tanh)
        .constant(0, 0.2)
        .coordinate(1, 1, 0.3, Tanh)
        .term(2, 0.3, Tanh, &[1.0, -1.0], 0.0)
        .coordinate(3, 1, 0.4, Tanh)
        .coordinate(3, 0, 0.1, Tanh)
        .scaled(scale)
        .into_ref();
    let c = RidgeField::new("c", 2, 1).coordinate(0, 0, 0.2, Tanh).into_ref();
    let gamma = RidgeField::new("gamma", 2, 2)
        .coordinate(0, 1, 0.3, Tanh)
        .coordinate(1, 0, 0.2, Tanh)
        .into_ref();
    let g = RidgeField::new("g", 2, 1).term(0, 1.0, Profile::Cos, &[1.0, 0.5], 0.0).into_ref();
    [b, sigma, beta, c, gamma, g]
}

/// Instantiate preset `name` on `driver`. Drivers enter the coefficients
/// only through driver-modulated fields, so `driver` must be the path the
/// equation will be solved on.
pub fn build(
    name: &str,
    overrides: &BTreeMap<String, f64>,
    driver: &Arc<RoughPath>,
    exponents: Exponents,
) -> Result<Preset> {
    let info = info(name)?;
    let params = resolve_params(info, overrides)?;
    if driver.dim() != info.rough_dim {
        return Err(Error::DimensionMismatch(format!(
            "preset `{name}` needs a driver of dimension {}, got {}",
            info.rough_dim,
            driver.dim()
        )));
    }
    let p = |k: &str| params[k];
    let (d, m, n) = (info.dim, info.noise_dim, info.rough_dim);
    let hom = |f: FieldRef| ControlledVectorField::time_homogeneous(f, n);
    let zero_beta = || ControlledVectorField::zero(d, d, n);
    let zero_gamma = || ControlledVectorField::zero(d, 1, n);

    let (dynamics, c, gamma, g, closed): (Dynamics, FieldRef, ControlledVectorField, FieldRef, Option<ClosedForm>) =
        match name {
            "heat" | "exp_weight" => {
                let sigma = p("sigma");
                let c0 = if name == "exp_weight" { p("c") } else { 0.0 };
                let dy = Dynamics::new(zero("b", 1, 1), constant("sigma", sigma), zero_beta(), m)?;
                let cf: ClosedForm = Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| {
                    Some(x[0].cos() * ((c0 - 0.5 * sigma * sigma) * tau(w, s)).exp())
                });
                (dy, constant("c", c0), zero_gamma(), cos_g(), Some(cf))
            }
            "gbm" => {
                let (mu, vol) = (p("mu"), p("vol"));
                let b = RidgeField::new("b", 1, 1).linear(0, 0, mu).into_ref();
                let sigma = RidgeField::new("sigma", 1, 1).linear(0, 0, vol).into_ref();
                let dy = Dynamics::new(b, sigma, zero_beta(), m)?;
                let g = RidgeField::new("g", 1, 1).linear(0, 0, 1.0).into_ref();
                let cf: ClosedForm =
                    Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| Some(x[0] * (mu * tau(w, s)).exp()));
                (dy, zero("c", 1, 1), zero_gamma(), g, Some(cf))
            }
            "rough_weight" => {
                let gam = p("gamma");
                let dy = Dynamics::new(zero("b", 1, 1), constant("sigma", 1.0), zero_beta(), m)?;
                let cf: ClosedForm = Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| {
                    Some(x[0].cos() * (-0.5 * tau(w, s) + gam * delta_w(w, s)).exp())
                });
                (dy, zero("c", 1, 1), hom(constant("gamma", gam))?, cos_g(), Some(cf))
            }
            "transport" => {
                let a = p("a");
                let dy = Dynamics::new(zero("b", 1, 1), zero("sigma", 1, 1), hom(constant("beta", a))?, m)?;
                let cf: ClosedForm =
                    Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| Some((x[0] + a * delta_w(w, s)).cos()));
                (dy, zero("c", 1, 1), zero_gamma(), cos_g(), Some(cf))
            }
            "weighted_transport" => {
                let (a, kappa) = (p("a"), p("kappa"));
                if a == 0.0 {
                    return Err(Error::InvalidParameter("weighted_transport needs a ≠ 0".into()));
                }
                let dy = Dynamics::new(zero("b", 1, 1), zero("sigma", 1, 1), hom(constant("beta", a))?, m)?;
                let gamma = RidgeField::new("gamma", 1, 1).coordinate(0, 0, kappa, Profile::Tanh).into_ref();
                let cf: ClosedForm = Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| {
                    if !w.is_geometric() {
                        return None;
                    }
                    let y = x[0] + a * delta_w(w, s);
                    Some(y.cos() * (kappa / a * (y.cosh().ln() - x[0].cosh().ln())).exp())
                });
                (dy, zero("c", 1, 1), hom(gamma)?, cos_g(), Some(cf))
            }
            "smooth_reference" => {
                let a = p("a");
                let beta = RidgeField::new("beta", 1, 1).coordinate(0, 0, a, Profile::Tanh).into_ref();
                let dy = Dynamics::new(zero("b", 1, 1), zero("sigma", 1, 1), hom(beta)?, m)?;
                let cf: ClosedForm = Arc::new(move |w: &RoughPath, s: usize, x: &[f64]| {
                    if !w.is_geometric() {
                        return None;
                    }
                    Some((x[0].sinh() * (a * delta_w(w, s)).exp()).asinh().cos())
                });
                (dy, zero("c", 1, 1), zero_gamma(), cos_g(), Some(cf))
            }
            "tanh" => {
                let [b, sigma, beta, c, gamma, g] = tanh_fields(p("scale"));
                let dy = Dynamics::new(b, sigma, hom(beta)?, m)?;
                (dy, c, hom(gamma)?, g, None)
            }
            "full_hybrid" => {
                let [b, sigma, beta, c, gamma, g] = tanh_fields(p("scale"));
                let kappa = p("kappa");
                let beta = DriverModulated::controlled(beta, driver.clone(), 0, kappa, exponents.delta)?;
                let gamma = DriverModulated::controlled(gamma, driver.clone(), 1, kappa, exponents.eta)?;
                let dy = Dynamics::new(b, sigma, beta, m)?;
                (dy, c, gamma, g, None)
            }
            _ => unreachable!("every listed preset is handled"),
        };
    let coefficients = CoefficientSet::new(dynamics, c, gamma, g, exponents)?;
    Ok(Preset { info, params, coefficients, closed_form: closed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn driver(kind: DriverKind, n: usize) -> Arc<RoughPath> {
        let spec = DriverSpec { kind, dim: n, horizon: 1.0, steps: 16, refine: 4 };
        Arc::new(spec.build(&SeedLedger::new(3)).unwrap())
    }

    #[test]
    fn names_are_sorted_and_buildable() {
        let names = names();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for info in PRESETS {
            let w = driver(info.default_driver, info.rough_dim);
            let p = build(info.name, &BTreeMap::new(), &w, Exponents::defaults(0.45)).unwrap();
            assert_eq!(p.coefficients.dim(), info.dim);
            assert_eq!(p.coefficients.noise_dim(), info.noise_dim);
        }
    }

    #[test]
    fn driver_kinds_round_trip() {
        for s in ["brownian_ito", "brownian_strat", "pure_area", "canonical:sin", "canonical:circle"] {
            assert_eq!(s.parse::<DriverKind>().unwrap().to_string(), s);
        }
        assert!("canonical:square".parse::<DriverKind>().is_err());
    }

    #[test]
    fn unknown_names_and_params_are_rejected() {
        let w = driver(DriverKind::BrownianStrat, 1);
        assert!(matches!(
            build("nope", &BTreeMap::new(), &w, Exponents::defaults(0.45)),
            Err(Error::UnknownPreset { .. })
        ));
        let bad: BTreeMap<String, f64> = [("zeta".to_string(), 1.0)].into();
        assert!(build("heat", &bad, &w, Exponents::defaults(0.45)).is_err());
    }

    #[test]
    fn geometric_only_closed_forms() {
        let ito = driver(DriverKind::BrownianIto, 1);
        let p = build("smooth_reference", &BTreeMap::new(), &ito, Exponents::defaults(0.45)).unwrap();
        assert!(p.closed_form(&ito, 0, &[0.1]).is_none());
        let strat = driver(DriverKind::BrownianStrat, 1);
        assert!(p.closed_form(&strat, 0, &[0.1]).is_some());
    }
}
