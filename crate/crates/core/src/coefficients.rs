//! Coefficient sets `(b, σ, β, β′)` of the dynamics and `(c, γ, γ′, g)` of the
//! Feynman–Kac weight, plus the regularity exponents they are declared with.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controlled::ControlledVectorField;
use crate::error::{Error, Result};
use crate::field::{Affinely, FieldRef};

/// Regularity exponents of a scenario.
///
/// `alpha` is the driver's Hölder exponent, `delta`/`eta` the time regularity
/// of `β`/`γ`, `lambda` that of `g`, `kappa`/`theta` the spatial regularity of
/// `β`/`γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha: f64,
    pub delta: f64,
    pub eta: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub theta: f64,
}

impl Exponents {
    /// `λ = 3`, `κ = θ = 5`, `δ = η = α`.
    pub fn defaults(alpha: f64) -> Self {
        Self { alpha, delta: alpha, eta: alpha, lambda: 3.0, kappa: 5.0, theta: 5.0 }
    }

    /// `α′ = min(δ, η)`.
    pub fn alpha_prime(&self) -> f64 {
        self.delta.min(self.eta)
    }

    /// `α″ = min((λ − 2)α, 2δ, 2η)`.
    pub fn alpha_second(&self) -> f64 {
        ((self.lambda - 2.0) * self.alpha).min(2.0 * self.delta).min(2.0 * self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { alpha, delta, eta, lambda, kappa, theta } = *self;
        let bad = |what: String| Err(Error::Assumption(what));
        if !(alpha > 1.0 / 3.0 && alpha <= 0.5) {
            return bad(format!("α = {alpha} outside (1/3, 1/2]"));
        }
        if !(lambda > 1.0 / alpha && lambda <= 3.0) {
            return bad(format!("λ = {lambda} outside (1/α, 3] with α = {alpha}"));
        }
        for (name, v) in [("δ", delta), ("η", eta)] {
            if !(0.0..=alpha).contains(&v) {
                return bad(format!("{name} = {v} outside [0, α] with α = {alpha}"));
            }
        }
        for (name, v) in [("κ", kappa), ("θ", theta)] {
            if !(4.0..=5.0).contains(&v) {
                return bad(format!("{name} = {v} outside [4, 5]"));
            }
        }
        let m = delta.min(eta);
        if alpha + m <= 0.5 {
            return bad(format!("α + min(δ, η) = {} must exceed 1/2", alpha + m));
        }
        let gap = ((lambda - 2.0) * alpha)
            .min((kappa.min(theta) - 4.0) * alpha)
            .min(delta)
            .min(eta);
        if alpha + m + gap <= 1.0 {
            return bad(format!(
                "α + min(δ, η) + min((λ−2)α, (min(κ,θ)−4)α, δ, η) = {} must exceed 1",
                alpha + m + gap
            ));
        }
        Ok(())
    }
}

/// `dX = b dt + σ dB + (β, β′) d𝐖` on `ℝ^d` with `m` Brownian and `n` rough
/// directions.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub b: FieldRef,
    pub sigma: FieldRef,
    pub beta: ControlledVectorField,
    dim: usize,
    noise_dim: usize,
}

impl Dynamics {
    pub fn new(b: FieldRef, sigma: FieldRef, beta: ControlledVectorField, noise_dim: usize) -> Result<Self> {
        let d = b.input_dim();
        let shape_err = |what: &str, got: usize, want: usize| {
            Err(Error::DimensionMismatch(format!("{what}: {got} entries, expected {want}")))
        };
        if b.output_len() != d {
            return shape_err("b outputs", b.output_len(), d);
        }
        if sigma.input_dim() != d || sigma.output_len() != d * noise_dim {
            return shape_err("σ outputs", sigma.output_len(), d * noise_dim);
        }
        if beta.input_dim() != d || beta.rows() != d {
            return shape_err("β rows", beta.rows(), d);
        }
        Ok(Self { b, sigma, beta, dim: d, noise_dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn rough_dim(&self) -> usize {
        self.beta.rough_dim()
    }
}

/// Everything needed for `u(s, x) = E[g(X_{T−s}) e^{I_{T−s}}]`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub dynamics: Dynamics,
    pub c: FieldRef,
    pub gamma: ControlledVectorField,
    pub g: FieldRef,
    pub exponents: Exponents,
}

impl CoefficientSet {
    pub fn new(
        dynamics: Dynamics,
        c: FieldRef,
        gamma: ControlledVectorField,
        g: FieldRef,
        exponents: Exponents,
    ) -> Result<Self> {
        let d = dynamics.dim();
        if c.input_dim() != d || c.output_len() != 1 {
            return Err(Error::DimensionMismatch("c must map ℝ^d to ℝ".into()));
        }
        if g.input_dim() != d || g.output_len() != 1 {
            return Err(Error::DimensionMismatch("g must map ℝ^d to ℝ".into()));
        }
        if gamma.input_dim() != d || gamma.rows() != 1 || gamma.rough_dim() != dynamics.rough_dim() {
            return Err(Error::DimensionMismatch("γ must map ℝ^d to 1 × n".into()));
        }
        exponents.validate()?;
        if dynamics.beta.holder_exponent() < exponents.delta {
            return Err(Error::Assumption(format!(
                "β declared with time regularity {} < δ = {}",
                dynamics.beta.holder_exponent(),
                exponents.delta
            )));
        }
        if gamma.holder_exponent() < exponents.eta {
            return Err(Error::Assumption(format!(
                "γ declared with time regularity {} < η = {}",
                gamma.holder_exponent(),
                exponents.eta
            )));
        }
        Ok(Self { dynamics, c, gamma, g, exponents })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn rough_dim(&self) -> usize {
        self.dynamics.rough_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.dynamics.noise_dim()
    }

    /// Same scenario with `c` replaced by `c + c0`.
    pub fn with_c_offset(&self, c0: f64) -> Self {
        let mut out = self.clone();
        out.c = Arc::new(Affinely::new(self.c.clone(), 1.0, c0));
        out
    }

    /// Same scenario with `g` replaced by `a · g`.
    pub fn with_g_scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.g = Arc::new(Affinely::new(self.g.clone(), a, 0.0));
        out
    }

    /// Same scenario with `g` replaced by `g + a`.
    pub fn with_g_offset(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.g = Arc::new(Affinely::new(self.g.clone(), 1.0, a));
        out
    }

    /// No weight: `c ≡ 0` and `γ ≡ 0`.
    pub fn weight_is_trivial(&self) -> bool {
        self.c.is_zero() && self.gamma.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_exponents_pass() {
        for alpha in [0.34, 0.4, 0.45, 0.5] {
            Exponents::defaults(alpha).validate().unwrap();
        }
        let e = Exponents::defaults(0.45);
        assert!((e.alpha_prime() - 0.45).abs() < 1e-15);
        assert!((e.alpha_second() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn violations_are_reported() {
        let mut e = Exponents::defaults(0.45);
        e.alpha = 0.3;
        assert!(matches!(e.validate(), Err(Error::Assumption(_))));
        let mut e = Exponents::defaults(0.45);
        e.delta = 0.0;
        assert!(e.validate().is_err());
        let mut e = Exponents::defaults(0.4);
        e.kappa = 4.0;
        assert!(e.validate().is_err(), "gap term vanishes");
        let mut e = Exponents::defaults(0.4);
        e.lambda = 2.4;
        assert!(e.validate().is_err(), "λ ≤ 1/α");
    }
}
