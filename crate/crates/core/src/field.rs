//! Smooth time-dependent fields `[0,T] × ℝ^d → ℝ^L` and their spatial
//! derivatives.
//!
//! Output tensors are flat and row-major. The derivative of order `k` is laid
//! out as `L × d^k`, so entry `(o, j1, .., jk)` is `∂_{j1}..∂_{jk} f_o`.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait Field: Send + Sync + Debug {
    fn name(&self) -> &str;

    /// Spatial dimension `d`.
    fn input_dim(&self) -> usize;

    /// Number of output components `L`.
    fn output_len(&self) -> usize;

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Write the analytic derivative of `order` (1..=3) into `out` and return
    /// `true`, or return `false` when none is supplied.
    fn derivative(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let _ = (order, t, x, out);
        false
    }

    /// Highest derivative order implemented by [`Field::derivative`].
    fn analytic_order(&self) -> usize {
        0
    }

    /// Affine in `x`: derivatives of order two and higher vanish.
    fn is_affine(&self) -> bool {
        false
    }

    /// Identically zero, value and all derivatives.
    fn is_zero(&self) -> bool {
        false
    }
}

pub type FieldRef = Arc<dyn Field>;

fn fd_step(x: f64) -> f64 {
    1e-5f64.max(1e-5 * x.abs())
}

/// Evaluate the value (`order == 0`) or a derivative of `field`.
///
/// Missing analytic derivatives fall back to central differences of the next
/// lower order, provided that one is analytic (or is the value itself).
pub fn eval(field: &dyn Field, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = field.input_dim();
    debug_assert_eq!(out.len(), field.output_len() * d.pow(order as u32));
    if field.is_zero() || (order >= 2 && field.is_affine()) {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    if order == 0 {
        field.value(t, x, out);
        return Ok(());
    }
    if order <= field.analytic_order() && field.derivative(order, t, x, out) {
        return Ok(());
    }
    if order > field.analytic_order() + 1 || order > 3 {
        return Err(Error::MissingDerivative { field: field.name().to_string(), order });
    }
    let lower = field.output_len() * d.pow(order as u32 - 1);
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; lower];
    let mut minus = vec![0.0; lower];
    for j in 0..d {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        eval(field, order - 1, t, &xp, &mut plus)?;
        xp[j] = x[j] - h;
        eval(field, order - 1, t, &xp, &mut minus)?;
        xp[j] = x[j];
        for (e, (p, m)) in plus.iter().zip(&minus).enumerate() {
            out[e * d + j] = (p - m) / (2.0 * h);
        }
    }
    Ok(())
}

/// Elementary profile of a ridge term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Constant,
    Identity,
    Sin,
    Cos,
    Tanh,
}

impl Profile {
    /// `(φ, φ', φ'', φ''')` at `z`.
    fn jets(self, z: f64) -> [f64; 4] {
        match self {
            Profile::Constant => [1.0, 0.0, 0.0, 0.0],
            Profile::Identity => [z, 1.0, 0.0, 0.0],
            Profile::Sin => {
                let (s, c) = z.sin_cos();
                [s, c, -s, -c]
            }
            Profile::Cos => {
                let (s, c) = z.sin_cos();
                [c, -s, -c, s]
            }
            Profile::Tanh => {
                let th = z.tanh();
                let sech2 = 1.0 - th * th;
                [th, sech2, -2.0 * th * sech2, -2.0 * sech2 * (1.0 - 3.0 * th * th)]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct RidgeTerm {
    output: usize,
    coef: f64,
    profile: Profile,
    weights: Vec<f64>,
    time_freq: f64,
    phase: f64,
}

/// Sum of ridge terms `a · φ(w·x + ω t + c)` per output component, with
/// closed-form derivatives of every order.
#[derive(Debug, Clone)]
pub struct RidgeField {
    name: String,
    dim: usize,
    len: usize,
    terms: Vec<RidgeTerm>,
}

impl RidgeField {
    pub fn new(name: impl Into<String>, dim: usize, len: usize) -> Self {
        Self { name: name.into(), dim, len, terms: Vec::new() }
    }

    pub fn zero(name: impl Into<String>, dim: usize, len: usize) -> Self {
        Self::new(name, dim, len)
    }

    /// Add `coef · φ(w·x + phase)` to output component `output`.
    pub fn term(mut self, output: usize, coef: f64, profile: Profile, weights: &[f64], phase: f64) -> Self {
        assert!(output < self.len, "ridge output {output} out of range");
        assert_eq!(weights.len(), self.dim, "ridge weights must have length d");
        if coef != 0.0 {
            self.terms.push(RidgeTerm {
                output,
                coef,
                profile,
                weights: weights.to_vec(),
                time_freq: 0.0,
                phase,
            });
        }
        self
    }

    /// Like [`RidgeField::term`] with an additional time frequency `ω`.
    pub fn timed_term(
        mut self,
        output: usize,
        coef: f64,
        profile: Profile,
        weights: &[f64],
        time_freq: f64,
        phase: f64,
    ) -> Self {
        self = self.term(output, coef, profile, weights, phase);
        if let Some(last) = self.terms.last_mut() {
            last.time_freq = time_freq;
        }
        self
    }

    pub fn constant(self, output: usize, value: f64) -> Self {
        let w = vec![0.0; self.dim];
        self.term(output, value, Profile::Constant, &w, 0.0)
    }

    /// `coef · x_j` on output `output`.
    pub fn linear(self, output: usize, j: usize, coef: f64) -> Self {
        let mut w = vec![0.0; self.dim];
        w[j] = 1.0;
        self.term(output, coef, Profile::Identity, &w, 0.0)
    }

    /// `coef · φ(x_j)` on output `output`.
    pub fn coordinate(self, output: usize, j: usize, coef: f64, profile: Profile) -> Self {
        let mut w = vec![0.0; self.dim];
        w[j] = 1.0;
        self.term(output, coef, profile, &w, 0.0)
    }

    /// Multiply every coefficient by `a`.
    pub fn scaled(mut self, a: f64) -> Self {
        for t in &mut self.terms {
            t.coef *= a;
        }
        self.terms.retain(|t| t.coef != 0.0);
        self
    }

    pub fn into_ref(self) -> FieldRef {
        Arc::new(self)
    }
}

impl Field for RidgeField {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_len(&self) -> usize {
        self.len
    }

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for term in &self.terms {
            let z = ridge_arg(term, t, x);
            out[term.output] += term.coef * term.profile.jets(z)[0];
        }
    }

    fn derivative(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for term in &self.terms {
            if matches!(term.profile, Profile::Constant) {
                continue;
            }
            let z = ridge_arg(term, t, x);
            let a = term.coef * term.profile.jets(z)[order];
            if a == 0.0 {
                continue;
            }
            let w = &term.weights;
            match order {
                1 => {
                    let base = term.output * d;
                    for j in 0..d {
                        out[base + j] += a * w[j];
                    }
                }
                2 => {
                    let base = term.output * d * d;
                    for j in 0..d {
                        for l in 0..d {
                            out[base + j * d + l] += a * w[j] * w[l];
                        }
                    }
                }
                3 => {
                    let base = term.output * d * d * d;
                    for j in 0..d {
                        for l in 0..d {
                            for r in 0..d {
                                out[base + (j * d + l) * d + r] += a * w[j] * w[l] * w[r];
                            }
                        }
                    }
                }
                _ => return false,
            }
        }
        true
    }

    fn analytic_order(&self) -> usize {
        3
    }

    fn is_affine(&self) -> bool {
        self.terms
            .iter()
            .all(|t| matches!(t.profile, Profile::Constant | Profile::Identity))
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

#[inline]
fn ridge_arg(term: &RidgeTerm, t: f64, x: &[f64]) -> f64 {
    let mut z = term.phase + term.time_freq * t;
    for (w, xi) in term.weights.iter().zip(x) {
        z += w * xi;
    }
    z
}

/// `a · f + b` applied to another field.
#[derive(Debug, Clone)]
pub struct Affinely {
    inner: FieldRef,
    scale: f64,
    offset: f64,
    name: String,
}

impl Affinely {
    pub fn new(inner: FieldRef, scale: f64, offset: f64) -> Self {
        let name = format!("{}*{scale}+{offset}", inner.name());
        Self { inner, scale, offset, name }
    }
}

impl Field for Affinely {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_len(&self) -> usize {
        self.inner.output_len()
    }

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.value(t, x, out);
        for v in out.iter_mut() {
            *v = self.scale * *v + self.offset;
        }
    }

    fn derivative(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        if eval(self.inner.as_ref(), order, t, x, out).is_err() {
            return false;
        }
        for v in out.iter_mut() {
            *v *= self.scale;
        }
        true
    }

    fn analytic_order(&self) -> usize {
        self.inner.analytic_order()
    }

    fn is_affine(&self) -> bool {
        self.inner.is_affine()
    }

    fn is_zero(&self) -> bool {
        self.offset == 0.0 && (self.scale == 0.0 || self.inner.is_zero())
    }
}

/// `Σ a_k f_k` over fields sharing input and output shapes.
#[derive(Debug, Clone)]
pub struct Combination {
    terms: Vec<(f64, FieldRef)>,
    name: String,
}

impl Combination {
    pub fn new(terms: Vec<(f64, FieldRef)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty field combination".into()))?;
        let (d, l) = (first.1.input_dim(), first.1.output_len());
        if terms.iter().any(|(_, f)| f.input_dim() != d || f.output_len() != l) {
            return Err(Error::DimensionMismatch("combined fields differ in shape".into()));
        }
        let name = terms
            .iter()
            .map(|(a, f)| format!("{a}*{}", f.name()))
            .collect::<Vec<_>>()
            .join("+");
        Ok(Self { terms, name })
    }
}

impl Field for Combination {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.terms[0].1.input_dim()
    }

    fn output_len(&self) -> usize {
        self.terms[0].1.output_len()
    }

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let _ = self.derivative(0, t, x, out);
    }

    fn derivative(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; out.len()];
        for (a, f) in &self.terms {
            if eval(f.as_ref(), order, t, x, &mut buf).is_err() {
                return false;
            }
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += a * b;
            }
        }
        true
    }

    fn analytic_order(&self) -> usize {
        self.terms.iter().map(|(_, f)| f.analytic_order()).min().unwrap_or(0)
    }

    fn is_affine(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.is_affine())
    }

    fn is_zero(&self) -> bool {
        self.terms.iter().all(|(a, f)| *a == 0.0 || f.is_zero())
    }
}

/// Field given by a closure for its value only; derivatives come from
/// central differences.
pub struct FnField<F> {
    name: String,
    dim: usize,
    len: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(name: impl Into<String>, dim: usize, len: usize, f: F) -> Self {
        Self { name: name.into(), dim, len, f }
    }
}

impl<F> Debug for FnField<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnField").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_len(&self) -> usize {
        self.len
    }

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_field() -> RidgeField {
        RidgeField::new("probe", 2, 2)
            .term(0, 0.7, Profile::Tanh, &[1.0, -0.5], 0.2)
            .term(0, 0.3, Profile::Sin, &[0.4, 1.1], 0.0)
            .term(1, -1.2, Profile::Cos, &[2.0, 0.3], 0.1)
            .linear(1, 0, 0.5)
            .constant(1, 0.25)
    }

    fn fd_matches(order: usize) {
        let f = sample_field();
        let d: usize = 2;
        let x = [0.3, -0.8];
        let mut analytic = vec![0.0; 2 * d.pow(order as u32)];
        assert!(f.derivative(order, 0.0, &x, &mut analytic));
        let lower = 2 * d.pow(order as u32 - 1);
        let h = 1e-5;
        for j in 0..d {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let (mut p, mut m) = (vec![0.0; lower], vec![0.0; lower]);
            eval(&f, order - 1, 0.0, &xp, &mut p).unwrap();
            eval(&f, order - 1, 0.0, &xm, &mut m).unwrap();
            for e in 0..lower {
                let fd = (p[e] - m[e]) / (2.0 * h);
                let an = analytic[e * d + j];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "order {order}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        fd_matches(1);
        fd_matches(2);
        fd_matches(3);
    }

    #[test]
    fn fallback_differentiates_closures() {
        let f = FnField::new("sq", 1, 1, |_, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        let mut g = [0.0];
        eval(&f, 1, 0.0, &[1.5], &mut g).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        let err = eval(&f, 2, 0.0, &[1.5], &mut g).unwrap_err();
        assert!(matches!(err, Error::MissingDerivative { order: 2, .. }));
    }

    #[test]
    fn affine_and_zero_fields_short_circuit() {
        let lin = RidgeField::new("lin", 1, 1).linear(0, 0, 2.0).constant(0, 1.0);
        assert!(lin.is_affine());
        let mut out = [7.0];
        eval(&lin, 3, 0.0, &[0.4], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        let zero = RidgeField::zero("z", 1, 1);
        assert!(zero.is_zero());
    }

    #[test]
    fn affinely_scales_derivatives() {
        let base = RidgeField::new("s", 1, 1).coordinate(0, 0, 1.0, Profile::Sin).into_ref();
        let f = Affinely::new(base, 3.0, 0.5);
        let (mut v, mut dv) = ([0.0], [0.0]);
        eval(&f, 0, 0.0, &[0.2], &mut v).unwrap();
        eval(&f, 1, 0.0, &[0.2], &mut dv).unwrap();
        assert!((v[0] - (3.0 * 0.2f64.sin() + 0.5)).abs() < 1e-15);
        assert!((dv[0] - 3.0 * 0.2f64.cos()).abs() < 1e-15);
    }
}
