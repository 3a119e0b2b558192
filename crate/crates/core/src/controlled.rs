//! Controlled vector fields `(β, β′)`, controlled samples `(X, X′)` and their
//! composition.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{eval, Combination, Field, FieldRef, RidgeField};
use crate::mcstats::{dyadic_spans, fit_positive, SlopeFit};
use crate::roughpath::{frobenius, RoughPath};

/// A field with values in `rows × n` matrices together with its Gubinelli
/// time derivative `β′`, laid out `rows × n × n` as `(i, ν, μ)` with `μ` the
/// driver direction of the time increment.
///
/// A missing `prime` means `β′ ≡ 0`.
#[derive(Debug, Clone)]
pub struct ControlledVectorField {
    value: FieldRef,
    prime: Option<FieldRef>,
    rows: usize,
    rough_dim: usize,
    holder_exponent: f64,
}

impl ControlledVectorField {
    pub fn new(value: FieldRef, rough_dim: usize, holder_exponent: f64) -> Result<Self> {
        if rough_dim == 0 || value.output_len() % rough_dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "field `{}` has {} outputs, not a multiple of n = {rough_dim}",
                value.name(),
                value.output_len()
            )));
        }
        Ok(Self {
            rows: value.output_len() / rough_dim,
            value,
            prime: None,
            rough_dim,
            holder_exponent,
        })
    }

    pub fn with_prime(mut self, prime: FieldRef) -> Result<Self> {
        let want = self.rows * self.rough_dim * self.rough_dim;
        if prime.output_len() != want || prime.input_dim() != self.value.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "prime `{}` has {} outputs, expected {want}",
                prime.name(),
                prime.output_len()
            )));
        }
        self.prime = (!prime.is_zero()).then_some(prime);
        Ok(self)
    }

    /// Time-independent field, `β′ = 0`, declared fully regular in time.
    pub fn time_homogeneous(value: FieldRef, rough_dim: usize) -> Result<Self> {
        Self::new(value, rough_dim, 1.0)
    }

    pub fn zero(dim: usize, rows: usize, rough_dim: usize) -> Self {
        Self::time_homogeneous(RidgeField::zero("zero", dim, rows * rough_dim).into_ref(), rough_dim)
            .expect("zero field has consistent shape")
    }

    /// `(a F + b G, a F′ + b G′)`.
    pub fn combine(a: f64, f: &Self, b: f64, g: &Self) -> Result<Self> {
        if f.rows != g.rows || f.rough_dim != g.rough_dim {
            return Err(Error::DimensionMismatch("combined controlled fields differ in shape".into()));
        }
        let value = Combination::new(vec![(a, f.value.clone()), (b, g.value.clone())])?;
        let mut out = Self::new(Arc::new(value), f.rough_dim, f.holder_exponent.min(g.holder_exponent))?;
        let zero = || -> FieldRef {
            RidgeField::zero("zero", f.input_dim(), f.rows * f.rough_dim * f.rough_dim).into_ref()
        };
        if f.prime.is_some() || g.prime.is_some() {
            let fp = f.prime.clone().unwrap_or_else(zero);
            let gp = g.prime.clone().unwrap_or_else(zero);
            out = out.with_prime(Arc::new(Combination::new(vec![(a, fp), (b, gp)])?))?;
        }
        Ok(out)
    }

    pub fn field(&self) -> &FieldRef {
        &self.value
    }

    pub fn prime(&self) -> Option<&FieldRef> {
        self.prime.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rough_dim(&self) -> usize {
        self.rough_dim
    }

    pub fn input_dim(&self) -> usize {
        self.value.input_dim()
    }

    pub fn holder_exponent(&self) -> f64 {
        self.holder_exponent
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero() && self.prime.is_none()
    }

    /// Value or spatial derivative of order `order` of `β`.
    pub fn eval(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        eval(self.value.as_ref(), order, t, x, out)
    }

    /// Value or spatial derivative of `β′`; zero when absent.
    pub fn eval_prime(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.prime {
            Some(p) => eval(p.as_ref(), order, t, x, out),
            None => {
                out.iter_mut().for_each(|v| *v = 0.0);
                Ok(())
            }
        }
    }

    /// Slope of `sup_x |β_t(x) − β_s(x) − β′_s(x) δW_{s,t}|` against `|t − s|`
    /// over dyadic spans, on the probe points `xs` (`d` entries each).
    pub fn remainder_slope(&self, rp: &RoughPath, xs: &[Vec<f64>]) -> Result<Option<SlopeFit>> {
        let (l, n) = (self.rows * self.rough_dim, self.rough_dim);
        if rp.dim() != n {
            return Err(Error::DimensionMismatch(format!("driver dim {} vs n = {n}", rp.dim())));
        }
        let spans = dyadic_spans(rp.steps());
        if spans.len() < 4 {
            return Err(Error::InsufficientData(format!("{} dyadic levels", spans.len())));
        }
        let (mut bs, mut bt, mut bp) = (vec![0.0; l], vec![0.0; l], vec![0.0; l * n]);
        let mut pairs = Vec::new();
        for &h in &spans {
            let mut worst: f64 = 0.0;
            for s in (0..=rp.steps() - h).step_by(h) {
                let (dw, _) = rp.window(s, s + h)?;
                for x in xs {
                    self.eval(0, rp.time(s), x, &mut bs)?;
                    self.eval(0, rp.time(s + h), x, &mut bt)?;
                    self.eval_prime(0, rp.time(s), x, &mut bp)?;
                    let mut r = 0.0;
                    for o in 0..l {
                        let mut v = bt[o] - bs[o];
                        for nu in 0..n {
                            v -= bp[o * n + nu] * dw[nu];
                        }
                        r += v * v;
                    }
                    worst = worst.max(r.sqrt());
                }
            }
            pairs.push((h as f64 * rp.dt(), worst));
        }
        Ok(fit_positive(&pairs))
    }
}

/// `β(t, x) = base(x) · cos(κ W^ν_t)`, a field controlled by the driver with
/// `β′_{·μ} = −κ sin(κ W^ν_t) base(x) 1{μ = ν}`.
#[derive(Debug, Clone)]
pub struct DriverModulated {
    base: FieldRef,
    driver: Arc<RoughPath>,
    component: usize,
    kappa: f64,
    prime: bool,
    name: String,
}

impl DriverModulated {
    /// The controlled field `(β, β′)`, declared with the driver's exponent.
    pub fn controlled(
        base: FieldRef,
        driver: Arc<RoughPath>,
        component: usize,
        kappa: f64,
        alpha: f64,
    ) -> Result<ControlledVectorField> {
        let n = driver.dim();
        if component >= n {
            return Err(Error::IndexOutOfRange(format!("driver component {component} of {n}")));
        }
        let make = |prime: bool| DriverModulated {
            name: format!("{}·cos(κW)", base.name()) + if prime { "′" } else { "" },
            base: base.clone(),
            driver: driver.clone(),
            component,
            kappa,
            prime,
        };
        ControlledVectorField::new(Arc::new(make(false)), n, alpha)?.with_prime(Arc::new(make(true)))
    }

    fn driver_value(&self, t: f64) -> f64 {
        let k = ((t / self.driver.dt()).round().max(0.0) as usize).min(self.driver.steps());
        self.driver.value(k)[self.component]
    }

    fn fill(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let w = self.kappa * self.driver_value(t);
        let n = self.driver.dim();
        let width = self.base.input_dim().pow(order as u32);
        let mut base = vec![0.0; self.base.output_len() * width];
        if eval(self.base.as_ref(), order, t, x, &mut base).is_err() {
            return false;
        }
        if !self.prime {
            let c = w.cos();
            for (o, b) in out.iter_mut().zip(&base) {
                *o = c * b;
            }
            return true;
        }
        let s = -self.kappa * w.sin();
        out.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..self.base.output_len() {
            let dst = (o * n + self.component) * width;
            for e in 0..width {
                out[dst + e] = s * base[o * width + e];
            }
        }
        true
    }
}

impl Field for DriverModulated {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    fn output_len(&self) -> usize {
        self.base.output_len() * if self.prime { self.driver.dim() } else { 1 }
    }

    fn value(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.fill(0, t, x, out);
    }

    fn derivative(&self, order: usize, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        self.fill(order, t, x, out)
    }

    fn analytic_order(&self) -> usize {
        self.base.analytic_order()
    }

    fn is_affine(&self) -> bool {
        self.base.is_affine()
    }

    fn is_zero(&self) -> bool {
        self.base.is_zero()
    }
}

/// Samples of a controlled path: `X` (`paths × nodes × dim`) and its
/// Gubinelli derivative `X′` (`paths × nodes × dim × n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledSample {
    paths: usize,
    nodes: usize,
    dim: usize,
    rough_dim: usize,
    x: Vec<f64>,
    xp: Vec<f64>,
}

impl ControlledSample {
    pub fn new(
        paths: usize,
        nodes: usize,
        dim: usize,
        rough_dim: usize,
        x: Vec<f64>,
        xp: Vec<f64>,
    ) -> Result<Self> {
        if x.len() != paths * nodes * dim || xp.len() != paths * nodes * dim * rough_dim {
            return Err(Error::DimensionMismatch(format!(
                "controlled sample of {paths}×{nodes}×{dim} (n = {rough_dim}) got {} / {} entries",
                x.len(),
                xp.len()
            )));
        }
        if let Some(i) = x.iter().chain(&xp).position(|v| !v.is_finite()) {
            let stride = nodes * dim;
            return Err(Error::NonFinite { path: (i % (paths * stride)) / stride, step: (i % stride) / dim });
        }
        Ok(Self { paths, nodes, dim, rough_dim, x, xp })
    }

    /// The driver itself as a controlled path: `X = W`, `X′ = Id`.
    pub fn from_driver(rp: &RoughPath) -> Self {
        let n = rp.dim();
        let nodes = rp.steps() + 1;
        let mut xp = vec![0.0; nodes * n * n];
        for k in 0..nodes {
            for mu in 0..n {
                xp[(k * n + mu) * n + mu] = 1.0;
            }
        }
        Self { paths: 1, nodes, dim: n, rough_dim: n, x: rp.values().to_vec(), xp }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rough_dim(&self) -> usize {
        self.rough_dim
    }

    pub fn x(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.nodes + k) * self.dim;
        &self.x[o..o + self.dim]
    }

    pub fn xp(&self, path: usize, k: usize) -> &[f64] {
        let w = self.dim * self.rough_dim;
        let o = (path * self.nodes + k) * w;
        &self.xp[o..o + w]
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.xp
    }

    fn check_grid(&self, rp: &RoughPath) -> Result<()> {
        if rp.steps() + 1 != self.nodes || rp.dim() != self.rough_dim {
            return Err(Error::GridMismatch(format!(
                "sample with {} nodes (n = {}) vs driver with {} steps (n = {})",
                self.nodes,
                self.rough_dim,
                rp.steps(),
                rp.dim()
            )));
        }
        Ok(())
    }
}

/// `(β(t_k, X_k), Dβ(t_k, X_k) X′_k + β′(t_k, X_k))` per path and node.
pub fn compose(cvf: &ControlledVectorField, cs: &ControlledSample, times: &[f64]) -> Result<ControlledSample> {
    let (d, n) = (cs.dim, cs.rough_dim);
    if cvf.input_dim() != d || cvf.rough_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "field on ℝ^{} with n = {} applied to a sample in ℝ^{d} with n = {n}",
            cvf.input_dim(),
            cvf.rough_dim()
        )));
    }
    if times.len() != cs.nodes {
        return Err(Error::GridMismatch(format!("{} times for {} nodes", times.len(), cs.nodes)));
    }
    let l = cvf.rows() * n;
    // Surface missing derivatives before the parallel section.
    cvf.eval(1, times[0], cs.x(0, 0), &mut vec![0.0; l * d])?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..cs.paths)
        .into_par_iter()
        .map(|p| {
            let mut z = vec![0.0; cs.nodes * l];
            let mut zp = vec![0.0; cs.nodes * l * n];
            let mut db = vec![0.0; l * d];
            for k in 0..cs.nodes {
                let (x, xp) = (cs.x(p, k), cs.xp(p, k));
                let t = times[k];
                cvf.eval(0, t, x, &mut z[k * l..(k + 1) * l]).expect("value");
                cvf.eval(1, t, x, &mut db).expect("checked above");
                let out = &mut zp[k * l * n..(k + 1) * l * n];
                cvf.eval_prime(0, t, x, out).expect("prime value");
                for o in 0..l {
                    for mu in 0..n {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += db[o * d + j] * xp[j * n + mu];
                        }
                        out[o * n + mu] += acc;
                    }
                }
            }
            (z, zp)
        })
        .collect();
    let mut x = Vec::with_capacity(cs.paths * cs.nodes * l);
    let mut xp = Vec::with_capacity(cs.paths * cs.nodes * l * n);
    for (z, zp) in rows {
        x.extend(z);
        xp.extend(zp);
    }
    ControlledSample::new(cs.paths, cs.nodes, l, n, x, xp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub h: f64,
    pub p: u32,
    pub moment_dx: f64,
    pub moment_rx: f64,
}

/// Empirical moment seminorms of `δX` and `R^X = δX − X′δW` per dyadic span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    pub slope_dx: Option<SlopeFit>,
    pub slope_rx: Option<SlopeFit>,
}

impl MomentTable {
    /// Remainder identically zero on every span.
    pub fn remainder_vanishes(&self) -> bool {
        self.rows.iter().all(|r| r.moment_rx == 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,p,moment_dX,moment_RX\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.h, r.p, r.moment_dx, r.moment_rx);
        }
        s
    }
}

pub(crate) fn check_moment_order(p: u32, allowed: &[u32]) -> Result<()> {
    if allowed.contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("moment order {p} not in {allowed:?}")))
    }
}

/// Moments `(mean |δX|^p)^{1/p}` and `(mean |R^X|^p)^{1/p}` over paths,
/// averaged over non-overlapping windows of each dyadic span.
pub fn remainder_moments(cs: &ControlledSample, rp: &RoughPath, p: u32) -> Result<MomentTable> {
    check_moment_order(p, &[2, 4, 8])?;
    cs.check_grid(rp)?;
    let spans = dyadic_spans(rp.steps());
    if spans.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} dyadic levels on {} steps, need 4",
            spans.len(),
            rp.steps()
        )));
    }
    let (d, n) = (cs.dim, cs.rough_dim);
    let pf = p as f64;
    let mut rows = Vec::with_capacity(spans.len());
    for &h in &spans {
        let starts: Vec<usize> = (0..=rp.steps() - h).step_by(h).collect();
        let per_window: Vec<(f64, f64)> = starts
            .par_iter()
            .map(|&s| {
                let (dw, _) = rp.window(s, s + h).expect("in range");
                let (mut sdx, mut srx) = (0.0, 0.0);
                let (mut dx, mut rx) = (vec![0.0; d], vec![0.0; d]);
                for path in 0..cs.paths {
                    let (a, b, xp) = (cs.x(path, s), cs.x(path, s + h), cs.xp(path, s));
                    for i in 0..d {
                        dx[i] = b[i] - a[i];
                        let mut lin = 0.0;
                        for mu in 0..n {
                            lin += xp[i * n + mu] * dw[mu];
                        }
                        rx[i] = dx[i] - lin;
                    }
                    sdx += frobenius(&dx).powf(pf);
                    srx += frobenius(&rx).powf(pf);
                }
                let m = cs.paths as f64;
                ((sdx / m).powf(1.0 / pf), (srx / m).powf(1.0 / pf))
            })
            .collect();
        let w = per_window.len() as f64;
        rows.push(MomentRow {
            h: h as f64 * rp.dt(),
            p,
            moment_dx: per_window.iter().map(|v| v.0).sum::<f64>() / w,
            moment_rx: per_window.iter().map(|v| v.1).sum::<f64>() / w,
        });
    }
    let slope_dx = fit_positive(&rows.iter().map(|r| (r.h, r.moment_dx)).collect::<Vec<_>>());
    let slope_rx = fit_positive(&rows.iter().map(|r| (r.h, r.moment_rx)).collect::<Vec<_>>());
    Ok(MomentTable { rows, slope_dx, slope_rx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Profile;

    fn grid_times(rp: &RoughPath) -> Vec<f64> {
        (0..=rp.steps()).map(|k| rp.time(k)).collect()
    }

    #[test]
    fn constant_field_composes_to_constant() {
        let f = RidgeField::new("c", 1, 1).constant(0, 2.5).into_ref();
        let cvf = ControlledVectorField::time_homogeneous(f, 1).unwrap();
        let rp = RoughPath::canonical_lift_fn(|t, w| w[0] = t.sin(), 1, 1.0, 8, 4).unwrap();
        let cs = ControlledSample::from_driver(&rp);
        let z = compose(&cvf, &cs, &grid_times(&rp)).unwrap();
        assert!(z.values().iter().all(|&v| v == 2.5));
        assert!(z.derivatives().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_field_reproduces_the_sample() {
        let f = RidgeField::new("id", 1, 1).linear(0, 0, 1.0).into_ref();
        let cvf = ControlledVectorField::time_homogeneous(f, 1).unwrap();
        let rp = RoughPath::canonical_lift_fn(|t, w| w[0] = t.cos(), 1, 1.0, 8, 4).unwrap();
        let cs = ControlledSample::from_driver(&rp);
        let z = compose(&cvf, &cs, &grid_times(&rp)).unwrap();
        assert_eq!(z, cs);
    }

    #[test]
    fn driver_as_sample_has_zero_remainder() {
        let rp = RoughPath::canonical_lift_fn(|t, w| w[0] = (3.0 * t).sin(), 1, 1.0, 64, 4).unwrap();
        let table = remainder_moments(&ControlledSample::from_driver(&rp), &rp, 2).unwrap();
        assert!(table.remainder_vanishes());
        assert!(table.slope_rx.is_none());
        assert!(table.to_csv().starts_with("h,p,moment_dX,moment_RX\n"));
    }

    #[test]
    fn quadratic_path_remainder_slope_is_at_least_one() {
        let steps = 64;
        let rp = RoughPath::zero(1, 1.0, steps).unwrap();
        let x: Vec<f64> = (0..=steps).map(|k| (k as f64 / steps as f64).powi(2)).collect();
        let cs = ControlledSample::new(1, steps + 1, 1, 1, x, vec![0.0; steps + 1]).unwrap();
        let table = remainder_moments(&cs, &rp, 2).unwrap();
        assert!(table.slope_rx.unwrap().slope >= 1.0);
    }

    #[test]
    fn moments_reject_bad_inputs() {
        let rp = RoughPath::zero(1, 1.0, 4).unwrap();
        let cs = ControlledSample::from_driver(&rp);
        assert!(matches!(remainder_moments(&cs, &rp, 3), Err(Error::InvalidParameter(_))));
        assert!(matches!(remainder_moments(&cs, &rp, 2), Err(Error::InsufficientData(_))));
        assert!(ControlledSample::new(1, 2, 1, 1, vec![0.0], vec![0.0; 2]).is_err());
        assert!(matches!(
            ControlledSample::new(1, 2, 1, 1, vec![0.0, f64::NAN], vec![0.0; 2]),
            Err(Error::NonFinite { path: 0, step: 1 })
        ));
    }

    #[test]
    fn compose_is_linear_in_the_field() {
        let f = ControlledVectorField::time_homogeneous(
            RidgeField::new("f", 1, 1).coordinate(0, 0, 1.0, Profile::Tanh).into_ref(),
            1,
        )
        .unwrap();
        let g = ControlledVectorField::time_homogeneous(
            RidgeField::new("g", 1, 1).coordinate(0, 0, 0.7, Profile::Sin).into_ref(),
            1,
        )
        .unwrap();
        let h = ControlledVectorField::combine(2.0, &f, -3.0, &g).unwrap();
        let rp = RoughPath::canonical_lift_fn(|t, w| w[0] = 2.0 * t.sin(), 1, 1.0, 16, 4).unwrap();
        let cs = ControlledSample::from_driver(&rp);
        let times = grid_times(&rp);
        let (zf, zg, zh) = (
            compose(&f, &cs, &times).unwrap(),
            compose(&g, &cs, &times).unwrap(),
            compose(&h, &cs, &times).unwrap(),
        );
        for e in 0..zh.values().len() {
            let want = 2.0 * zf.values()[e] - 3.0 * zg.values()[e];
            assert!((zh.values()[e] - want).abs() < 1e-14);
            let want = 2.0 * zf.derivatives()[e] - 3.0 * zg.derivatives()[e];
            assert!((zh.derivatives()[e] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn driver_modulated_field_is_controlled_by_the_driver() {
        let rp = Arc::new(
            RoughPath::canonical_lift_fn(|t, w| w[0] = (5.0 * t).sin(), 1, 1.0, 256, 4).unwrap(),
        );
        let base = RidgeField::new("b", 1, 1).coordinate(0, 0, 1.0, Profile::Tanh).into_ref();
        let beta = DriverModulated::controlled(base, rp.clone(), 0, 1.3, 0.5).unwrap();
        let probes: Vec<Vec<f64>> = [-1.0, 0.0, 0.5, 2.0].iter().map(|&x| vec![x]).collect();
        let fit = beta.remainder_slope(&rp, &probes).unwrap().unwrap();
        assert!(fit.slope >= 2.0 * 0.5 - 0.15, "slope {}", fit.slope);
        let mut p = [0.0];
        beta.eval_prime(0, rp.time(10), &[0.5], &mut p).unwrap();
        let w = rp.value(10)[0];
        assert!((p[0] + 1.3 * (1.3 * w).sin() * 0.5f64.tanh()).abs() < 1e-15);
    }
}
