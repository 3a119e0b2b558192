//! Level-2 rough paths on a uniform time grid.
//!
//! A [`RoughPath`] stores the path values `W_{t_k}` and one second-level
//! tensor per grid step, `A_k = 𝕎_{t_k, t_{k+1}}`. Windows over longer
//! intervals are never stored; they are rebuilt by Chen's relation
//!
//! ```text
//! 𝕎_{i,j} = 𝕎_{i,j-1} + A_{j-1} + δW_{i,j-1} ⊗ δW_{j-1,j}
//! ```
//!
//! so the relation holds with zero defect (up to rounding) by construction.
//! Tensors are `n × n`, row-major, entry `(μ, ν)` approximating
//! `∫ δW^μ dW^ν`. Norms on tensors are Frobenius norms.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughPath {
    horizon: f64,
    steps: usize,
    dim: usize,
    /// `(steps + 1) × dim`
    values: Vec<f64>,
    /// `steps × dim × dim`
    areas: Vec<f64>,
    geometric: bool,
}

/// Level-wise inhomogeneous distance between two rough paths on one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoAlphaReport {
    pub alpha: f64,
    pub level1_dist: f64,
    pub level2_dist: f64,
    pub total: f64,
}

/// Smooth driver shapes used for canonical lifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothPath {
    /// `W^ν_t = sin((ν + 1) t)`
    Sin,
    /// `(cos t − 1, sin t)` in the first two components, zero after.
    Circle,
    /// `W^ν_t = t`
    Linear,
    Zero,
}

impl SmoothPath {
    pub const ALL: [SmoothPath; 4] = [SmoothPath::Circle, SmoothPath::Linear, SmoothPath::Sin, SmoothPath::Zero];

    pub fn name(self) -> &'static str {
        match self {
            SmoothPath::Sin => "sin",
            SmoothPath::Circle => "circle",
            SmoothPath::Linear => "linear",
            SmoothPath::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn value(self, t: f64, out: &mut [f64]) {
        for (nu, o) in out.iter_mut().enumerate() {
            *o = match self {
                SmoothPath::Sin => ((nu + 1) as f64 * t).sin(),
                SmoothPath::Circle => match nu {
                    0 => t.cos() - 1.0,
                    1 => t.sin(),
                    _ => 0.0,
                },
                SmoothPath::Linear => t,
                SmoothPath::Zero => 0.0,
            };
        }
    }

    /// `Ẇ_t`
    pub fn derivative(self, t: f64, out: &mut [f64]) {
        for (nu, o) in out.iter_mut().enumerate() {
            *o = match self {
                SmoothPath::Sin => {
                    let f = (nu + 1) as f64;
                    f * (f * t).cos()
                }
                SmoothPath::Circle => match nu {
                    0 => -t.sin(),
                    1 => t.cos(),
                    _ => 0.0,
                },
                SmoothPath::Linear => 1.0,
                SmoothPath::Zero => 0.0,
            };
        }
    }

    /// Canonical lift on `steps` steps with `refine` trapezoidal sub-steps.
    pub fn lift(self, dim: usize, horizon: f64, steps: usize, refine: usize) -> Result<RoughPath> {
        RoughPath::canonical_lift_fn(|t, out| self.value(t, out), dim, horizon, steps, refine)
    }
}

pub(crate) fn frobenius(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl RoughPath {
    /// Build from raw node values and per-step areas.
    pub fn from_parts(
        horizon: f64,
        steps: usize,
        dim: usize,
        values: Vec<f64>,
        areas: Vec<f64>,
        geometric: bool,
    ) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "rough path needs T > 0, N > 0, n > 0 (got T={horizon}, N={steps}, n={dim})"
            )));
        }
        if values.len() != (steps + 1) * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} path values, got {}",
                (steps + 1) * dim,
                values.len()
            )));
        }
        if areas.len() != steps * dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} area entries, got {}",
                steps * dim * dim,
                areas.len()
            )));
        }
        Ok(Self { horizon, steps, dim, values, areas, geometric })
    }

    /// The constant path at the origin.
    pub fn zero(dim: usize, horizon: f64, steps: usize) -> Result<Self> {
        Self::from_parts(
            horizon,
            steps,
            dim,
            vec![0.0; (steps + 1) * dim],
            vec![0.0; steps * dim * dim],
            true,
        )
    }

    /// Canonical lift of a bounded-variation path sampled on a grid `refine`
    /// times finer than the target grid of `steps` steps.
    ///
    /// `samples` holds `refine * steps + 1` rows of `dim` values. Each fine
    /// sub-step contributes its trapezoidal area `½ Δ ⊗ Δ` and the sub-steps
    /// are composed with Chen's relation.
    pub fn canonical_lift(samples: &[f64], dim: usize, horizon: f64, steps: usize) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(Error::InvalidParameter("canonical lift needs n > 0 and N > 0".into()));
        }
        if samples.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} samples is not a multiple of dimension {dim}",
                samples.len()
            )));
        }
        let rows = samples.len() / dim;
        if rows < 2 || (rows - 1) % steps != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} sample rows do not form a refinement of {steps} steps",
                rows
            )));
        }
        let refine = (rows - 1) / steps;
        let row = |r: usize| &samples[r * dim..(r + 1) * dim];
        let mut values = Vec::with_capacity((steps + 1) * dim);
        let mut areas = vec![0.0; steps * dim * dim];
        let mut inc = vec![0.0; dim];
        let mut rel = vec![0.0; dim];
        for k in 0..steps {
            values.extend_from_slice(row(k * refine));
            let base = row(k * refine);
            let a = &mut areas[k * dim * dim..(k + 1) * dim * dim];
            for r in k * refine..(k + 1) * refine {
                let (w0, w1) = (row(r), row(r + 1));
                for mu in 0..dim {
                    inc[mu] = w1[mu] - w0[mu];
                    rel[mu] = w0[mu] - base[mu];
                }
                for mu in 0..dim {
                    for nu in 0..dim {
                        a[mu * dim + nu] += rel[mu] * inc[nu] + 0.5 * inc[mu] * inc[nu];
                    }
                }
            }
        }
        values.extend_from_slice(row(steps * refine));
        Self::from_parts(horizon, steps, dim, values, areas, true)
    }

    /// Canonical lift of `path(t, out)` sampled `refine` times per step.
    pub fn canonical_lift_fn<F>(path: F, dim: usize, horizon: f64, steps: usize, refine: usize) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]),
    {
        if refine == 0 {
            return Err(Error::InvalidParameter("refinement must be at least 1".into()));
        }
        let fine = steps * refine;
        let mut samples = vec![0.0; (fine + 1) * dim];
        for r in 0..=fine {
            let t = horizon * r as f64 / fine as f64;
            path(t, &mut samples[r * dim..(r + 1) * dim]);
        }
        Self::canonical_lift(&samples, dim, horizon, steps)
    }

    /// Itô lift of a Brownian path simulated on a grid `refine` times finer.
    ///
    /// Areas are left-point sums over the fine sub-steps. The second return
    /// value holds the coarse increments `δW_k` (`steps × dim`) of the same
    /// fine path.
    pub fn brownian_ito_lift<R: Rng + ?Sized>(
        dim: usize,
        horizon: f64,
        steps: usize,
        refine: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<f64>)> {
        if !(horizon > 0.0) || steps == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "Brownian lift needs T > 0, N > 0, n > 0 (got T={horizon}, N={steps}, n={dim})"
            )));
        }
        if refine < 2 {
            return Err(Error::InvalidParameter(format!(
                "Brownian lift needs refinement R >= 2, got {refine}"
            )));
        }
        let sd = (horizon / (steps * refine) as f64).sqrt();
        let mut values = vec![0.0; (steps + 1) * dim];
        let mut areas = vec![0.0; steps * dim * dim];
        let mut increments = vec![0.0; steps * dim];
        let mut rel = vec![0.0; dim];
        let mut dw = vec![0.0; dim];
        for k in 0..steps {
            rel.iter_mut().for_each(|v| *v = 0.0);
            let a = &mut areas[k * dim * dim..(k + 1) * dim * dim];
            for _ in 0..refine {
                for v in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sd * z;
                }
                for mu in 0..dim {
                    for nu in 0..dim {
                        a[mu * dim + nu] += rel[mu] * dw[nu];
                    }
                }
                for mu in 0..dim {
                    rel[mu] += dw[mu];
                }
            }
            for mu in 0..dim {
                increments[k * dim + mu] = rel[mu];
                values[(k + 1) * dim + mu] = values[k * dim + mu] + rel[mu];
            }
        }
        let rp = Self::from_parts(horizon, steps, dim, values, areas, false)?;
        Ok((rp, increments))
    }

    /// Path with `W ≡ 0` and constant antisymmetric area rate:
    /// `A_k = area_rate · Δt`.
    pub fn pure_area(area_rate: &[f64], dim: usize, horizon: f64, steps: usize) -> Result<Self> {
        if area_rate.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "area rate needs {} entries, got {}",
                dim * dim,
                area_rate.len()
            )));
        }
        for mu in 0..dim {
            for nu in 0..dim {
                let (a, b) = (area_rate[mu * dim + nu], area_rate[nu * dim + mu]);
                if (a + b).abs() > 1e-14 * (1.0 + a.abs()) {
                    return Err(Error::InvalidParameter("pure-area rate must be antisymmetric".into()));
                }
            }
        }
        let dt = horizon / steps as f64;
        let areas = (0..steps).flat_map(|_| area_rate.iter().map(move |a| a * dt)).collect();
        Self::from_parts(horizon, steps, dim, vec![0.0; (steps + 1) * dim], areas, true)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_geometric(&self) -> bool {
        self.geometric
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Second-level tensor of step `k`, `𝕎_{t_k, t_{k+1}}`.
    pub fn area(&self, k: usize) -> &[f64] {
        let n2 = self.dim * self.dim;
        &self.areas[k * n2..(k + 1) * n2]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Level-one increment over step `k` written into `out`.
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let (a, b) = (self.value(k), self.value(k + 1));
        for mu in 0..self.dim {
            out[mu] = b[mu] - a[mu];
        }
    }

    /// Grid index of time `t`, if `t` is a node.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let k = (t / dt).round();
        if k < 0.0 || k > self.steps as f64 || (t - k * dt).abs() > 1e-9 * self.horizon {
            return Err(Error::NotAGridNode { time: t, step: dt });
        }
        Ok(k as usize)
    }

    pub fn same_grid(&self, other: &RoughPath) -> bool {
        self.steps == other.steps
            && self.dim == other.dim
            && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    fn check_same_grid(&self, other: &RoughPath) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(T={}, N={}, n={}) vs (T={}, N={}, n={})",
                self.horizon, self.steps, self.dim, other.horizon, other.steps, other.dim
            )))
        }
    }

    /// `(δW_{t_i,t_j}, 𝕎_{t_i,t_j})` by left-to-right Chen accumulation.
    pub fn window(&self, i: usize, j: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if i > j || j > self.steps {
            return Err(Error::IndexOutOfRange(format!(
                "window ({i}, {j}) on a grid of {} steps",
                self.steps
            )));
        }
        let n = self.dim;
        let mut inc = vec![0.0; n];
        let mut area = vec![0.0; n * n];
        let mut step = vec![0.0; n];
        for k in i..j {
            self.accumulate(&mut inc, &mut area, &mut step, k);
        }
        let (a, b) = (self.value(i), self.value(j));
        for mu in 0..n {
            inc[mu] = b[mu] - a[mu];
        }
        Ok((inc, area))
    }

    /// Extend the window `(inc, area)` ending at node `k` by one step.
    #[inline]
    pub(crate) fn accumulate(&self, inc: &mut [f64], area: &mut [f64], step: &mut [f64], k: usize) {
        let n = self.dim;
        self.increment_into(k, step);
        let a = self.area(k);
        for mu in 0..n {
            for nu in 0..n {
                area[mu * n + nu] += a[mu * n + nu] + inc[mu] * step[nu];
            }
        }
        for mu in 0..n {
            inc[mu] += step[mu];
        }
    }

    /// Largest entrywise Chen defect
    /// `|𝕎_{i,j} − 𝕎_{i,m} − 𝕎_{m,j} − δW_{i,m} ⊗ δW_{m,j}|`.
    pub fn chen_defect(&self, i: usize, m: usize, j: usize) -> Result<f64> {
        if !(i <= m && m <= j) {
            return Err(Error::IndexOutOfRange(format!("split ({i}, {m}, {j}) is not ordered")));
        }
        let (_, w_ij) = self.window(i, j)?;
        let (x_im, w_im) = self.window(i, m)?;
        let (x_mj, w_mj) = self.window(m, j)?;
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for mu in 0..n {
            for nu in 0..n {
                let e = mu * n + nu;
                let d = w_ij[e] - w_im[e] - w_mj[e] - x_im[mu] * x_mj[nu];
                worst = worst.max(d.abs());
            }
        }
        Ok(worst)
    }

    /// Largest entrywise `|Sym(A_k) − ½ δW_k ⊗ δW_k|` over all steps.
    pub fn geometric_defect(&self) -> f64 {
        let n = self.dim;
        let mut step = vec![0.0; n];
        let mut worst: f64 = 0.0;
        for k in 0..self.steps {
            self.increment_into(k, &mut step);
            let a = self.area(k);
            for mu in 0..n {
                for nu in 0..n {
                    let sym = 0.5 * (a[mu * n + nu] + a[nu * n + mu]);
                    worst = worst.max((sym - 0.5 * step[mu] * step[nu]).abs());
                }
            }
        }
        worst
    }

    /// Replace each step's symmetric part by `½ δW_k ⊗ δW_k`, keeping the
    /// Lévy area.
    pub fn geometrize(&self) -> RoughPath {
        let n = self.dim;
        let mut out = self.clone();
        let mut step = vec![0.0; n];
        for k in 0..self.steps {
            self.increment_into(k, &mut step);
            let a = self.area(k);
            let b = &mut out.areas[k * n * n..(k + 1) * n * n];
            for mu in 0..n {
                for nu in 0..n {
                    let anti = 0.5 * (a[mu * n + nu] - a[nu * n + mu]);
                    b[mu * n + nu] = 0.5 * step[mu] * step[nu] + anti;
                }
            }
        }
        out.geometric = true;
        out
    }

    /// The driver restarted at node `m` and frozen at `W_T` after `T − t_m`.
    pub fn shift(&self, m: usize) -> Result<RoughPath> {
        if m > self.steps {
            return Err(Error::IndexOutOfRange(format!(
                "shift node {m} beyond {} steps",
                self.steps
            )));
        }
        let n = self.dim;
        let live = self.steps - m;
        let mut values = Vec::with_capacity(self.values.len());
        for k in 0..=self.steps {
            values.extend_from_slice(self.value((m + k).min(self.steps)));
        }
        let mut areas = vec![0.0; self.areas.len()];
        areas[..live * n * n].copy_from_slice(&self.areas[m * n * n..]);
        Self::from_parts(self.horizon, self.steps, n, values, areas, self.geometric)
    }

    /// Shift by a time that must be a grid node.
    pub fn shift_time(&self, s: f64) -> Result<RoughPath> {
        self.shift(self.node_index(s)?)
    }

    /// The same path observed on every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<RoughPath> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut values = Vec::with_capacity((steps + 1) * self.dim);
        let mut areas = Vec::with_capacity(steps * self.dim * self.dim);
        for k in 0..=steps {
            values.extend_from_slice(self.value(k * factor));
        }
        for k in 0..steps {
            let (_, a) = self.window(k * factor, (k + 1) * factor)?;
            areas.extend(a);
        }
        Self::from_parts(self.horizon, steps, self.dim, values, areas, self.geometric)
    }

    /// Translation by `eps · V` where `perturbation` is a lift of a smooth
    /// path `V` on the same grid. Cross integrals are taken trapezoidally per
    /// step, which keeps weak geometricity exact.
    pub fn translate(&self, perturbation: &RoughPath, eps: f64) -> Result<RoughPath> {
        self.check_same_grid(perturbation)?;
        let n = self.dim;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&perturbation.values)
            .map(|(w, v)| w + eps * v)
            .collect();
        let mut areas = vec![0.0; self.areas.len()];
        let (mut dw, mut dv) = (vec![0.0; n], vec![0.0; n]);
        for k in 0..self.steps {
            self.increment_into(k, &mut dw);
            perturbation.increment_into(k, &mut dv);
            let (a, av) = (self.area(k), perturbation.area(k));
            for mu in 0..n {
                for nu in 0..n {
                    let e = mu * n + nu;
                    areas[k * n * n + e] = a[e]
                        + eps * eps * av[e]
                        + 0.5 * eps * (dv[mu] * dw[nu] + dw[mu] * dv[nu]);
                }
            }
        }
        Self::from_parts(
            self.horizon,
            self.steps,
            n,
            values,
            areas,
            self.geometric && perturbation.geometric,
        )
    }

    /// `(|δW|_α, |𝕎|_{2α})`: suprema of Hölder quotients over all grid pairs.
    pub fn holder_norms(&self, alpha: f64) -> Result<(f64, f64)> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("Hölder exponent {alpha} not in (0, 1]")));
        }
        let n = self.dim;
        let dt = self.dt();
        let (mut l1, mut l2): (f64, f64) = (0.0, 0.0);
        let mut inc = vec![0.0; n];
        let mut area = vec![0.0; n * n];
        let mut step = vec![0.0; n];
        for i in 0..self.steps {
            inc.iter_mut().for_each(|v| *v = 0.0);
            area.iter_mut().for_each(|v| *v = 0.0);
            for j in i + 1..=self.steps {
                self.accumulate(&mut inc, &mut area, &mut step, j - 1);
                let h = (j - i) as f64 * dt;
                l1 = l1.max(frobenius(&inc) / h.powf(alpha));
                l2 = l2.max(frobenius(&area) / h.powf(2.0 * alpha));
            }
        }
        Ok((l1, l2))
    }

    /// Inhomogeneous α-Hölder distance over all grid pairs.
    pub fn rho_alpha(&self, other: &RoughPath, alpha: f64) -> Result<RhoAlphaReport> {
        self.check_same_grid(other)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("Hölder exponent {alpha} not in (0, 1]")));
        }
        let n = self.dim;
        let dt = self.dt();
        let (mut l1, mut l2): (f64, f64) = (0.0, 0.0);
        let (mut ia, mut aa, mut sa) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; n]);
        let (mut ib, mut ab, mut sb) = (vec![0.0; n], vec![0.0; n * n], vec![0.0; n]);
        let mut diff = vec![0.0; n * n];
        for i in 0..self.steps {
            for v in ia.iter_mut().chain(ib.iter_mut()).chain(aa.iter_mut()).chain(ab.iter_mut()) {
                *v = 0.0;
            }
            for j in i + 1..=self.steps {
                self.accumulate(&mut ia, &mut aa, &mut sa, j - 1);
                other.accumulate(&mut ib, &mut ab, &mut sb, j - 1);
                let h = (j - i) as f64 * dt;
                for mu in 0..n {
                    diff[mu] = ia[mu] - ib[mu];
                }
                l1 = l1.max(frobenius(&diff[..n]) / h.powf(alpha));
                for e in 0..n * n {
                    diff[e] = aa[e] - ab[e];
                }
                l2 = l2.max(frobenius(&diff) / h.powf(2.0 * alpha));
            }
        }
        Ok(RhoAlphaReport { alpha, level1_dist: l1, level2_dist: l2, total: l1 + l2 })
    }

    /// CSV with header `t,W_1..W_n`.
    pub fn path_csv(&self) -> String {
        let mut s = String::from("t");
        for mu in 1..=self.dim {
            let _ = write!(s, ",W_{mu}");
        }
        s.push('\n');
        for k in 0..=self.steps {
            let _ = write!(s, "{}", self.time(k));
            for v in self.value(k) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// CSV with header `k,A_11..A_nn`.
    pub fn areas_csv(&self) -> String {
        let mut s = String::from("k");
        for mu in 1..=self.dim {
            for nu in 1..=self.dim {
                let _ = write!(s, ",A_{mu}{nu}");
            }
        }
        s.push('\n');
        for k in 0..self.steps {
            let _ = write!(s, "{k}");
            for v in self.area(k) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rough path serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rp: RoughPath = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParameter(format!("rough path JSON: {e}")))?;
        Self::from_parts(rp.horizon, rp.steps, rp.dim, rp.values, rp.areas, rp.geometric)
    }
}
