//! Checks that a tabulated surface solves the backward rough PDE
//!
//! ```text
//! −du_t = L_t u_t dt + Γ_t u_t d𝐖_t,   u_T = g,
//! ```
//!
//! with `L = ½ σσᵀ : D² + b·D + c`, `Γ_μ = β_μ·D + γ_μ` and
//! `Γ′_{μν} = β′_{μν}·D + γ′_{μν}`. Spatial derivatives of `u` are central
//! differences on the surface mesh; nodes closer than [`MARGIN`] cells to the
//! boundary carry `NaN`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::feynman_kac::{McConfig, SolutionSurface};
use crate::field::eval;
use crate::mcstats::{fit_positive, mean_stderr, SlopeFit};
use crate::mesh::Mesh;
use crate::roughpath::{RoughPath, SmoothPath};

/// Cells at the boundary without operator values.
pub const MARGIN: usize = 2;

fn strides(mesh: &Mesh) -> Vec<usize> {
    let p = mesh.points();
    let mut s = vec![1; p.len()];
    for a in (0..p.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * p[a + 1];
    }
    s
}

fn within(mesh: &Mesh, node: usize, margin: usize) -> bool {
    mesh.multi_index(node)
        .iter()
        .zip(mesh.points())
        .all(|(&i, &p)| i >= margin && i + margin < p)
}

fn check_mesh(mesh: &Mesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.len() {
        return Err(Error::DimensionMismatch(format!("{} values on a mesh of {}", values.len(), mesh.len())));
    }
    if mesh.points().iter().any(|&p| p < 2 * MARGIN + 1) {
        return Err(Error::InsufficientData(format!(
            "margin violation: every mesh axis needs at least {} points, got {:?}",
            2 * MARGIN + 1,
            mesh.points()
        )));
    }
    Ok(())
}

/// Central first differences `Du` at `node`.
fn gradient(mesh: &Mesh, st: &[usize], u: &[f64], node: usize, out: &mut [f64]) {
    for a in 0..mesh.dim() {
        let h = mesh.pitch(a);
        out[a] = (u[node + st[a]] - u[node - st[a]]) / (2.0 * h);
    }
}

/// Compact central second differences `D²u` at `node`.
fn hessian(mesh: &Mesh, st: &[usize], u: &[f64], node: usize, out: &mut [f64]) {
    let d = mesh.dim();
    for a in 0..d {
        let ha = mesh.pitch(a);
        out[a * d + a] = (u[node + st[a]] - 2.0 * u[node] + u[node - st[a]]) / (ha * ha);
        for b in a + 1..d {
            let hb = mesh.pitch(b);
            let v = (u[node + st[a] + st[b]] - u[node + st[a] - st[b]] - u[node - st[a] + st[b]]
                + u[node - st[a] - st[b]])
                / (4.0 * ha * hb);
            out[a * d + b] = v;
            out[b * d + a] = v;
        }
    }
}

/// Coefficient values at one `(t, x)`.
struct Local {
    b: Vec<f64>,
    sig: Vec<f64>,
    c: f64,
    beta: Vec<f64>,
    dbeta: Vec<f64>,
    betap: Vec<f64>,
    gam: Vec<f64>,
    dgam: Vec<f64>,
    gamp: Vec<f64>,
}

impl Local {
    fn at(cs: &CoefficientSet, t: f64, x: &[f64]) -> Result<Self> {
        let (d, n, m) = (cs.dim(), cs.rough_dim(), cs.noise_dim());
        let dy = &cs.dynamics;
        let mut l = Local {
            b: vec![0.0; d],
            sig: vec![0.0; d * m],
            c: 0.0,
            beta: vec![0.0; d * n],
            dbeta: vec![0.0; d * n * d],
            betap: vec![0.0; d * n * n],
            gam: vec![0.0; n],
            dgam: vec![0.0; n * d],
            gamp: vec![0.0; n * n],
        };
        eval(dy.b.as_ref(), 0, t, x, &mut l.b)?;
        eval(dy.sigma.as_ref(), 0, t, x, &mut l.sig)?;
        let mut c = [0.0];
        eval(cs.c.as_ref(), 0, t, x, &mut c)?;
        l.c = c[0];
        dy.beta.eval(0, t, x, &mut l.beta)?;
        dy.beta.eval(1, t, x, &mut l.dbeta)?;
        dy.beta.eval_prime(0, t, x, &mut l.betap)?;
        cs.gamma.eval(0, t, x, &mut l.gam)?;
        cs.gamma.eval(1, t, x, &mut l.dgam)?;
        cs.gamma.eval_prime(0, t, x, &mut l.gamp)?;
        Ok(l)
    }
}

/// `L_t u` on the mesh.
pub fn apply_l(mesh: &Mesh, u: &[f64], cs: &CoefficientSet, t: f64) -> Result<Vec<f64>> {
    check_mesh(mesh, u)?;
    let (d, m) = (cs.dim(), cs.noise_dim());
    let st = strides(mesh);
    (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            if !within(mesh, node, MARGIN) {
                return Ok(f64::NAN);
            }
            let x = mesh.node(node);
            let l = Local::at(cs, t, &x)?;
            let (mut du, mut d2u) = (vec![0.0; d], vec![0.0; d * d]);
            gradient(mesh, &st, u, node, &mut du);
            hessian(mesh, &st, u, node, &mut d2u);
            let mut v = l.c * u[node];
            for i in 0..d {
                v += l.b[i] * du[i];
                for j in 0..d {
                    let mut a = 0.0;
                    for al in 0..m {
                        a += l.sig[i * m + al] * l.sig[j * m + al];
                    }
                    v += 0.5 * a * d2u[i * d + j];
                }
            }
            Ok(v)
        })
        .collect()
}

/// `Γ_μ u` with `NaN` outside `margin`.
fn gamma_op(mesh: &Mesh, u: &[f64], cs: &CoefficientSet, t: f64, mu: usize, margin: usize) -> Result<Vec<f64>> {
    let (d, n) = (cs.dim(), cs.rough_dim());
    let st = strides(mesh);
    (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            if !within(mesh, node, margin) {
                return Ok(f64::NAN);
            }
            let l = Local::at(cs, t, &mesh.node(node))?;
            let mut du = vec![0.0; d];
            gradient(mesh, &st, u, node, &mut du);
            let mut v = l.gam[mu] * u[node];
            for i in 0..d {
                v += l.beta[i * n + mu] * du[i];
            }
            Ok(v)
        })
        .collect()
}

/// `Γ′_{μν} u`.
fn gamma_prime_op(mesh: &Mesh, u: &[f64], cs: &CoefficientSet, t: f64, mu: usize, nu: usize) -> Result<Vec<f64>> {
    let (d, n) = (cs.dim(), cs.rough_dim());
    let st = strides(mesh);
    (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            if !within(mesh, node, MARGIN) {
                return Ok(f64::NAN);
            }
            let l = Local::at(cs, t, &mesh.node(node))?;
            let mut du = vec![0.0; d];
            gradient(mesh, &st, u, node, &mut du);
            let mut v = l.gamp[mu * n + nu] * u[node];
            for i in 0..d {
                v += l.betap[(i * n + mu) * n + nu] * du[i];
            }
            Ok(v)
        })
        .collect()
}

fn check_pair(cs: &CoefficientSet, mu: usize, nu: usize) -> Result<()> {
    let n = cs.rough_dim();
    if mu >= n || nu >= n {
        return Err(Error::IndexOutOfRange(format!("(μ, ν) = ({mu}, {nu}) for n = {n}")));
    }
    Ok(())
}

/// `(Γ_μ u, (Γ_μΓ_ν − Γ′_{μν}) u)`, the composition assembled from its six
/// coordinate terms with analytic coefficient derivatives.
pub fn apply_gamma_pair(
    mesh: &Mesh,
    u: &[f64],
    cs: &CoefficientSet,
    t: f64,
    mu: usize,
    nu: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_mesh(mesh, u)?;
    check_pair(cs, mu, nu)?;
    let (d, n) = (cs.dim(), cs.rough_dim());
    let st = strides(mesh);
    let rows: Vec<Result<(f64, f64)>> = (0..mesh.len())
        .into_par_iter()
        .map(|node| {
            if !within(mesh, node, MARGIN) {
                return Ok((f64::NAN, f64::NAN));
            }
            let l = Local::at(cs, t, &mesh.node(node))?;
            let (mut du, mut d2u) = (vec![0.0; d], vec![0.0; d * d]);
            gradient(mesh, &st, u, node, &mut du);
            hessian(mesh, &st, u, node, &mut d2u);
            let f = u[node];
            let bm = |i: usize| l.beta[i * n + mu];
            let bn = |i: usize| l.beta[i * n + nu];
            let mut g1 = l.gam[mu] * f;
            let mut gg = l.gam[mu] * l.gam[nu] * f;
            for i in 0..d {
                g1 += bm(i) * du[i];
                gg += l.gam[mu] * bn(i) * du[i] + bm(i) * l.gam[nu] * du[i];
                for j in 0..d {
                    gg += bm(j) * l.dbeta[(i * n + nu) * d + j] * du[i];
                    gg += bm(j) * bn(i) * d2u[j * d + i];
                }
                gg += bm(i) * l.dgam[nu * d + i] * f;
            }
            gg -= l.gamp[mu * n + nu] * f;
            for i in 0..d {
                gg -= l.betap[(i * n + mu) * n + nu] * du[i];
            }
            Ok((g1, gg))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().unzip())
}

/// The same composition by applying the `Γ` stencil twice.
pub fn apply_gamma_pair_nested(
    mesh: &Mesh,
    u: &[f64],
    cs: &CoefficientSet,
    t: f64,
    mu: usize,
    nu: usize,
) -> Result<Vec<f64>> {
    check_mesh(mesh, u)?;
    check_pair(cs, mu, nu)?;
    let inner = gamma_op(mesh, u, cs, t, nu, 1)?;
    let outer = gamma_op(mesh, &inner, cs, t, mu, MARGIN)?;
    let prime = gamma_prime_op(mesh, u, cs, t, mu, nu)?;
    Ok(outer.iter().zip(&prime).map(|(a, b)| a - b).collect())
}

/// `Σ_μ Γ_μ u · δW^μ + Σ_{μν} (Γ_μΓ_ν − Γ′_{μν}) u · 𝕎^{μν}`.
fn rough_terms(mesh: &Mesh, u: &[f64], cs: &CoefficientSet, t: f64, dw: &[f64], area: &[f64]) -> Result<Vec<f64>> {
    let n = cs.rough_dim();
    let mut out = vec![0.0; mesh.len()];
    if cs.dynamics.beta.is_zero() && cs.gamma.is_zero() {
        return Ok(out);
    }
    for mu in 0..n {
        for nu in 0..n {
            let (g1, gg) = apply_gamma_pair(mesh, u, cs, t, mu, nu)?;
            for (k, o) in out.iter_mut().enumerate() {
                if nu == 0 {
                    *o += g1[k] * dw[mu];
                }
                *o += gg[k] * area[mu * n + nu];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub h: f64,
    pub sup_residual: f64,
    pub noise_floor: f64,
}

/// Suprema over the mesh, averaged per time span, with a log-log fit over
/// the rows above three times their noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    pub slope: Option<SlopeFit>,
    /// Rows entering the fit.
    pub fitted: usize,
}

impl ResidualReport {
    fn from_rows(mut rows: Vec<ResidualRow>) -> Self {
        rows.sort_by(|a, b| a.h.total_cmp(&b.h));
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.sup_residual > 3.0 * r.noise_floor)
            .map(|r| (r.h, r.sup_residual))
            .collect();
        let fitted = pairs.iter().filter(|(h, y)| *h > 0.0 && *y > 0.0 && y.is_finite()).count();
        ResidualReport { slope: fit_positive(&pairs), rows, fitted }
    }

    /// CSV `h,sup_residual,noise_floor,slope`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,sup_residual,noise_floor,slope\n");
        let slope = self.slope.map_or(f64::NAN, |f| f.slope);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.h, r.sup_residual, r.noise_floor, slope);
        }
        s
    }

    /// Average reports over independent driver realizations, span by span,
    /// and refit. A single path gives erratic slopes because the realized
    /// increments wander around their moments.
    pub fn pooled(reports: &[ResidualReport]) -> Self {
        let rows = reports.iter().flat_map(|r| r.rows.iter().copied()).collect();
        Self::from_rows(merge_rows(rows))
    }

    /// Every residual vanishes (to `tol`).
    pub fn is_null(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.sup_residual <= tol)
    }
}

fn slice(surface: &SolutionSurface, node: usize) -> Result<usize> {
    surface
        .slice_index(node)
        .ok_or_else(|| Error::InsufficientData(format!("no surface slice at node {node}")))
}

fn sup_interior(mesh: &Mesh, v: impl Fn(usize) -> f64) -> f64 {
    (0..mesh.len())
        .filter(|&k| within(mesh, k, MARGIN))
        .map(|k| v(k).abs())
        .fold(0.0, f64::max)
}

/// Average rows of equal span: a single driver realization makes the
/// maximum over many windows grow with their number, the mean does not.
fn merge_rows(raw: Vec<ResidualRow>) -> Vec<ResidualRow> {
    let mut groups: Vec<(ResidualRow, usize)> = Vec::new();
    for r in raw {
        match groups.iter_mut().find(|(o, _)| (o.h - r.h).abs() <= 1e-12 * r.h.max(1.0)) {
            Some((o, count)) => {
                o.sup_residual += r.sup_residual;
                o.noise_floor += r.noise_floor;
                *count += 1;
            }
            None => groups.push((r, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(r, c)| ResidualRow {
            h: r.h,
            sup_residual: r.sup_residual / c as f64,
            noise_floor: r.noise_floor / c as f64,
        })
        .collect()
}

/// `sup_x |u^♮_{s,t}(x)|` for each grid-node pair `(s, t)`, averaged over
/// pairs of equal span, with
///
/// ```text
/// u^♮_{s,t} = u_s − u_t − ∫_s^t L_r u_r dr − Γ_t u_t δW_{s,t} − (Γ_tΓ_t − Γ′_t) u_t 𝕎_{s,t}.
/// ```
///
/// The time integral is the trapezoid rule over the surface slices in
/// `[s, t]`. The noise floor of a pair is `sup_x (se_s + se_t)`.
pub fn davie_residual_of_u(
    surface: &SolutionSurface,
    cs: &CoefficientSet,
    driver: &RoughPath,
    pairs: &[(usize, usize)],
) -> Result<ResidualReport> {
    let mesh = &surface.mesh;
    let mut raw = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        if s > t || t > driver.steps() {
            return Err(Error::IndexOutOfRange(format!("pair ({s}, {t}) on {} steps", driver.steps())));
        }
        let (is, it) = (slice(surface, s)?, slice(surface, t)?);
        let (us, ut) = (surface.u_slice(is), surface.u_slice(it));
        let (ses, set) = (surface.se_slice(is), surface.se_slice(it));
        let mut knots: Vec<usize> = surface.s_nodes.iter().copied().filter(|&k| k >= s && k <= t).collect();
        knots.sort_unstable();
        knots.dedup();
        let mut integral = vec![0.0; mesh.len()];
        let mut prev: Option<(f64, Vec<f64>)> = None;
        for &k in &knots {
            let tk = driver.time(k);
            let lu = apply_l(mesh, &surface.u_slice(slice(surface, k)?), cs, tk)?;
            if let Some((tp, lp)) = &prev {
                for (acc, (a, b)) in integral.iter_mut().zip(lp.iter().zip(&lu)) {
                    *acc += 0.5 * (tk - tp) * (a + b);
                }
            }
            prev = Some((tk, lu));
        }
        let (dw, area) = driver.window(s, t)?;
        let rough = rough_terms(mesh, &ut, cs, driver.time(t), &dw, &area)?;
        let sup = sup_interior(mesh, |k| us[k] - ut[k] - integral[k] - rough[k]);
        let floor = sup_interior(mesh, |k| ses[k] + set[k]);
        raw.push(ResidualRow { h: driver.time(t) - driver.time(s), sup_residual: sup, noise_floor: floor });
    }
    Ok(ResidualReport::from_rows(merge_rows(raw)))
}

/// Hölder quotients of the controlledness conditions on `Γu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionIiReport {
    pub mu: usize,
    /// `sup_{x,ν} |(Γ_sΓ_s − Γ′_s)_{μν} u_s − (Γ_tΓ_t − Γ′_t)_{μν} u_t|`.
    pub first: ResidualReport,
    /// `sup_x |Γ_t u_t − Γ_s u_s + (Γ_tΓ_t − Γ′_t)_{μν} u_t δW^ν_{s,t}|`.
    pub second: ResidualReport,
    pub alpha_prime: f64,
    pub alpha_second: f64,
}

impl ConditionIiReport {
    /// Pool both families over driver realizations, see
    /// [`ResidualReport::pooled`].
    pub fn pooled(reports: &[ConditionIiReport]) -> Option<Self> {
        let first = reports.first()?;
        let firsts: Vec<_> = reports.iter().map(|r| r.first.clone()).collect();
        let seconds: Vec<_> = reports.iter().map(|r| r.second.clone()).collect();
        Some(ConditionIiReport {
            mu: first.mu,
            first: ResidualReport::pooled(&firsts),
            second: ResidualReport::pooled(&seconds),
            alpha_prime: first.alpha_prime,
            alpha_second: first.alpha_second,
        })
    }

    /// Fitted slopes reach `α′ − tol` and `α′ + α″ − tol`; a family without
    /// positive entries (identically zero quotients) passes.
    pub fn meets(&self, tol: f64) -> bool {
        let ok = |r: &ResidualReport, target: f64| match r.slope {
            Some(f) => f.slope >= target - tol,
            None => r.is_null(1e-12),
        };
        ok(&self.first, self.alpha_prime) && ok(&self.second, self.alpha_prime + self.alpha_second)
    }
}

pub fn condition_ii_check(
    surface: &SolutionSurface,
    cs: &CoefficientSet,
    driver: &RoughPath,
    mu: usize,
    pairs: &[(usize, usize)],
) -> Result<ConditionIiReport> {
    let n = cs.rough_dim();
    check_pair(cs, mu, 0)?;
    let mesh = &surface.mesh;
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for &(s, t) in pairs {
        if s > t || t > driver.steps() {
            return Err(Error::IndexOutOfRange(format!("pair ({s}, {t}) on {} steps", driver.steps())));
        }
        let (is, it) = (slice(surface, s)?, slice(surface, t)?);
        let (us, ut) = (surface.u_slice(is), surface.u_slice(it));
        let (ts, tt) = (driver.time(s), driver.time(t));
        let floor = sup_interior(mesh, |k| surface.se_slice(is)[k] + surface.se_slice(it)[k]);
        let (dw, _) = driver.window(s, t)?;
        let mut sup1 = 0.0f64;
        let mut comb = vec![0.0; mesh.len()];
        let mut g_s = Vec::new();
        let mut g_t = Vec::new();
        for nu in 0..n {
            let (gs, ggs) = apply_gamma_pair(mesh, &us, cs, ts, mu, nu)?;
            let (gt, ggt) = apply_gamma_pair(mesh, &ut, cs, tt, mu, nu)?;
            sup1 = sup1.max(sup_interior(mesh, |k| ggs[k] - ggt[k]));
            for k in 0..mesh.len() {
                comb[k] += ggt[k] * dw[nu];
            }
            if nu == 0 {
                g_s = gs;
                g_t = gt;
            }
        }
        let sup2 = sup_interior(mesh, |k| g_t[k] - g_s[k] + comb[k]);
        let h = tt - ts;
        first.push(ResidualRow { h, sup_residual: sup1, noise_floor: floor });
        second.push(ResidualRow { h, sup_residual: sup2, noise_floor: floor });
    }
    Ok(ConditionIiReport {
        mu,
        first: ResidualReport::from_rows(merge_rows(first)),
        second: ResidualReport::from_rows(merge_rows(second)),
        alpha_prime: cs.exponents.alpha_prime(),
        alpha_second: cs.exponents.alpha_second(),
    })
}

/// Pairs `(k, k + h)` for dyadic spans `h ≤ (end − start) / 2`, tiling
/// `[start, end]` without overlap.
pub fn dyadic_pairs(start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut h = 1;
    while 2 * h <= end - start {
        out.extend((start..=end - h).step_by(h).map(|k| (k, k + h)));
        h *= 2;
    }
    out
}

/// Rough versus classical Feynman–Kac on a smooth driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothComparisonRow {
    pub x: Vec<f64>,
    pub rough: f64,
    pub classical: f64,
    pub combined_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothComparison {
    pub rows: Vec<SmoothComparisonRow>,
    pub sup_diff: f64,
    /// Largest combined standard error over the mesh.
    pub combined_se: f64,
}

/// Classical weighted expectation with `dW → Ẇ dt`: the drift
/// `b + β Ẇ` and the rate `c + γ Ẇ` are integrated by Heun's method on
/// `refine` sub-steps per grid step, `σ dB` by Euler with the same fine
/// Brownian draws as the rough run.
pub fn classical_estimate(
    cs: &CoefficientSet,
    path: SmoothPath,
    driver: &RoughPath,
    s_node: usize,
    x: &[f64],
    refine: usize,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    let (d, n, m) = (cs.dim(), cs.rough_dim(), cs.noise_dim());
    if refine == 0 {
        return Err(Error::InvalidParameter("refine must be positive".into()));
    }
    let steps = (driver.steps() - s_node) * refine;
    let (t0, horizon) = (driver.time(s_node), driver.horizon());
    let dt = driver.dt() / refine as f64;
    let dy = &cs.dynamics;
    let rate = |t: f64, y: &[f64], out: &mut [f64], buf: &mut Local2| -> Result<()> {
        path.derivative(t, &mut buf.wdot);
        eval(dy.b.as_ref(), 0, t, y, &mut buf.b)?;
        dy.beta.eval(0, t, y, &mut buf.beta)?;
        let mut c = [0.0];
        eval(cs.c.as_ref(), 0, t, y, &mut c)?;
        cs.gamma.eval(0, t, y, &mut buf.gam)?;
        for i in 0..d {
            let mut v = buf.b[i];
            for nu in 0..n {
                v += buf.beta[i * n + nu] * buf.wdot[nu];
            }
            out[i] = v;
        }
        let mut r = c[0];
        for nu in 0..n {
            r += buf.gam[nu] * buf.wdot[nu];
        }
        out[d] = r;
        Ok(())
    };
    let noise = cfg.noise;
    let samples: Vec<Result<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map_init(
            || Local2::new(d, n, m, steps),
            |buf, p| {
                noise.fill(p, m, steps, dt, &mut buf.db);
                let mut y = x.to_vec();
                let mut i_val = 0.0;
                let (mut k1, mut k2) = (vec![0.0; d + 1], vec![0.0; d + 1]);
                let (mut pred, mut kick) = (vec![0.0; d], vec![0.0; d]);
                let mut sig = vec![0.0; d * m];
                for k in 0..steps {
                    let t = t0 + k as f64 * dt;
                    let t1 = (t0 + (k + 1) as f64 * dt).min(horizon);
                    rate(t, &y, &mut k1, buf)?;
                    eval(dy.sigma.as_ref(), 0, t, &y, &mut sig)?;
                    for i in 0..d {
                        kick[i] = (0..m).map(|a| sig[i * m + a] * buf.db[k * m + a]).sum();
                        pred[i] = y[i] + k1[i] * dt + kick[i];
                    }
                    rate(t1, &pred, &mut k2, buf)?;
                    for i in 0..d {
                        y[i] += 0.5 * (k1[i] + k2[i]) * dt + kick[i];
                    }
                    i_val += 0.5 * (k1[d] + k2[d]) * dt;
                }
                if y.iter().any(|v| !v.is_finite()) || !i_val.is_finite() {
                    return Err(Error::NonFinite { path: p, step: steps });
                }
                let mut g = [0.0];
                eval(cs.g.as_ref(), 0, horizon, &y, &mut g)?;
                Ok(g[0] * i_val.exp())
            },
        )
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&samples))
}

struct Local2 {
    wdot: Vec<f64>,
    b: Vec<f64>,
    beta: Vec<f64>,
    gam: Vec<f64>,
    db: Vec<f64>,
}

impl Local2 {
    fn new(d: usize, n: usize, m: usize, steps: usize) -> Self {
        Self {
            wdot: vec![0.0; n],
            b: vec![0.0; d],
            beta: vec![0.0; d * n],
            gam: vec![0.0; n],
            db: vec![0.0; steps * m],
        }
    }
}

/// Compare the rough estimator on `driver` (a canonical lift of `path`) with
/// [`classical_estimate`] over `mesh`. The rough run uses Brownian
/// increments aggregated from the same fine draws.
pub fn smooth_case_reference(
    cs: &CoefficientSet,
    path: SmoothPath,
    driver: &RoughPath,
    s_node: usize,
    mesh: &Mesh,
    refine: usize,
    cfg: &McConfig,
) -> Result<SmoothComparison> {
    if !driver.is_geometric() {
        return Err(Error::Assumption("smooth-case comparison needs a geometric driver".into()));
    }
    let rough_cfg = McConfig { noise: cfg.noise.with_refine(refine), ..*cfg };
    let mut rows = Vec::with_capacity(mesh.len());
    for x in mesh.nodes() {
        let e = crate::feynman_kac::estimate(cs, driver, s_node, &x, 0, &rough_cfg)?;
        let (c, c_se) = classical_estimate(cs, path, driver, s_node, &x, refine, cfg)?;
        rows.push(SmoothComparisonRow { x, rough: e.u, classical: c, combined_se: e.u_se.hypot(c_se) });
    }
    let sup_diff = rows.iter().map(|r| (r.rough - r.classical).abs()).fold(0.0, f64::max);
    let combined_se = rows.iter().map(|r| r.combined_se).fold(0.0, f64::max);
    Ok(SmoothComparison { rows, sup_diff, combined_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Dynamics, Exponents};
    use crate::controlled::ControlledVectorField;
    use crate::field::{Profile, RidgeField};

    fn scalar_set(b: f64, sigma: f64, c: RidgeField, beta: f64, gamma: f64) -> CoefficientSet {
        let k = |name: &str, v: f64| RidgeField::new(name, 1, 1).constant(0, v).into_ref();
        let dy = Dynamics::new(
            RidgeField::new("b", 1, 1).constant(0, b).into_ref(),
            k("sigma", sigma),
            ControlledVectorField::time_homogeneous(k("beta", beta), 1).unwrap(),
            1,
        )
        .unwrap();
        CoefficientSet::new(
            dy,
            c.into_ref(),
            ControlledVectorField::time_homogeneous(k("gamma", gamma), 1).unwrap(),
            k("g", 1.0),
            Exponents::defaults(0.45),
        )
        .unwrap()
    }

    fn interior(mesh: &Mesh, v: &[f64]) -> Vec<(f64, f64)> {
        (0..mesh.len())
            .filter(|&k| within(mesh, k, MARGIN))
            .map(|k| (mesh.node(k)[0], v[k]))
            .collect()
    }

    #[test]
    fn l_on_polynomials() {
        let mesh = Mesh::line(-1.0, 1.0, 21).unwrap();
        let x2: Vec<f64> = mesh.nodes().iter().map(|x| x[0] * x[0]).collect();
        let cs = scalar_set(0.0, 1.0, RidgeField::zero("c", 1, 1), 0.0, 0.0);
        for (_, v) in interior(&mesh, &apply_l(&mesh, &x2, &cs, 0.0).unwrap()) {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let ones = vec![1.0; mesh.len()];
        let c = RidgeField::new("c", 1, 1).coordinate(0, 0, 0.7, Profile::Sin);
        let cs = scalar_set(0.0, 1.0, c, 0.0, 0.0);
        for (x, v) in interior(&mesh, &apply_l(&mesh, &ones, &cs, 0.0).unwrap()) {
            assert!((v - 0.7 * x.sin()).abs() < 1e-15);
        }
        let x3: Vec<f64> = mesh.nodes().iter().map(|x| x[0].powi(3)).collect();
        let cs = scalar_set(1.0, 0.0, RidgeField::zero("c", 1, 1), 0.0, 0.0);
        let h = mesh.pitch(0);
        for (x, v) in interior(&mesh, &apply_l(&mesh, &x3, &cs, 0.0).unwrap()) {
            // The central first difference of x³ is 3x² + h².
            assert!((v - 3.0 * x * x - h * h).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_special_cases() {
        let mesh = Mesh::line(-1.0, 1.0, 41).unwrap();
        let u: Vec<f64> = mesh.nodes().iter().map(|x| x[0] * x[0]).collect();
        let cs = scalar_set(0.0, 0.0, RidgeField::zero("c", 1, 1), 1.0, 0.0);
        let (g1, _) = apply_gamma_pair(&mesh, &u, &cs, 0.0, 0, 0).unwrap();
        for (x, v) in interior(&mesh, &g1) {
            assert!((v - 2.0 * x).abs() < 1e-12);
        }
        let cs = scalar_set(0.0, 0.0, RidgeField::zero("c", 1, 1), 0.0, 0.3);
        let (g1, gg) = apply_gamma_pair(&mesh, &u, &cs, 0.0, 0, 0).unwrap();
        for (k, x) in mesh.nodes().iter().enumerate().filter(|(k, _)| within(&mesh, *k, MARGIN)) {
            assert_eq!(g1[k], 0.3 * u[k]);
            assert!((gg[k] - 0.09 * x[0] * x[0]).abs() < 1e-15);
        }
        assert!(g1[0].is_nan() && g1[mesh.len() - 1].is_nan());
    }

    #[test]
    fn narrow_mesh_is_rejected() {
        let mesh = Mesh::line(0.0, 1.0, 4).unwrap();
        let cs = scalar_set(0.0, 1.0, RidgeField::zero("c", 1, 1), 0.0, 0.0);
        assert!(matches!(apply_l(&mesh, &[0.0; 4], &cs, 0.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn dyadic_pairs_tile_the_interval() {
        assert_eq!(
            dyadic_pairs(0, 4),
            vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (2, 4)]
        );
    }
}
