//! Monte Carlo evaluation of
//!
//! ```text
//! u(s, x) = E[ g(X^{s,x}_{T−s}) exp(I^{s,x}_{T−s}) ]
//! ```
//!
//! where `X^{s,x}` solves the hybrid equation driven by the shifted driver
//! `𝐖^s` and `I = ∫ c dr + ∫ (γ, Dγ β + γ′)(X) d𝐖^s`. Gradients and Hessians
//! use the first and second variations of `X` and of `I`; every estimator
//! streams paths, so no trajectories are kept.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::coefficients::{CoefficientSet, Dynamics, Exponents};
use crate::error::{Error, Result};
use crate::field::eval;
use crate::mcstats::{mean_stderr, pairwise_sum, tags};
use crate::mesh::Mesh;
use crate::roughpath::{RhoAlphaReport, RoughPath};
use crate::rsde::{coef_time, HybridPathEnsemble, NoiseSpec};
use crate::scheme::{
    davie_step, pair_index, second_variation_forcing, second_weight_increment, sym, tangent_weight_increment,
    upper_pairs, weight_step, Jets, LinearStep, SecondOrderScratch, StepNoise,
};

/// Exponent `I` (`paths × nodes`) and its Gubinelli derivative `γ(X)`
/// (`paths × nodes × n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProcess {
    paths: usize,
    nodes: usize,
    rough_dim: usize,
    i: Vec<f64>,
    ip: Vec<f64>,
}

impl WeightProcess {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn exponent(&self, path: usize, k: usize) -> f64 {
        self.i[path * self.nodes + k]
    }

    pub fn terminal(&self, path: usize) -> f64 {
        self.exponent(path, self.nodes - 1)
    }

    pub fn gubinelli(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.nodes + k) * self.rough_dim;
        &self.ip[o..o + self.rough_dim]
    }

    /// `sup_k |I_k|` per path.
    pub fn sup_abs(&self) -> Vec<f64> {
        self.i
            .chunks_exact(self.nodes)
            .map(|row| row.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .collect()
    }
}

/// `I` along a stored ensemble solved on `rp` (the shifted driver).
pub fn weight_process(ens: &HybridPathEnsemble, cs: &CoefficientSet, rp: &RoughPath) -> Result<WeightProcess> {
    let (d, n) = (cs.dim(), cs.rough_dim());
    if ens.dim() != d || ens.rough_dim() != n || rp.dim() != n || ens.steps() > rp.steps() {
        return Err(Error::DimensionMismatch("ensemble, coefficients and driver disagree".into()));
    }
    let nodes = ens.nodes();
    let (dt, horizon, t0) = (rp.dt(), rp.horizon(), ens.start_time());
    let dy = &cs.dynamics;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut jets = Jets::for_dynamics(dy);
            let mut i = vec![0.0; nodes];
            let mut ip = vec![0.0; nodes * n];
            let mut dw = vec![0.0; n];
            for k in 0..nodes {
                let t = coef_time(t0, k, dt, horizon);
                jets.fill_dynamics(dy, t, ens.x(p, k), 0)?;
                jets.fill_weight(cs, t, ens.x(p, k), 0)?;
                if !jets.weight_zero {
                    ip[k * n..(k + 1) * n].copy_from_slice(&jets.gam);
                }
                if k + 1 < nodes {
                    rp.increment_into(k, &mut dw);
                    let noise = StepNoise { dt, db: &[], dw: &dw, area: rp.area(k) };
                    i[k + 1] = weight_step(&jets, i[k], noise);
                }
            }
            Ok((i, ip))
        })
        .collect();
    let mut i = Vec::with_capacity(ens.paths() * nodes);
    let mut ip = Vec::with_capacity(ens.paths() * nodes * n);
    for r in rows {
        let (a, b) = r?;
        i.extend(a);
        ip.extend(b);
    }
    Ok(WeightProcess { paths: ens.paths(), nodes, rough_dim: n, i, ip })
}

/// Monte Carlo settings: number of paths and the noise substreams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub paths: usize,
    pub noise: NoiseSpec,
    /// Reuse one set of paths at every mesh point.
    pub common_random_numbers: bool,
}

impl McConfig {
    pub fn new(paths: usize, noise: NoiseSpec) -> Self {
        Self { paths, noise, common_random_numbers: true }
    }

    fn for_mesh(&self, mesh_index: usize) -> NoiseSpec {
        if self.common_random_numbers {
            self.noise
        } else {
            self.noise.with_mesh(mesh_index as u64)
        }
    }
}

/// Estimates at one `(s, x)`; derivative entries are empty below the
/// requested order. The Hessian is `d × d` and exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub u: f64,
    pub u_se: f64,
    pub grad: Vec<f64>,
    pub grad_se: Vec<f64>,
    pub hess: Vec<f64>,
    pub hess_se: Vec<f64>,
}

/// Per-thread buffers for one streamed path.
struct Workspace {
    jets: Jets,
    ly: LinearStep,
    lz: LinearStep,
    sc: SecondOrderScratch,
    x: Vec<f64>,
    xn: Vec<f64>,
    y: Vec<f64>,
    yn: Vec<f64>,
    z: Vec<f64>,
    zn: Vec<f64>,
    j: Vec<f64>,
    dj: Vec<f64>,
    k: Vec<f64>,
    dk: Vec<f64>,
    db: Vec<f64>,
    dw: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl Workspace {
    fn new(cs: &CoefficientSet, steps: usize) -> Self {
        let (d, n, m) = (cs.dim(), cs.rough_dim(), cs.noise_dim());
        let pairs = upper_pairs(d);
        let np = pairs.len();
        Self {
            jets: Jets::for_dynamics(&cs.dynamics),
            ly: LinearStep::new(d, n, m, d),
            lz: LinearStep::new(d, n, m, np),
            sc: SecondOrderScratch::new(d, n),
            x: vec![0.0; d],
            xn: vec![0.0; d],
            y: vec![0.0; d * d],
            yn: vec![0.0; d * d],
            z: vec![0.0; d * np],
            zn: vec![0.0; d * np],
            j: vec![0.0; d],
            dj: vec![0.0; d],
            k: vec![0.0; np],
            dk: vec![0.0; np],
            db: vec![0.0; steps * m],
            dw: vec![0.0; n],
            pairs,
        }
    }
}

/// Terminal state of one streamed path: `X`, `I` and, by order, `Y, J, Z, K`.
fn stream_path(
    cs: &CoefficientSet,
    rp: &RoughPath,
    t0: f64,
    steps: usize,
    x0: &[f64],
    order: usize,
    ws: &mut Workspace,
) -> Result<f64> {
    let (d, m) = (cs.dim(), cs.noise_dim());
    let (dt, horizon) = (rp.dt(), rp.horizon());
    let dy = &cs.dynamics;
    ws.x.copy_from_slice(x0);
    let mut i_val = 0.0;
    if order >= 1 {
        ws.y.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..d {
            ws.y[a * d + a] = 1.0;
        }
        ws.j.iter_mut().for_each(|v| *v = 0.0);
    }
    if order >= 2 {
        ws.z.iter_mut().for_each(|v| *v = 0.0);
        ws.k.iter_mut().for_each(|v| *v = 0.0);
    }
    for step in 0..steps {
        let t = coef_time(t0, step, dt, horizon);
        ws.jets.fill_dynamics(dy, t, &ws.x, order)?;
        ws.jets.fill_weight(cs, t, &ws.x, order)?;
        rp.increment_into(step, &mut ws.dw);
        let noise = StepNoise { dt, db: &ws.db[step * m..(step + 1) * m], dw: &ws.dw, area: rp.area(step) };
        davie_step(&ws.jets, &ws.x, noise, &mut ws.xn);
        let i_next = weight_step(&ws.jets, i_val, noise);
        if order >= 1 {
            ws.ly.tangent_of(&ws.jets);
            tangent_weight_increment(&ws.jets, &ws.y, noise, &mut ws.dj, &mut ws.sc);
            if order >= 2 {
                ws.lz.tangent_of(&ws.jets);
                second_variation_forcing(&ws.jets, &ws.y, &ws.pairs, noise, &mut ws.lz, &mut ws.sc);
                second_weight_increment(&ws.jets, &ws.y, &ws.z, &ws.pairs, noise, &mut ws.dk, &mut ws.sc);
                ws.lz.step(&ws.z, noise, &mut ws.zn);
                std::mem::swap(&mut ws.z, &mut ws.zn);
                for (k, dk) in ws.k.iter_mut().zip(&ws.dk) {
                    *k += dk;
                }
            }
            ws.ly.step(&ws.y, noise, &mut ws.yn);
            std::mem::swap(&mut ws.y, &mut ws.yn);
            for (j, dj) in ws.j.iter_mut().zip(&ws.dj) {
                *j += dj;
            }
        }
        std::mem::swap(&mut ws.x, &mut ws.xn);
        i_val = i_next;
        if ws.x.iter().any(|v| !v.is_finite()) || !i_val.is_finite() {
            return Err(Error::NonFinite { path: 0, step: step + 1 });
        }
    }
    Ok(i_val)
}

/// Per-path estimator samples `[u, ∂_i u.., ∂_{ab} u (a ≤ b)..]`.
fn path_samples(cs: &CoefficientSet, t: f64, i_val: f64, order: usize, ws: &Workspace, out: &mut Vec<f64>) -> Result<()> {
    let d = cs.dim();
    let mut g = [0.0];
    eval(cs.g.as_ref(), 0, t, &ws.x, &mut g)?;
    let e = i_val.exp();
    let g = g[0];
    out.push(g * e);
    if order == 0 {
        return Ok(());
    }
    let mut dg = vec![0.0; d];
    eval(cs.g.as_ref(), 1, t, &ws.x, &mut dg)?;
    let col = |a: usize| -> Vec<f64> { (0..d).map(|r| ws.y[r * d + a]).collect() };
    let dgy: Vec<f64> = (0..d)
        .map(|a| (0..d).map(|r| dg[r] * ws.y[r * d + a]).sum::<f64>())
        .collect();
    for a in 0..d {
        out.push((dgy[a] + g * ws.j[a]) * e);
    }
    if order == 1 {
        return Ok(());
    }
    let mut d2g = vec![0.0; d * d];
    eval(cs.g.as_ref(), 2, t, &ws.x, &mut d2g)?;
    let np = ws.pairs.len();
    for (p, &(a, b)) in ws.pairs.iter().enumerate() {
        let (ua, ub) = (col(a), col(b));
        let mut v = sym(&d2g, d, &ua, &ub);
        for r in 0..d {
            v += dg[r] * ws.z[r * np + p];
        }
        v += dgy[a] * ws.j[b] + dgy[b] * ws.j[a] + g * ws.k[p] + g * ws.j[a] * ws.j[b];
        out.push(v * e);
    }
    Ok(())
}

fn with_path(e: Error, path: usize) -> Error {
    match e {
        Error::NonFinite { step, .. } => Error::NonFinite { path, step },
        other => other,
    }
}

fn exact_terminal(cs: &CoefficientSet, t: f64, x: &[f64], order: usize) -> Result<PointEstimate> {
    let d = cs.dim();
    let mut u = [0.0];
    eval(cs.g.as_ref(), 0, t, x, &mut u)?;
    let mut out = PointEstimate { u: u[0], u_se: 0.0, grad: vec![], grad_se: vec![], hess: vec![], hess_se: vec![] };
    if order >= 1 {
        out.grad = vec![0.0; d];
        eval(cs.g.as_ref(), 1, t, x, &mut out.grad)?;
        out.grad_se = vec![0.0; d];
    }
    if order >= 2 {
        out.hess = vec![0.0; d * d];
        eval(cs.g.as_ref(), 2, t, x, &mut out.hess)?;
        for a in 0..d {
            for b in 0..a {
                let v = 0.5 * (out.hess[a * d + b] + out.hess[b * d + a]);
                out.hess[a * d + b] = v;
                out.hess[b * d + a] = v;
            }
        }
        out.hess_se = vec![0.0; d * d];
    }
    Ok(out)
}

fn check_estimate(cs: &CoefficientSet, driver: &RoughPath, s_node: usize, x: &[f64], order: usize) -> Result<()> {
    if s_node > driver.steps() {
        return Err(Error::IndexOutOfRange(format!(
            "s node {s_node} beyond horizon node {}",
            driver.steps()
        )));
    }
    if x.len() != cs.dim() || driver.dim() != cs.rough_dim() {
        return Err(Error::DimensionMismatch(format!(
            "x in ℝ^{} / driver dim {} for d = {}, n = {}",
            x.len(),
            driver.dim(),
            cs.dim(),
            cs.rough_dim()
        )));
    }
    if order > 2 {
        return Err(Error::InvalidParameter(format!("derivative order {order} > 2")));
    }
    Ok(())
}

/// Per-path samples for `(s, x)` on the already shifted driver `shifted`.
fn sample_matrix(
    cs: &CoefficientSet,
    shifted: &RoughPath,
    t0: f64,
    steps: usize,
    x: &[f64],
    order: usize,
    paths: usize,
    noise: &NoiseSpec,
) -> Result<Vec<Vec<f64>>> {
    let m = cs.noise_dim();
    let horizon = shifted.horizon();
    // Probe the derivative callbacks once before going parallel.
    let mut probe = Jets::for_dynamics(&cs.dynamics);
    probe.fill_dynamics(&cs.dynamics, t0, x, order)?;
    probe.fill_weight(cs, t0, x, order)?;
    let rows: Vec<Result<Vec<f64>>> = (0..paths)
        .into_par_iter()
        .map_init(
            || Workspace::new(cs, steps),
            |ws, p| {
                noise.fill(p, m, steps, shifted.dt(), &mut ws.db);
                let i_val = stream_path(cs, shifted, t0, steps, x, order, ws).map_err(|e| with_path(e, p))?;
                let mut out = Vec::with_capacity(1 + cs.dim() + ws.pairs.len());
                path_samples(cs, coef_time(t0, steps, shifted.dt(), horizon), i_val, order, ws, &mut out)?;
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { path: p, step: steps });
                }
                Ok(out)
            },
        )
        .collect();
    rows.into_iter().collect()
}

fn reduce(cs: &CoefficientSet, rows: &[Vec<f64>], order: usize) -> PointEstimate {
    let d = cs.dim();
    let column = |c: usize| -> (f64, f64) {
        let xs: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        mean_stderr(&xs)
    };
    let (u, u_se) = column(0);
    let mut out = PointEstimate { u, u_se, grad: vec![], grad_se: vec![], hess: vec![], hess_se: vec![] };
    if order >= 1 {
        for a in 0..d {
            let (v, se) = column(1 + a);
            out.grad.push(v);
            out.grad_se.push(se);
        }
    }
    if order >= 2 {
        out.hess = vec![0.0; d * d];
        out.hess_se = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let (v, se) = column(1 + d + pair_index(d, a, b));
                out.hess[a * d + b] = v;
                out.hess_se[a * d + b] = se;
            }
        }
    }
    out
}

/// `u(s, x)` and, up to `order`, its gradient and Hessian at `s = t_{s_node}`.
pub fn estimate(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_node: usize,
    x: &[f64],
    order: usize,
    cfg: &McConfig,
) -> Result<PointEstimate> {
    check_estimate(cs, driver, s_node, x, order)?;
    let steps = driver.steps() - s_node;
    let t0 = driver.time(s_node);
    if steps == 0 {
        return exact_terminal(cs, driver.horizon(), x, order);
    }
    let shifted = driver.shift(s_node)?;
    let rows = sample_matrix(cs, &shifted, t0, steps, x, order, cfg.paths, &cfg.noise)?;
    Ok(reduce(cs, &rows, order))
}

/// `(û(s, x), stderr)`.
pub fn estimate_u(cs: &CoefficientSet, driver: &RoughPath, s_node: usize, x: &[f64], cfg: &McConfig) -> Result<(f64, f64)> {
    let e = estimate(cs, driver, s_node, x, 0, cfg)?;
    Ok((e.u, e.u_se))
}

/// `(∇û(s, x), stderr per entry)`.
pub fn estimate_u_gradient(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_node: usize,
    x: &[f64],
    cfg: &McConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = estimate(cs, driver, s_node, x, 1, cfg)?;
    Ok((e.grad, e.grad_se))
}

/// `(∇²û(s, x), stderr per entry)`, both `d × d` row-major.
pub fn estimate_u_hessian(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_node: usize,
    x: &[f64],
    cfg: &McConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = estimate(cs, driver, s_node, x, 2, cfg)?;
    Ok((e.hess, e.hess_se))
}

/// Per-path samples of `g(X_{T−s}) e^{I_{T−s}}`.
pub fn payoff_samples(cs: &CoefficientSet, driver: &RoughPath, s_node: usize, x: &[f64], cfg: &McConfig) -> Result<Vec<f64>> {
    check_estimate(cs, driver, s_node, x, 0)?;
    let steps = driver.steps() - s_node;
    if steps == 0 {
        return Ok(vec![exact_terminal(cs, driver.horizon(), x, 0)?.u; cfg.paths]);
    }
    let shifted = driver.shift(s_node)?;
    let rows = sample_matrix(cs, &shifted, driver.time(s_node), steps, x, 0, cfg.paths, &cfg.noise)?;
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// `(X_τ, I_τ)` per path after `steps` steps from `(s, x)`, `paths × (d + 1)`.
pub fn propagate(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_node: usize,
    steps: usize,
    x: &[f64],
    cfg: &McConfig,
) -> Result<Vec<(Vec<f64>, f64)>> {
    check_estimate(cs, driver, s_node, x, 0)?;
    if s_node + steps > driver.steps() {
        return Err(Error::IndexOutOfRange(format!("{steps} steps from node {s_node}")));
    }
    let shifted = driver.shift(s_node)?;
    let t0 = driver.time(s_node);
    let m = cs.noise_dim();
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..cfg.paths)
        .into_par_iter()
        .map_init(
            || Workspace::new(cs, steps),
            |ws, p| {
                cfg.noise.fill(p, m, steps, shifted.dt(), &mut ws.db);
                let i_val = stream_path(cs, &shifted, t0, steps, x, 0, ws).map_err(|e| with_path(e, p))?;
                Ok((ws.x.clone(), i_val))
            },
        )
        .collect();
    rows.into_iter().collect()
}

/// Tabulated `u`, `∇u`, `∇²u` with standard errors over `s` nodes × mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSurface {
    pub dim: usize,
    pub order: usize,
    pub s_nodes: Vec<usize>,
    pub times: Vec<f64>,
    pub mesh: Mesh,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub entries: Vec<PointEstimate>,
}

impl SolutionSurface {
    /// `u(t_k, x) = f(k, x)` on `s_nodes × mesh` with zero standard errors,
    /// for closed-form references.
    pub fn tabulate<F>(driver: &RoughPath, s_nodes: &[usize], mesh: &Mesh, f: F) -> Self
    where
        F: Fn(usize, &[f64]) -> f64,
    {
        let entries = s_nodes
            .iter()
            .flat_map(|&k| mesh.nodes().into_iter().map(move |x| (k, x)))
            .map(|(k, x)| PointEstimate {
                u: f(k, &x),
                u_se: 0.0,
                grad: vec![],
                grad_se: vec![],
                hess: vec![],
                hess_se: vec![],
            })
            .collect();
        Self {
            dim: mesh.dim(),
            order: 0,
            s_nodes: s_nodes.to_vec(),
            times: s_nodes.iter().map(|&k| driver.time(k)).collect(),
            mesh: mesh.clone(),
            paths: 0,
            steps: driver.steps(),
            seed: 0,
            entries,
        }
    }

    pub fn entry(&self, si: usize, xi: usize) -> &PointEstimate {
        &self.entries[si * self.mesh.len() + xi]
    }

    /// Position of grid node `node` in `s_nodes`.
    pub fn slice_index(&self, node: usize) -> Option<usize> {
        self.s_nodes.iter().position(|&k| k == node)
    }

    /// `u(t_{s_nodes[si]}, ·)` on the mesh.
    pub fn u_slice(&self, si: usize) -> Vec<f64> {
        (0..self.mesh.len()).map(|xi| self.entry(si, xi).u).collect()
    }

    pub fn se_slice(&self, si: usize) -> Vec<f64> {
        (0..self.mesh.len()).map(|xi| self.entry(si, xi).u_se).collect()
    }

    /// CSV `s,x_1..x_d,u,stderr,du_1..du_d,d2u_11..d2u_dd`; derivative columns
    /// appear only when computed.
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut s = String::from("s");
        for i in 1..=d {
            let _ = write!(s, ",x_{i}");
        }
        s.push_str(",u,stderr");
        if self.order >= 1 {
            for i in 1..=d {
                let _ = write!(s, ",du_{i}");
            }
        }
        if self.order >= 2 {
            for i in 1..=d {
                for j in 1..=d {
                    let _ = write!(s, ",d2u_{i}{j}");
                }
            }
        }
        s.push('\n');
        for (si, t) in self.times.iter().enumerate() {
            for xi in 0..self.mesh.len() {
                let e = self.entry(si, xi);
                let _ = write!(s, "{t}");
                for v in self.mesh.node(xi) {
                    let _ = write!(s, ",{v}");
                }
                let _ = write!(s, ",{},{}", e.u, e.u_se);
                for v in e.grad.iter().chain(&e.hess) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// JSON of the surface together with the resolved configuration.
    pub fn to_json(&self, config: &serde_json::Value) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "config": config, "surface": self }))
            .expect("surface serializes")
    }
}

/// Evaluate the surface at every `(s, x)` of `s_nodes × mesh`.
pub fn build_surface(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_nodes: &[usize],
    mesh: &Mesh,
    order: usize,
    cfg: &McConfig,
) -> Result<SolutionSurface> {
    if mesh.dim() != cs.dim() {
        return Err(Error::DimensionMismatch(format!("mesh in ℝ^{} for d = {}", mesh.dim(), cs.dim())));
    }
    let nodes = mesh.nodes();
    let tasks: Vec<(usize, usize)> = (0..s_nodes.len())
        .flat_map(|si| (0..nodes.len()).map(move |xi| (si, xi)))
        .collect();
    let mut shifted = Vec::with_capacity(s_nodes.len());
    for &k in s_nodes {
        check_estimate(cs, driver, k, &nodes[0], order)?;
        shifted.push(driver.shift(k)?);
    }
    let entries: Vec<Result<PointEstimate>> = tasks
        .par_iter()
        .map(|&(si, xi)| {
            let k = s_nodes[si];
            let steps = driver.steps() - k;
            if steps == 0 {
                return exact_terminal(cs, driver.horizon(), &nodes[xi], order);
            }
            let noise = cfg.for_mesh(xi);
            let rows =
                sample_matrix(cs, &shifted[si], driver.time(k), steps, &nodes[xi], order, cfg.paths, &noise)?;
            Ok(reduce(cs, &rows, order))
        })
        .collect();
    Ok(SolutionSurface {
        dim: cs.dim(),
        order,
        s_nodes: s_nodes.to_vec(),
        times: s_nodes.iter().map(|&k| driver.time(k)).collect(),
        mesh: mesh.clone(),
        paths: cfg.paths,
        steps: driver.steps(),
        seed: cfg.noise.ledger.master_seed,
        entries: entries.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Settings of the nested estimator in [`markov_consistency`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub outer: McConfig,
    /// Paths per mesh point of the slice `u(t, ·)`.
    pub slice_paths: usize,
    pub mesh_points: usize,
    /// Half-width of the interpolation mesh; chosen from the outer sample
    /// when absent.
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub direct: f64,
    pub direct_se: f64,
    pub nested: f64,
    pub nested_se: f64,
    pub slice_se: f64,
    pub combined_se: f64,
    pub discrepancy: f64,
    pub exit_fraction: f64,
}

/// Compare `û(s, x)` with `E[e^{I_{t−s}} û(t, X_{t−s})]`, the slice `û(t, ·)`
/// interpolated linearly. One spatial dimension only.
pub fn markov_consistency(
    cs: &CoefficientSet,
    driver: &RoughPath,
    s_node: usize,
    t_node: usize,
    x: f64,
    cfg: &MarkovConfig,
) -> Result<MarkovReport> {
    if cs.dim() != 1 {
        return Err(Error::InvalidParameter("Markov consistency is implemented for d = 1".into()));
    }
    if s_node > t_node || t_node > driver.steps() {
        return Err(Error::IndexOutOfRange(format!("need s ≤ t ≤ N, got {s_node}, {t_node}")));
    }
    let (direct, direct_se) = estimate_u(cs, driver, s_node, &[x], &cfg.outer)?;
    let (s, t) = (driver.time(s_node), driver.time(t_node));
    if s_node == t_node {
        return Ok(MarkovReport {
            s,
            t,
            x,
            direct,
            direct_se,
            nested: direct,
            nested_se: direct_se,
            slice_se: 0.0,
            combined_se: direct_se * 2f64.sqrt(),
            discrepancy: 0.0,
            exit_fraction: 0.0,
        });
    }
    let outer = propagate(cs, driver, s_node, t_node - s_node, &[x], &cfg.outer)?;
    let half_width = match cfg.half_width {
        Some(w) => w,
        None => {
            let mut sig = [0.0; 1];
            let m = cs.noise_dim();
            let mut sv = vec![0.0; m];
            eval(cs.dynamics.sigma.as_ref(), 0, s, &[x], &mut sv)?;
            sig[0] = sv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let spread = outer.iter().fold(0.0f64, |a, (y, _)| a.max((y[0] - x).abs()));
            (6.0 * sig[0] * (t - s).sqrt()).max(1.05 * spread).max(1e-3)
        }
    };
    let mesh = Mesh::centred(&[x], half_width, cfg.mesh_points)?;
    let slice_cfg = McConfig {
        paths: cfg.slice_paths,
        noise: NoiseSpec { tag: tags::INNER, ..cfg.outer.noise },
        common_random_numbers: true,
    };
    let surface = build_surface(cs, driver, &[t_node], &mesh, 0, &slice_cfg)?;
    let slice = surface.u_slice(0);
    let slice_se = {
        let se = surface.se_slice(0);
        pairwise_sum(&se) / se.len() as f64
    };
    let mut exits = 0usize;
    let samples: Vec<f64> = outer
        .iter()
        .map(|(y, i)| {
            let v = mesh.interpolate_1d(&slice, y[0]).unwrap_or_else(|| {
                exits += 1;
                let clamped = y[0].clamp(mesh.start()[0], mesh.stop()[0]);
                mesh.interpolate_1d(&slice, clamped).expect("clamped into the mesh")
            });
            i.exp() * v
        })
        .collect();
    let exit_fraction = exits as f64 / outer.len() as f64;
    if exit_fraction > 1e-3 {
        return Err(Error::MeshTooNarrow { fraction: exit_fraction });
    }
    let (nested, nested_se) = mean_stderr(&samples);
    let combined_se = (direct_se * direct_se + nested_se * nested_se + slice_se * slice_se).sqrt();
    Ok(MarkovReport {
        s,
        t,
        x,
        direct,
        direct_se,
        nested,
        nested_se,
        slice_se,
        combined_se,
        discrepancy: (direct - nested).abs(),
        exit_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub rho: RhoAlphaReport,
    pub dist_u: f64,
    pub dist_grad: f64,
    pub dist_hess: f64,
    /// `dist_u / ρ_α`, zero when both vanish.
    pub ratio_u: f64,
    /// `(dist_u + dist_grad + dist_hess) / ρ_α`.
    pub ratio_total: f64,
    pub exact_zero: bool,
}

/// Sup-mesh distances between the surfaces driven by `a` and `b` (common
/// noise) relative to `ρ_α(a, b)`.
pub fn robustness_in_driver(
    cs: &CoefficientSet,
    a: &RoughPath,
    b: &RoughPath,
    s_nodes: &[usize],
    mesh: &Mesh,
    order: usize,
    cfg: &McConfig,
) -> Result<RobustnessReport> {
    let rho = a.rho_alpha(b, cs.exponents.alpha)?;
    let sa = build_surface(cs, a, s_nodes, mesh, order, cfg)?;
    let sb = build_surface(cs, b, s_nodes, mesh, order, cfg)?;
    let sup = |f: &dyn Fn(&PointEstimate) -> Vec<f64>| -> f64 {
        sa.entries
            .iter()
            .zip(&sb.entries)
            .flat_map(|(x, y)| f(x).into_iter().zip(f(y)).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    };
    let dist_u = sup(&|e| vec![e.u]);
    let dist_grad = sup(&|e| e.grad.clone());
    let dist_hess = sup(&|e| e.hess.clone());
    let total = dist_u + dist_grad + dist_hess;
    let exact_zero = rho.total == 0.0 && total == 0.0;
    let ratio = |v: f64| if exact_zero { 0.0 } else { v / rho.total };
    Ok(RobustnessReport { rho, dist_u, dist_grad, dist_hess, ratio_u: ratio(dist_u), ratio_total: ratio(total), exact_zero })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentProbeRow {
    pub p: f64,
    /// `mean exp(p sup_t |I_t|)` over all paths.
    pub full: f64,
    /// The same over the first tenth of the paths.
    pub subsample: f64,
    pub ratio: f64,
}

/// Empirical exponential moments of `sup_t |I_t|` from per-path suprema.
pub fn exponential_moment_probe_from_sups(sups: &[f64], ps: &[f64]) -> Result<Vec<MomentProbeRow>> {
    if sups.len() < 10 {
        return Err(Error::InsufficientData(format!("{} paths, need at least 10", sups.len())));
    }
    let sub = &sups[..sups.len() / 10];
    Ok(ps
        .iter()
        .map(|&p| {
            let mean = |xs: &[f64]| {
                let v: Vec<f64> = xs.iter().map(|s| (p * s).exp()).collect();
                pairwise_sum(&v) / v.len() as f64
            };
            let (full, subsample) = (mean(sups), mean(sub));
            MomentProbeRow { p, full, subsample, ratio: full / subsample }
        })
        .collect())
}

pub fn exponential_moment_probe(w: &WeightProcess, ps: &[f64]) -> Result<Vec<MomentProbeRow>> {
    exponential_moment_probe_from_sups(&w.sup_abs(), ps)
}

/// `sup_k |I_k|` per streamed path from `(s, x)`.
pub fn weight_suprema(cs: &CoefficientSet, driver: &RoughPath, s_node: usize, x: &[f64], cfg: &McConfig) -> Result<Vec<f64>> {
    check_estimate(cs, driver, s_node, x, 0)?;
    let steps = driver.steps() - s_node;
    let shifted = driver.shift(s_node)?;
    let t0 = driver.time(s_node);
    let (dt, horizon) = (shifted.dt(), shifted.horizon());
    let (n, m) = (cs.rough_dim(), cs.noise_dim());
    let dy = &cs.dynamics;
    let rows: Vec<Result<f64>> = (0..cfg.paths)
        .into_par_iter()
        .map_init(
            || (Jets::for_dynamics(dy), vec![0.0; steps * m], vec![0.0; n], vec![0.0; cs.dim()]),
            |(jets, db, dw, xn), p| {
                cfg.noise.fill(p, m, steps, dt, db);
                let mut x = x.to_vec();
                let (mut i, mut sup) = (0.0f64, 0.0f64);
                for k in 0..steps {
                    let t = coef_time(t0, k, dt, horizon);
                    jets.fill_dynamics(dy, t, &x, 0)?;
                    jets.fill_weight(cs, t, &x, 0)?;
                    shifted.increment_into(k, dw);
                    let noise = StepNoise { dt, db: &db[k * m..(k + 1) * m], dw, area: shifted.area(k) };
                    davie_step(jets, &x, noise, xn);
                    i = weight_step(jets, i, noise);
                    x.copy_from_slice(xn);
                    sup = sup.max(i.abs());
                }
                if !sup.is_finite() {
                    return Err(Error::NonFinite { path: p, step: steps });
                }
                Ok(sup)
            },
        )
        .collect();
    rows.into_iter().collect()
}

/// [`weight_suprema`] with the driver itself resampled: `make_driver(j)`
/// yields the `j`-th realization and `make_coefficients` the coefficients
/// on it. Suprema are concatenated driver by driver.
pub fn weight_suprema_over_drivers<D, C>(
    drivers: usize,
    make_driver: D,
    make_coefficients: C,
    x: &[f64],
    cfg: &McConfig,
) -> Result<Vec<f64>>
where
    D: Fn(u64) -> Result<Arc<RoughPath>> + Sync,
    C: Fn(&Arc<RoughPath>) -> Result<CoefficientSet> + Sync,
{
    let per: Vec<Result<Vec<f64>>> = (0..drivers as u64)
        .into_par_iter()
        .map(|j| {
            let w = make_driver(j)?;
            let cs = make_coefficients(&w)?;
            let cfg = McConfig { noise: cfg.noise.with_mesh(j), ..*cfg };
            weight_suprema(&cs, &w, 0, x, &cfg)
        })
        .collect();
    Ok(per.into_iter().collect::<Result<Vec<_>>>()?.concat())
}
