//! Davie-type one-step solver for hybrid rough SDEs
//!
//! ```text
//! dX = b(t, X) dt + σ(t, X) dB + (β, β′)(t, X) d𝐖
//! ```
//!
//! and for linear rough SDEs with forcing.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::Dynamics;
use crate::controlled::ControlledSample;
use crate::error::{Error, Result};
use crate::integrator::ExpansionReport;
use crate::mcstats::{brownian_increments, dyadic_spans, SeedLedger};
use crate::roughpath::{frobenius, RhoAlphaReport, RoughPath};
use crate::scheme::{davie_step, level_two, Jets, LinearStep, StepNoise};

/// Coefficient time of node `k` for a run started at `t0`; coefficients are
/// frozen at the horizon.
#[inline]
pub(crate) fn coef_time(t0: f64, k: usize, dt: f64, horizon: f64) -> f64 {
    (t0 + k as f64 * dt).min(horizon)
}

/// Where a path's Brownian increments come from.
///
/// Increments of path `p` are drawn from the substream
/// `(tag, mesh, p)` at `refine` times the grid resolution and aggregated, so a
/// run on a grid `r` times finer with `refine / r` sees the same path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ledger: SeedLedger,
    pub tag: u64,
    pub mesh: u64,
    pub refine: usize,
}

impl NoiseSpec {
    pub fn new(ledger: SeedLedger, tag: u64) -> Self {
        Self { ledger, tag, mesh: 0, refine: 1 }
    }

    pub fn with_mesh(self, mesh: u64) -> Self {
        Self { mesh, ..self }
    }

    pub fn with_refine(self, refine: usize) -> Self {
        Self { refine, ..self }
    }

    pub fn key(&self, path: usize) -> u64 {
        self.ledger.key(self.tag, self.mesh, path as u64)
    }

    /// `steps × dim` increments of path `path` on a grid of width `dt`.
    pub fn fill(&self, path: usize, dim: usize, steps: usize, dt: f64, out: &mut [f64]) {
        if dim == 0 {
            return;
        }
        let mut rng = self.ledger.stream(self.tag, self.mesh, path as u64);
        brownian_increments(&mut rng, dim, steps, dt, self.refine, out);
    }
}

/// Brownian increments for a batch of paths: `paths × steps × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianSample {
    paths: usize,
    steps: usize,
    dim: usize,
    increments: Vec<f64>,
    keys: Vec<u64>,
}

impl BrownianSample {
    pub fn generate(spec: &NoiseSpec, paths: usize, dim: usize, steps: usize, dt: f64) -> Self {
        let rows: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut out = vec![0.0; steps * dim];
                spec.fill(p, dim, steps, dt, &mut out);
                out
            })
            .collect();
        Self {
            paths,
            steps,
            dim,
            increments: rows.concat(),
            keys: (0..paths).map(|p| spec.key(p)).collect(),
        }
    }

    pub fn from_increments(paths: usize, steps: usize, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != paths * steps * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} increments for {paths}×{steps}×{dim}",
                increments.len()
            )));
        }
        Ok(Self { paths, steps, dim, increments, keys: vec![0; paths] })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.steps * self.dim;
        &self.increments[p * w..(p + 1) * w]
    }

    pub fn step(&self, p: usize, k: usize) -> &[f64] {
        let o = (p * self.steps + k) * self.dim;
        &self.increments[o..o + self.dim]
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }
}

/// Sampled trajectories `X` (`paths × nodes × d`), their Gubinelli
/// derivatives (`paths × nodes × d × n`) and the generating noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPathEnsemble {
    paths: usize,
    nodes: usize,
    dim: usize,
    rough_dim: usize,
    t0: f64,
    dt: f64,
    x: Vec<f64>,
    gub: Vec<f64>,
    brownian: BrownianSample,
}

impl HybridPathEnsemble {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.nodes - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rough_dim(&self) -> usize {
        self.rough_dim
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn x(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.nodes + k) * self.dim;
        &self.x[o..o + self.dim]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let w = self.nodes * self.dim;
        &self.x[path * w..(path + 1) * w]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.x(path, self.nodes - 1)
    }

    pub fn gub(&self, path: usize, k: usize) -> &[f64] {
        let w = self.dim * self.rough_dim;
        let o = (path * self.nodes + k) * w;
        &self.gub[o..o + w]
    }

    pub fn brownian(&self) -> &BrownianSample {
        &self.brownian
    }

    /// `(X, X′)` as a controlled sample.
    pub fn controlled(&self) -> ControlledSample {
        ControlledSample::new(self.paths, self.nodes, self.dim, self.rough_dim, self.x.clone(), self.gub.clone())
            .expect("ensemble shapes are consistent")
    }

    /// Largest `|gub_k − β(t_k, X_k)|` over paths and nodes.
    pub fn gubinelli_defect(&self, dy: &Dynamics, horizon: f64) -> Result<f64> {
        let l = self.dim * self.rough_dim;
        let mut buf = vec![0.0; l];
        let mut worst: f64 = 0.0;
        for p in 0..self.paths {
            for k in 0..self.nodes {
                dy.beta.eval(0, coef_time(self.t0, k, self.dt, horizon), self.x(p, k), &mut buf)?;
                for (a, b) in buf.iter().zip(self.gub(p, k)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok(worst)
    }

    /// CSV with header `path_id,k,t,X_1..X_d`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,k,t");
        for i in 1..=self.dim {
            let _ = write!(s, ",X_{i}");
        }
        s.push('\n');
        for p in 0..self.paths {
            for k in 0..self.nodes {
                let _ = write!(s, "{p},{k},{}", self.t0 + k as f64 * self.dt);
                for v in self.x(p, k) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

fn check_run(dy: &Dynamics, x0: &[f64], rp: &RoughPath, steps: usize, brownian: &BrownianSample) -> Result<()> {
    if x0.len() != dy.dim() {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, d = {}", x0.len(), dy.dim())));
    }
    if rp.dim() != dy.rough_dim() {
        return Err(Error::DimensionMismatch(format!("driver dim {} vs n = {}", rp.dim(), dy.rough_dim())));
    }
    if steps > rp.steps() || steps > brownian.steps() {
        return Err(Error::GridMismatch(format!(
            "{steps} steps requested, driver has {}, noise has {}",
            rp.steps(),
            brownian.steps()
        )));
    }
    if brownian.dim() != dy.noise_dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise dim {} vs m = {}",
            brownian.dim(),
            dy.noise_dim()
        )));
    }
    Ok(())
}

/// One path of the Davie scheme over `steps` steps of `rp`, starting at
/// coefficient time `t0`. Writes `X` (`(steps+1) × d`) and `β(X)`
/// (`(steps+1) × d × n`); a non-finite state is reported with `path = 0`.
pub fn simulate_path(
    dy: &Dynamics,
    x0: &[f64],
    rp: &RoughPath,
    t0: f64,
    steps: usize,
    db: &[f64],
    xs: &mut [f64],
    gub: &mut [f64],
) -> Result<()> {
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    let (dt, horizon) = (rp.dt(), rp.horizon());
    let mut jets = Jets::for_dynamics(dy);
    let mut dw = vec![0.0; n];
    xs[..d].copy_from_slice(x0);
    for k in 0..=steps {
        let t = coef_time(t0, k, dt, horizon);
        let (done, rest) = xs.split_at_mut((k + 1) * d);
        let x = &done[k * d..];
        jets.fill_dynamics(dy, t, x, 0)?;
        gub[k * d * n..(k + 1) * d * n].copy_from_slice(&jets.beta);
        if k == steps {
            break;
        }
        rp.increment_into(k, &mut dw);
        let noise = StepNoise { dt, db: &db[k * m..(k + 1) * m], dw: &dw, area: rp.area(k) };
        let next = &mut rest[..d];
        davie_step(&jets, x, noise, next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { path: 0, step: k + 1 });
        }
    }
    Ok(())
}

fn with_path(e: Error, path: usize) -> Error {
    match e {
        Error::NonFinite { step, .. } => Error::NonFinite { path, step },
        other => other,
    }
}

/// Solve from `x0` over the first `steps` steps of `rp` (usually a shifted
/// driver) with coefficient time starting at `t0`.
pub fn solve_rsde(
    dy: &Dynamics,
    x0: &[f64],
    rp: &RoughPath,
    t0: f64,
    steps: usize,
    brownian: &BrownianSample,
) -> Result<HybridPathEnsemble> {
    check_run(dy, x0, rp, steps, brownian)?;
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    let nodes = steps + 1;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..brownian.paths())
        .into_par_iter()
        .map(|p| {
            let mut xs = vec![0.0; nodes * d];
            let mut gub = vec![0.0; nodes * d * n];
            let db = &brownian.path(p)[..steps * m];
            simulate_path(dy, x0, rp, t0, steps, db, &mut xs, &mut gub).map_err(|e| with_path(e, p))?;
            Ok((xs, gub))
        })
        .collect();
    let mut x = Vec::with_capacity(brownian.paths() * nodes * d);
    let mut gub = Vec::with_capacity(brownian.paths() * nodes * d * n);
    for row in rows {
        let (a, b) = row?;
        x.extend(a);
        gub.extend(b);
    }
    let mut noise = brownian.clone();
    if noise.steps != steps {
        noise = BrownianSample {
            paths: noise.paths,
            steps,
            dim: m,
            increments: (0..noise.paths).flat_map(|p| brownian.path(p)[..steps * m].to_vec()).collect(),
            keys: noise.keys,
        };
    }
    Ok(HybridPathEnsemble {
        paths: brownian.paths(),
        nodes,
        dim: d,
        rough_dim: n,
        t0,
        dt: rp.dt(),
        x,
        gub,
        brownian: noise,
    })
}

/// Terminal values `X_{steps}` only (`paths × d`), without storing
/// trajectories; noise is generated per path from `noise`.
pub fn terminal_values(
    dy: &Dynamics,
    x0: &[f64],
    rp: &RoughPath,
    t0: f64,
    steps: usize,
    noise: &NoiseSpec,
    paths: usize,
) -> Result<Vec<f64>> {
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    if x0.len() != d || rp.dim() != n || steps > rp.steps() {
        return Err(Error::DimensionMismatch("terminal_values: inconsistent inputs".into()));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut db = vec![0.0; steps * m];
            noise.fill(p, m, steps, rp.dt(), &mut db);
            let mut xs = vec![0.0; (steps + 1) * d];
            let mut gub = vec![0.0; (steps + 1) * d * n];
            simulate_path(dy, x0, rp, t0, steps, &db, &mut xs, &mut gub).map_err(|e| with_path(e, p))?;
            Ok(xs[steps * d..].to_vec())
        })
        .collect();
    let mut out = Vec::with_capacity(paths * d);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Coefficients of a linear rough SDE, supplied per path and step.
pub trait LinearCoefficients: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn rough_dim(&self) -> usize;

    /// Fill `step` with `G_k, S_k, f_k, f′_k` and, when forced, `ΔF_k, F′_k`.
    fn fill(&self, path: usize, k: usize, step: &mut LinearStep);
}

/// Time-constant matrices `(G, S, f, f′)` plus an optional forcing sample
/// `(F, F′)` with `F′` laid out `d × n`. A single-path forcing is shared by
/// every path.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub dim: usize,
    pub noise_dim: usize,
    pub rough_dim: usize,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
    pub forcing: Option<ControlledSample>,
}

impl LinearSystem {
    pub fn zero(dim: usize, noise_dim: usize, rough_dim: usize) -> Self {
        let (d, n, m) = (dim, rough_dim, noise_dim);
        Self {
            dim,
            noise_dim,
            rough_dim,
            g: vec![0.0; d * d],
            s: vec![0.0; m * d * d],
            f: vec![0.0; n * d * d],
            fp: vec![0.0; n * n * d * d],
            forcing: None,
        }
    }
}

impl LinearCoefficients for LinearSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn rough_dim(&self) -> usize {
        self.rough_dim
    }

    fn fill(&self, path: usize, k: usize, step: &mut LinearStep) {
        step.g.copy_from_slice(&self.g);
        step.s.copy_from_slice(&self.s);
        step.f.copy_from_slice(&self.f);
        step.fp.copy_from_slice(&self.fp);
        if let Some(fs) = &self.forcing {
            let (d, n) = (self.dim, self.rough_dim);
            step.forced = true;
            let path = if fs.paths() == 1 { 0 } else { path };
            let (a, b) = (fs.x(path, k), fs.x(path, k + 1));
            for i in 0..d {
                step.df[i] = b[i] - a[i];
            }
            let fp = fs.xp(path, k);
            for mu in 0..n {
                for i in 0..d {
                    step.fprime[mu * d + i] = fp[i * n + mu];
                }
            }
        }
    }
}

/// Solve the linear equation from `xi` (`paths × d`) over `steps` steps.
/// The Gubinelli derivative stored per node is `f_μ Y + F′_μ`.
pub fn solve_linear_rsde(
    lc: &dyn LinearCoefficients,
    xi: &[f64],
    rp: &RoughPath,
    steps: usize,
    brownian: &BrownianSample,
) -> Result<HybridPathEnsemble> {
    let (d, n, m) = (lc.dim(), lc.rough_dim(), lc.noise_dim());
    let paths = brownian.paths();
    if xi.len() != paths * d || rp.dim() != n || brownian.dim() != m {
        return Err(Error::DimensionMismatch("linear RSDE: inconsistent shapes".into()));
    }
    if steps > rp.steps() || steps > brownian.steps() {
        return Err(Error::GridMismatch(format!("{steps} steps exceed driver or noise grid")));
    }
    let nodes = steps + 1;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut ls = LinearStep::new(d, n, m, 1);
            let mut ys = vec![0.0; nodes * d];
            let mut gub = vec![0.0; nodes * d * n];
            let mut fy = vec![0.0; n * d];
            let mut dw = vec![0.0; n];
            ys[..d].copy_from_slice(&xi[p * d..(p + 1) * d]);
            for k in 0..steps {
                lc.fill(p, k, &mut ls);
                ls.gubinelli(&ys[k * d..(k + 1) * d], &mut fy);
                for i in 0..d {
                    for mu in 0..n {
                        gub[(k * d + i) * n + mu] = fy[mu * d + i];
                    }
                }
                rp.increment_into(k, &mut dw);
                let noise = StepNoise { dt: rp.dt(), db: brownian.step(p, k), dw: &dw, area: rp.area(k) };
                let (done, rest) = ys.split_at_mut((k + 1) * d);
                ls.step(&done[k * d..], noise, &mut rest[..d]);
                if rest[..d].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { path: p, step: k + 1 });
                }
            }
            // The last node reuses the coefficients of the last step.
            {
                let k = steps;
                if k == 0 {
                    lc.fill(p, 0, &mut ls);
                }
                ls.gubinelli(&ys[k * d..], &mut fy);
                for i in 0..d {
                    for mu in 0..n {
                        gub[(k * d + i) * n + mu] = fy[mu * d + i];
                    }
                }
            }
            Ok((ys, gub))
        })
        .collect();
    let mut x = Vec::with_capacity(paths * nodes * d);
    let mut gub = Vec::with_capacity(paths * nodes * d * n);
    for r in rows {
        let (a, b) = r?;
        x.extend(a);
        gub.extend(b);
    }
    Ok(HybridPathEnsemble {
        paths,
        nodes,
        dim: d,
        rough_dim: n,
        t0: 0.0,
        dt: rp.dt(),
        x,
        gub,
        brownian: brownian.clone(),
    })
}

/// Moments of the Davie remainder
/// `X^♮_{s,t} = δX − b_sΔ − σ_sδB − β_sδW − (Dβ β + β′)_s 𝕎`
/// along a reference ensemble solved on `rp_reference`, evaluated on the grid
/// `factor` times coarser over dyadic spans.
pub fn davie_remainder_scaling(
    reference: &HybridPathEnsemble,
    dy: &Dynamics,
    rp_reference: &RoughPath,
    factor: usize,
    p: u32,
) -> Result<ExpansionReport> {
    if factor < 2 || reference.steps() % factor != 0 {
        return Err(Error::InvalidParameter(format!(
            "reference with {} steps cannot be coarsened by {factor}; a finer reference is required",
            reference.steps()
        )));
    }
    if !matches!(p, 2 | 4 | 8) {
        return Err(Error::InvalidParameter(format!("moment order {p}")));
    }
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    let coarse = reference.steps() / factor;
    let spans = dyadic_spans(coarse);
    if spans.len() < 4 {
        return Err(Error::InsufficientData(format!("{} dyadic spans on {coarse} coarse steps", spans.len())));
    }
    let fdt = reference.dt();
    let mut table = Vec::with_capacity(spans.len());
    for &h in &spans {
        let starts: Vec<usize> = (0..=coarse - h).step_by(h).collect();
        let windows: Vec<Result<Vec<f64>>> = starts
            .par_iter()
            .map(|&s| {
                let (a, b) = (s * factor, (s + h) * factor);
                let (dw, area) = rp_reference.window(a, b)?;
                let t = coef_time(reference.t0, a, fdt, rp_reference.horizon());
                let mut jets = Jets::for_dynamics(dy);
                let mut dbs = vec![0.0; m];
                let mut out = Vec::with_capacity(reference.paths() * d);
                for path in 0..reference.paths() {
                    let x = reference.x(path, a);
                    jets.fill_dynamics(dy, t, x, 0)?;
                    dbs.iter_mut().for_each(|v| *v = 0.0);
                    for k in a..b {
                        for (acc, v) in dbs.iter_mut().zip(reference.brownian.step(path, k)) {
                            *acc += v;
                        }
                    }
                    let y = reference.x(path, b);
                    let span = (b - a) as f64 * fdt;
                    for i in 0..d {
                        let mut e = jets.b[i] * span;
                        for al in 0..m {
                            e += jets.sig[i * m + al] * dbs[al];
                        }
                        if !jets.beta_zero {
                            for nu in 0..n {
                                e += jets.beta[i * n + nu] * dw[nu];
                            }
                            e += level_two(&jets.l2x, i, n, &area);
                        }
                        out.push(y[i] - x[i] - e);
                    }
                }
                Ok(out)
            })
            .collect();
        let windows = windows.into_iter().collect::<Result<Vec<_>>>()?;
        table.push((h as f64 * fdt * factor as f64, windows));
    }
    Ok(ExpansionReport::from_windows(p, d, &table))
}

/// Output distance of two runs and the sizes of their input perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub p: u32,
    /// `sup_k (E|X_k − X̄_k|^p)^{1/p}`.
    pub distance: f64,
    /// `(E|X_0 − X̄_0|^p)^{1/p}`.
    pub initial_distance: f64,
    pub driver_distance: Option<RhoAlphaReport>,
}

/// Compare two ensembles solved with common noise on a common grid.
pub fn stability_probe(
    a: &HybridPathEnsemble,
    b: &HybridPathEnsemble,
    p: u32,
    drivers: Option<(&RoughPath, &RoughPath, f64)>,
) -> Result<StabilityReport> {
    if a.paths != b.paths || a.nodes != b.nodes || a.dim != b.dim || (a.dt - b.dt).abs() > 1e-15 {
        return Err(Error::GridMismatch("stability probe needs ensembles on one grid".into()));
    }
    let pf = p as f64;
    let moment = |k: usize| -> f64 {
        let mut acc = 0.0;
        let mut diff = vec![0.0; a.dim];
        for path in 0..a.paths {
            for (i, (x, y)) in a.x(path, k).iter().zip(b.x(path, k)).enumerate() {
                diff[i] = x - y;
            }
            acc += frobenius(&diff).powf(pf);
        }
        (acc / a.paths as f64).powf(1.0 / pf)
    };
    let distance = (0..a.nodes).map(moment).fold(0.0, f64::max);
    let driver_distance = match drivers {
        Some((ra, rb, alpha)) => Some(ra.rho_alpha(rb, alpha)?),
        None => None,
    };
    Ok(StabilityReport { p, distance, initial_distance: moment(0), driver_distance })
}
