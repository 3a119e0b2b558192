//! Rough integrals by compensated Riemann sums, Itô integrals by left-point
//! sums and Lebesgue integrals by left rectangles.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controlled::{check_moment_order, ControlledSample};
use crate::error::{Error, Result};
use crate::mcstats::{dyadic_spans, fit_positive, SlopeFit};
use crate::roughpath::{frobenius, RoughPath};
use crate::scheme::level_two;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrandKind {
    Rough,
    Ito,
    Lebesgue,
}

/// Running integral per path: `paths × nodes × dim`, zero at node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralPath {
    paths: usize,
    nodes: usize,
    dim: usize,
    values: Vec<f64>,
    kind: IntegrandKind,
}

impl IntegralPath {
    fn accumulate(
        paths: usize,
        nodes: usize,
        dim: usize,
        kind: IntegrandKind,
        increment: impl Fn(usize, usize, &mut [f64]) + Sync,
    ) -> Self {
        let rows: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut out = vec![0.0; nodes * dim];
                let mut inc = vec![0.0; dim];
                for k in 0..nodes - 1 {
                    increment(p, k, &mut inc);
                    for v in 0..dim {
                        out[(k + 1) * dim + v] = out[k * dim + v] + inc[v];
                    }
                }
                out
            })
            .collect();
        Self { paths, nodes, dim, values: rows.concat(), kind }
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

    pub fn kind(&self) -> IntegrandKind {
        self.kind
    }

    pub fn value(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.nodes + k) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.value(path, self.nodes - 1)
    }

    /// `values[j] − values[i]`.
    pub fn increment(&self, path: usize, i: usize, j: usize) -> Vec<f64> {
        let (a, b) = (self.value(path, i), self.value(path, j));
        b.iter().zip(a).map(|(b, a)| b - a).collect()
    }
}

/// `∫ (φ, φ′) d𝐖` with node increments `φ_k δW_k + φ′_k A_k`.
///
/// `phi` takes values in `V ⊗ ℝ^n` stored `(v, ν)`, and `φ′` is stored
/// `(v, ν, μ)`; the level-two term is `Σ φ′_{(v,ν),μ} A^{μν}`.
pub fn rough_integral(phi: &ControlledSample, rp: &RoughPath) -> Result<IntegralPath> {
    let n = rp.dim();
    if phi.nodes() != rp.steps() + 1 || phi.rough_dim() != n || phi.dim() % n != 0 {
        return Err(Error::DimensionMismatch(format!(
            "integrand of dim {} on {} nodes vs driver of dim {n} on {} steps",
            phi.dim(),
            phi.nodes(),
            rp.steps()
        )));
    }
    let vdim = phi.dim() / n;
    Ok(IntegralPath::accumulate(phi.paths(), phi.nodes(), vdim, IntegrandKind::Rough, |p, k, inc| {
        let mut dw = vec![0.0; n];
        rp.increment_into(k, &mut dw);
        let (f, fp, a) = (phi.x(p, k), phi.xp(p, k), rp.area(k));
        for v in 0..vdim {
            let mut acc = 0.0;
            for nu in 0..n {
                acc += f[v * n + nu] * dw[nu];
            }
            inc[v] = acc + level_two(fp, v, n, a);
        }
    }))
}

/// `∫ ν dB` with left-point sums. `nu` is `paths × nodes × (vdim × m)` and
/// `db` is `paths × (nodes − 1) × m`.
pub fn ito_integral(paths: usize, nodes: usize, vdim: usize, m: usize, nu: &[f64], db: &[f64]) -> Result<IntegralPath> {
    if nodes < 2 || nu.len() != paths * nodes * vdim * m || db.len() != paths * (nodes - 1) * m {
        return Err(Error::DimensionMismatch(format!(
            "Itô integrand {} / increments {} for {paths} paths, {nodes} nodes, {vdim}×{m}",
            nu.len(),
            db.len()
        )));
    }
    Ok(IntegralPath::accumulate(paths, nodes, vdim, IntegrandKind::Ito, |p, k, inc| {
        let row = &nu[(p * nodes + k) * vdim * m..][..vdim * m];
        let b = &db[(p * (nodes - 1) + k) * m..][..m];
        for v in 0..vdim {
            let mut acc = 0.0;
            for a in 0..m {
                acc += row[v * m + a] * b[a];
            }
            inc[v] = acc;
        }
    }))
}

/// `∫ f dr` by left rectangles; `f` is `paths × nodes × vdim`.
pub fn lebesgue_integral(paths: usize, nodes: usize, vdim: usize, f: &[f64], dt: f64) -> Result<IntegralPath> {
    if nodes < 2 || f.len() != paths * nodes * vdim {
        return Err(Error::DimensionMismatch(format!(
            "Lebesgue integrand {} for {paths} paths, {nodes} nodes, dim {vdim}",
            f.len()
        )));
    }
    Ok(IntegralPath::accumulate(paths, nodes, vdim, IntegrandKind::Lebesgue, |p, k, inc| {
        let row = &f[(p * nodes + k) * vdim..][..vdim];
        for v in 0..vdim {
            inc[v] = row[v] * dt;
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub h: f64,
    pub moment: f64,
    pub mean_residual: f64,
}

/// Moments of a local-expansion remainder per dyadic span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub p: u32,
    pub rows: Vec<ExpansionRow>,
    pub moment_slope: Option<SlopeFit>,
    pub mean_slope: Option<SlopeFit>,
}

impl ExpansionReport {
    /// Aggregate per-window residual samples: `windows[h][w]` holds one
    /// residual vector per path, flattened `paths × dim`.
    pub(crate) fn from_windows(p: u32, dim: usize, spans: &[(f64, Vec<Vec<f64>>)]) -> Self {
        let pf = p as f64;
        let rows: Vec<ExpansionRow> = spans
            .iter()
            .map(|(h, windows)| {
                let (mut moment, mut mean_res) = (0.0, 0.0);
                for w in windows {
                    let paths = w.len() / dim;
                    let mut sum = vec![0.0; dim];
                    let mut acc = 0.0;
                    for r in w.chunks_exact(dim) {
                        acc += frobenius(r).powf(pf);
                        for (s, v) in sum.iter_mut().zip(r) {
                            *s += v;
                        }
                    }
                    moment += (acc / paths as f64).powf(1.0 / pf);
                    mean_res += frobenius(&sum) / paths as f64;
                }
                let nw = windows.len() as f64;
                ExpansionRow { h: *h, moment: moment / nw, mean_residual: mean_res / nw }
            })
            .collect();
        let moment_slope = fit_positive(&rows.iter().map(|r| (r.h, r.moment)).collect::<Vec<_>>());
        let mean_slope = fit_positive(&rows.iter().map(|r| (r.h, r.mean_residual)).collect::<Vec<_>>());
        Self { p, rows, moment_slope, mean_slope }
    }

    pub fn vanishes(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.moment <= tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,moment,mean_residual\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.h, r.moment, r.mean_residual);
        }
        s
    }
}

/// Moments of `∫_s^t − φ_s δW_{s,t} − φ′_s 𝕎_{s,t}` over dyadic spans.
pub fn local_expansion_residual(
    ip: &IntegralPath,
    phi: &ControlledSample,
    rp: &RoughPath,
    p: u32,
) -> Result<ExpansionReport> {
    check_moment_order(p, &[2, 4])?;
    let n = rp.dim();
    let vdim = ip.dim();
    if ip.nodes() != rp.steps() + 1 || phi.dim() != vdim * n || phi.paths() != ip.paths() {
        return Err(Error::DimensionMismatch("integral, integrand and driver disagree".into()));
    }
    let spans = dyadic_spans(rp.steps());
    if spans.len() < 4 {
        return Err(Error::InsufficientData(format!("{} dyadic spans, need 4", spans.len())));
    }
    let mut table = Vec::with_capacity(spans.len());
    for &h in &spans {
        let windows: Vec<Vec<f64>> = (0..=rp.steps() - h)
            .step_by(h)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&s| {
                let (dw, area) = rp.window(s, s + h).expect("in range");
                let mut out = Vec::with_capacity(ip.paths() * vdim);
                for path in 0..ip.paths() {
                    let inc = ip.increment(path, s, s + h);
                    let (f, fp) = (phi.x(path, s), phi.xp(path, s));
                    for v in 0..vdim {
                        let mut r = inc[v] - level_two(fp, v, n, &area);
                        for nu in 0..n {
                            r -= f[v * n + nu] * dw[nu];
                        }
                        out.push(r);
                    }
                }
                out
            })
            .collect();
        table.push((h as f64 * rp.dt(), windows));
    }
    Ok(ExpansionReport::from_windows(p, vdim, &table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_integrand_gives_the_increment() {
        let rp = RoughPath::canonical_lift_fn(|t, w| {
            w[0] = t.sin();
            w[1] = t * t;
        }, 2, 1.0, 16, 4)
        .unwrap();
        let mut x = Vec::new();
        for _ in 0..=16 {
            x.extend([1.0, 0.0, 0.0, 1.0]);
        }
        let phi = ControlledSample::new(1, 17, 4, 2, x, vec![0.0; 17 * 8]).unwrap();
        let ip = rough_integral(&phi, &rp).unwrap();
        for k in 0..=16 {
            for mu in 0..2 {
                let want = rp.value(k)[mu] - rp.value(0)[mu];
                assert!((ip.value(0, k)[mu] - want).abs() < 1e-14);
            }
        }
        assert_eq!(ip.kind(), IntegrandKind::Rough);
    }

    #[test]
    fn pure_area_driver_only_sees_level_two() {
        let rp = RoughPath::pure_area(&[0.0, 0.7, -0.7, 0.0], 2, 2.0, 8).unwrap();
        let nodes = 9;
        let fp = [0.0, 1.5, -2.0, 0.25];
        let x = vec![3.0; nodes * 2];
        let xp: Vec<f64> = (0..nodes).flat_map(|_| fp).collect();
        let phi = ControlledSample::new(1, nodes, 2, 2, x, xp).unwrap();
        let ip = rough_integral(&phi, &rp).unwrap();
        // Σ φ′_{ν,μ} a^{μν} T = (1.5·(−0.7) + (−2)·0.7) · 2
        let want = (1.5 * -0.7 + -2.0 * 0.7) * 2.0;
        assert!((ip.terminal(0)[0] - want).abs() < 1e-13);
    }

    #[test]
    fn shape_errors() {
        assert!(ito_integral(1, 3, 1, 1, &[0.0; 3], &[0.0; 1]).is_err());
        assert!(lebesgue_integral(1, 3, 1, &[0.0; 2], 0.1).is_err());
    }

    #[test]
    fn lebesgue_of_constant() {
        let ip = lebesgue_integral(2, 5, 1, &[2.0; 10], 0.25).unwrap();
        assert_eq!(ip.terminal(1)[0], 2.0);
        assert_eq!(ip.increment(0, 1, 3), vec![1.0]);
    }
}
