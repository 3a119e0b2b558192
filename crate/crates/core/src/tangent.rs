//! First and second variations of the solution in its initial state, solved
//! as linear rough SDEs along a stored base ensemble, and finite-difference
//! checks against resimulation with common noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::Dynamics;
use crate::error::{Error, Result};
use crate::roughpath::RoughPath;
use crate::rsde::{coef_time, HybridPathEnsemble};
use crate::scheme::{pair_index, second_variation_forcing, Jets, LinearStep, SecondOrderScratch, StepNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TangentKind {
    /// `Y` started from each listed direction.
    First { directions: Vec<Vec<f64>> },
    /// `Z^{ab}` for each listed pair, `a ≤ b`.
    Second { pairs: Vec<(usize, usize)> },
}

/// `paths × nodes × d × cols` tangent trajectories; column `c` belongs to the
/// `c`-th direction or pair of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentEnsemble {
    paths: usize,
    nodes: usize,
    dim: usize,
    cols: usize,
    kind: TangentKind,
    x0: Vec<f64>,
    data: Vec<f64>,
}

impl TangentEnsemble {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> &TangentKind {
        &self.kind
    }

    /// Initial state of the base ensemble.
    pub fn base_point(&self) -> &[f64] {
        &self.x0
    }

    /// The `d × cols` matrix at node `k` of path `path`.
    pub fn value(&self, path: usize, k: usize) -> &[f64] {
        let w = self.dim * self.cols;
        let o = (path * self.nodes + k) * w;
        &self.data[o..o + w]
    }

    pub fn column(&self, path: usize, k: usize, col: usize) -> Vec<f64> {
        let v = self.value(path, k);
        (0..self.dim).map(|i| v[i * self.cols + col]).collect()
    }

    pub fn terminal_column(&self, path: usize, col: usize) -> Vec<f64> {
        self.column(path, self.nodes - 1, col)
    }

    fn is_basis(&self) -> bool {
        match &self.kind {
            TangentKind::First { directions } => {
                directions.len() == self.dim
                    && directions.iter().enumerate().all(|(c, v)| {
                        v.iter().enumerate().all(|(i, &x)| x == if i == c { 1.0 } else { 0.0 })
                    })
            }
            TangentKind::Second { .. } => false,
        }
    }
}

fn check_base(base: &HybridPathEnsemble, dy: &Dynamics, rp: &RoughPath) -> Result<()> {
    if base.dim() != dy.dim() || base.rough_dim() != rp.dim() || base.steps() > rp.steps() {
        return Err(Error::DimensionMismatch("base ensemble does not match dynamics or driver".into()));
    }
    if (base.dt() - rp.dt()).abs() > 1e-15 * rp.horizon() {
        return Err(Error::GridMismatch("base ensemble and driver use different grids".into()));
    }
    Ok(())
}

/// Probe the derivative callbacks once so failures surface as errors rather
/// than inside the parallel section.
fn probe_jets(dy: &Dynamics, base: &HybridPathEnsemble, rp: &RoughPath, order: usize) -> Result<()> {
    let mut jets = Jets::for_dynamics(dy);
    jets.fill_dynamics(dy, coef_time(base.start_time(), 0, rp.dt(), rp.horizon()), base.x(0, 0), order)
}

/// `Y` along `base` started from each of `directions`.
pub fn first_variation(
    base: &HybridPathEnsemble,
    dy: &Dynamics,
    rp: &RoughPath,
    directions: &[Vec<f64>],
) -> Result<TangentEnsemble> {
    check_base(base, dy, rp)?;
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    let cols = directions.len();
    if cols == 0 || directions.iter().any(|v| v.len() != d) {
        return Err(Error::DimensionMismatch(format!("directions must be nonempty vectors of length {d}")));
    }
    probe_jets(dy, base, rp, 1)?;
    let nodes = base.nodes();
    let (dt, horizon, t0) = (rp.dt(), rp.horizon(), base.start_time());
    let rows: Vec<Result<Vec<f64>>> = (0..base.paths())
        .into_par_iter()
        .map(|p| {
            let mut jets = Jets::for_dynamics(dy);
            let mut ls = LinearStep::new(d, n, m, cols);
            let mut ys = vec![0.0; nodes * d * cols];
            for (c, v) in directions.iter().enumerate() {
                for i in 0..d {
                    ys[i * cols + c] = v[i];
                }
            }
            let mut dw = vec![0.0; n];
            let w = d * cols;
            for k in 0..nodes - 1 {
                jets.fill_dynamics(dy, coef_time(t0, k, dt, horizon), base.x(p, k), 1)?;
                ls.tangent_of(&jets);
                rp.increment_into(k, &mut dw);
                let noise = StepNoise { dt, db: base.brownian().step(p, k), dw: &dw, area: rp.area(k) };
                let (done, rest) = ys.split_at_mut((k + 1) * w);
                ls.step(&done[k * w..], noise, &mut rest[..w]);
                if rest[..w].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { path: p, step: k + 1 });
                }
            }
            Ok(ys)
        })
        .collect();
    let data = rows.into_iter().collect::<Result<Vec<_>>>()?.concat();
    Ok(TangentEnsemble {
        paths: base.paths(),
        nodes,
        dim: d,
        cols,
        kind: TangentKind::First { directions: directions.to_vec() },
        x0: base.x(0, 0).to_vec(),
        data,
    })
}

/// First variation in every coordinate direction `e_1..e_d`.
pub fn first_variation_basis(base: &HybridPathEnsemble, dy: &Dynamics, rp: &RoughPath) -> Result<TangentEnsemble> {
    let d = dy.dim();
    let basis: Vec<Vec<f64>> = (0..d)
        .map(|c| (0..d).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
        .collect();
    first_variation(base, dy, rp, &basis)
}

/// `Z^{ij}` for each requested pair. Pairs are stored with `i ≤ j`, so
/// `(i, j)` and `(j, i)` name the same process.
pub fn second_variation(
    base: &HybridPathEnsemble,
    first: &TangentEnsemble,
    dy: &Dynamics,
    rp: &RoughPath,
    pairs: &[(usize, usize)],
) -> Result<TangentEnsemble> {
    check_base(base, dy, rp)?;
    let (d, n, m) = (dy.dim(), dy.rough_dim(), dy.noise_dim());
    if !first.is_basis() || first.paths != base.paths() || first.nodes != base.nodes() {
        return Err(Error::InvalidParameter(
            "second variation needs the first variation in the coordinate basis along the same base".into(),
        ));
    }
    if pairs.is_empty() || pairs.iter().any(|&(a, b)| a >= d || b >= d) {
        return Err(Error::IndexOutOfRange(format!("pairs {pairs:?} for d = {d}")));
    }
    probe_jets(dy, base, rp, 2)?;
    let canon: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let cols = canon.len();
    let nodes = base.nodes();
    let (dt, horizon, t0) = (rp.dt(), rp.horizon(), base.start_time());
    let rows: Vec<Result<Vec<f64>>> = (0..base.paths())
        .into_par_iter()
        .map(|p| {
            let mut jets = Jets::for_dynamics(dy);
            let mut ls = LinearStep::new(d, n, m, cols);
            let mut sc = SecondOrderScratch::new(d, n);
            let mut zs = vec![0.0; nodes * d * cols];
            let mut dw = vec![0.0; n];
            let w = d * cols;
            for k in 0..nodes - 1 {
                jets.fill_dynamics(dy, coef_time(t0, k, dt, horizon), base.x(p, k), 2)?;
                ls.tangent_of(&jets);
                rp.increment_into(k, &mut dw);
                let noise = StepNoise { dt, db: base.brownian().step(p, k), dw: &dw, area: rp.area(k) };
                second_variation_forcing(&jets, first.value(p, k), &canon, noise, &mut ls, &mut sc);
                let (done, rest) = zs.split_at_mut((k + 1) * w);
                ls.step(&done[k * w..], noise, &mut rest[..w]);
                if rest[..w].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { path: p, step: k + 1 });
                }
            }
            Ok(zs)
        })
        .collect();
    let data = rows.into_iter().collect::<Result<Vec<_>>>()?.concat();
    Ok(TangentEnsemble {
        paths: base.paths(),
        nodes,
        dim: d,
        cols,
        kind: TangentKind::Second { pairs: canon },
        x0: base.x(0, 0).to_vec(),
        data,
    })
}

/// Column of the pair `(a, b)` within an all-pairs second variation.
pub fn all_pairs_column(d: usize, a: usize, b: usize) -> usize {
    pair_index(d, a, b)
}

/// Tangent versus central finite differences of the terminal state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub h: f64,
    /// `Σ_p |FD_p − T_p| / Σ_p |T_p|`.
    pub mean_relative: f64,
    /// `max_p |FD_p − T_p| / max_p |T_p|`.
    pub max_relative: f64,
    pub max_abs: f64,
}

/// Compare column `col` of `tangent` with central differences of `solve`,
/// which must rerun the base scenario from `x0 + δ` with common noise.
///
/// Steps below `1e−4 · (1 + |x0|_∞)` are refused: their differences are
/// dominated by cancellation.
pub fn fd_check<F>(solve: F, tangent: &TangentEnsemble, col: usize, h: f64) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<HybridPathEnsemble>,
{
    let scale = 1.0 + tangent.x0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let threshold = 1e-4 * scale;
    if !(h >= threshold) {
        return Err(Error::StepTooSmall { h, threshold });
    }
    fd_error(solve, tangent, col, h)
}

/// [`fd_check`] without the step-size guard, for error-versus-`h` studies.
pub fn fd_error<F>(solve: F, tangent: &TangentEnsemble, col: usize, h: f64) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<HybridPathEnsemble>,
{
    if col >= tangent.cols {
        return Err(Error::IndexOutOfRange(format!("column {col} of {}", tangent.cols)));
    }
    let d = tangent.dim;
    let shifted = |delta: &[f64]| -> Result<HybridPathEnsemble> {
        let ens = solve(delta)?;
        if ens.paths() != tangent.paths || ens.nodes() != tangent.nodes {
            return Err(Error::GridMismatch("finite-difference run differs from the tangent grid".into()));
        }
        Ok(ens)
    };
    let fd: Vec<Vec<f64>> = match &tangent.kind {
        TangentKind::First { directions } => {
            let v = &directions[col];
            let plus: Vec<f64> = v.iter().map(|x| h * x).collect();
            let minus: Vec<f64> = v.iter().map(|x| -h * x).collect();
            let (a, b) = (shifted(&plus)?, shifted(&minus)?);
            (0..tangent.paths)
                .map(|p| (0..d).map(|i| (a.terminal(p)[i] - b.terminal(p)[i]) / (2.0 * h)).collect())
                .collect()
        }
        TangentKind::Second { pairs } => {
            let (i, j) = pairs[col];
            let e = |a: f64, b: f64| {
                let mut v = vec![0.0; d];
                v[i] += a * h;
                v[j] += b * h;
                v
            };
            if i == j {
                let (a, o, b) = (shifted(&e(1.0, 0.0))?, shifted(&vec![0.0; d])?, shifted(&e(-1.0, 0.0))?);
                (0..tangent.paths)
                    .map(|p| {
                        (0..d)
                            .map(|r| (a.terminal(p)[r] - 2.0 * o.terminal(p)[r] + b.terminal(p)[r]) / (h * h))
                            .collect()
                    })
                    .collect()
            } else {
                let runs = [
                    shifted(&e(1.0, 1.0))?,
                    shifted(&e(1.0, -1.0))?,
                    shifted(&e(-1.0, 1.0))?,
                    shifted(&e(-1.0, -1.0))?,
                ];
                (0..tangent.paths)
                    .map(|p| {
                        (0..d)
                            .map(|r| {
                                let t = |q: usize| runs[q].terminal(p)[r];
                                (t(0) - t(1) - t(2) + t(3)) / (4.0 * h * h)
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    };
    let (mut num, mut den, mut max_abs, mut max_t) = (0.0, 0.0, 0.0f64, 0.0f64);
    for (p, f) in fd.iter().enumerate() {
        let t = tangent.terminal_column(p, col);
        for r in 0..d {
            let e = (f[r] - t[r]).abs();
            num += e;
            den += t[r].abs();
            max_abs = max_abs.max(e);
            max_t = max_t.max(t[r].abs());
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else if a == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(FdReport { h, mean_relative: ratio(num, den), max_relative: ratio(max_abs, max_t), max_abs })
}
