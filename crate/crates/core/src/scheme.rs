//! One-step kernels shared by the ensemble solvers and the streaming
//! estimators. Each kernel reads coefficient jets at the left node and the
//! step's noise, so a stored ensemble and a streamed path see identical
//! arithmetic.

use crate::coefficients::{CoefficientSet, Dynamics};
use crate::error::Result;
use crate::field::eval;

/// Noise of one grid step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepNoise<'a> {
    pub dt: f64,
    pub db: &'a [f64],
    pub dw: &'a [f64],
    pub area: &'a [f64],
}

/// Coefficient values and spatial derivatives at one `(t, x)`.
///
/// Layouts follow [`crate::field`]: an order-`k` derivative of a field with
/// `L` outputs is `L × d^k`. `β` has outputs `(i, ν)`, `β′` has `(i, ν, μ)`.
#[derive(Debug, Clone)]
pub(crate) struct Jets {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub b: Vec<f64>,
    pub db: Vec<f64>,
    pub d2b: Vec<f64>,
    pub sig: Vec<f64>,
    pub dsig: Vec<f64>,
    pub d2sig: Vec<f64>,
    pub beta: Vec<f64>,
    pub dbeta: Vec<f64>,
    pub d2beta: Vec<f64>,
    pub d3beta: Vec<f64>,
    pub betap: Vec<f64>,
    pub dbetap: Vec<f64>,
    pub d2betap: Vec<f64>,
    pub c: f64,
    pub dc: Vec<f64>,
    pub d2c: Vec<f64>,
    pub gam: Vec<f64>,
    pub dgam: Vec<f64>,
    pub d2gam: Vec<f64>,
    pub d3gam: Vec<f64>,
    pub gamp: Vec<f64>,
    pub dgamp: Vec<f64>,
    pub d2gamp: Vec<f64>,
    /// Level-two coefficient of `X`: `(i, ν, μ) ↦ Σ_j ∂_jβ^i_ν β^j_μ + β′^i_{νμ}`.
    pub l2x: Vec<f64>,
    /// Level-two coefficient of `I`: `(ν, μ) ↦ Σ_j ∂_jγ_ν β^j_μ + γ′_{νμ}`.
    pub l2i: Vec<f64>,
    pub beta_zero: bool,
    pub sigma_zero: bool,
    pub weight_zero: bool,
}

impl Jets {
    pub fn new(d: usize, n: usize, m: usize) -> Self {
        let z = |len: usize| vec![0.0; len];
        Self {
            d,
            n,
            m,
            b: z(d),
            db: z(d * d),
            d2b: z(d * d * d),
            sig: z(d * m),
            dsig: z(d * m * d),
            d2sig: z(d * m * d * d),
            beta: z(d * n),
            dbeta: z(d * n * d),
            d2beta: z(d * n * d * d),
            d3beta: z(d * n * d * d * d),
            betap: z(d * n * n),
            dbetap: z(d * n * n * d),
            d2betap: z(d * n * n * d * d),
            c: 0.0,
            dc: z(d),
            d2c: z(d * d),
            gam: z(n),
            dgam: z(n * d),
            d2gam: z(n * d * d),
            d3gam: z(n * d * d * d),
            gamp: z(n * n),
            dgamp: z(n * n * d),
            d2gamp: z(n * n * d * d),
            l2x: z(d * n * n),
            l2i: z(n * n),
            beta_zero: false,
            sigma_zero: false,
            weight_zero: false,
        }
    }

    pub fn for_dynamics(dy: &Dynamics) -> Self {
        Self::new(dy.dim(), dy.rough_dim(), dy.noise_dim())
    }

    /// Dynamics jets up to derivative `order` beyond what the Davie step needs.
    pub fn fill_dynamics(&mut self, dy: &Dynamics, t: f64, x: &[f64], order: usize) -> Result<()> {
        self.beta_zero = dy.beta.is_zero();
        self.sigma_zero = dy.sigma.is_zero();
        eval(dy.b.as_ref(), 0, t, x, &mut self.b)?;
        if !self.sigma_zero {
            eval(dy.sigma.as_ref(), 0, t, x, &mut self.sig)?;
        }
        if !self.beta_zero {
            dy.beta.eval(0, t, x, &mut self.beta)?;
            dy.beta.eval(1, t, x, &mut self.dbeta)?;
            dy.beta.eval_prime(0, t, x, &mut self.betap)?;
        }
        if order >= 1 {
            eval(dy.b.as_ref(), 1, t, x, &mut self.db)?;
            if !self.sigma_zero {
                eval(dy.sigma.as_ref(), 1, t, x, &mut self.dsig)?;
            }
            if !self.beta_zero {
                dy.beta.eval(2, t, x, &mut self.d2beta)?;
                dy.beta.eval_prime(1, t, x, &mut self.dbetap)?;
            }
        }
        if order >= 2 {
            eval(dy.b.as_ref(), 2, t, x, &mut self.d2b)?;
            if !self.sigma_zero {
                eval(dy.sigma.as_ref(), 2, t, x, &mut self.d2sig)?;
            }
            if !self.beta_zero {
                dy.beta.eval(3, t, x, &mut self.d3beta)?;
                dy.beta.eval_prime(2, t, x, &mut self.d2betap)?;
            }
        }
        if !self.beta_zero {
            let (d, n) = (self.d, self.n);
            for i in 0..d {
                for nu in 0..n {
                    for mu in 0..n {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += self.dbeta[(i * n + nu) * d + j] * self.beta[j * n + mu];
                        }
                        let e = (i * n + nu) * n + mu;
                        self.l2x[e] = acc + self.betap[e];
                    }
                }
            }
        }
        Ok(())
    }

    /// Weight jets `(c, γ, γ′)`; call after [`Jets::fill_dynamics`].
    pub fn fill_weight(&mut self, cs: &CoefficientSet, t: f64, x: &[f64], order: usize) -> Result<()> {
        self.weight_zero = cs.weight_is_trivial();
        if self.weight_zero {
            return Ok(());
        }
        let mut c = [0.0];
        eval(cs.c.as_ref(), 0, t, x, &mut c)?;
        self.c = c[0];
        let gamma = &cs.gamma;
        let gz = gamma.is_zero();
        if !gz {
            gamma.eval(0, t, x, &mut self.gam)?;
            gamma.eval(1, t, x, &mut self.dgam)?;
            gamma.eval_prime(0, t, x, &mut self.gamp)?;
        }
        if order >= 1 {
            eval(cs.c.as_ref(), 1, t, x, &mut self.dc)?;
            if !gz {
                gamma.eval(2, t, x, &mut self.d2gam)?;
                gamma.eval_prime(1, t, x, &mut self.dgamp)?;
            }
        }
        if order >= 2 {
            eval(cs.c.as_ref(), 2, t, x, &mut self.d2c)?;
            if !gz {
                gamma.eval(3, t, x, &mut self.d3gam)?;
                gamma.eval_prime(2, t, x, &mut self.d2gamp)?;
            }
        }
        let (d, n) = (self.d, self.n);
        for nu in 0..n {
            for mu in 0..n {
                let mut acc = 0.0;
                if !self.beta_zero {
                    for j in 0..d {
                        acc += self.dgam[nu * d + j] * self.beta[j * n + mu];
                    }
                }
                self.l2i[nu * n + mu] = acc + self.gamp[nu * n + mu];
            }
        }
        Ok(())
    }
}

/// `Σ_{ν,μ} P[(v, ν), μ] A^{μν}` for the integrand component `v`.
#[inline]
pub(crate) fn level_two(p: &[f64], v: usize, n: usize, area: &[f64]) -> f64 {
    let mut acc = 0.0;
    for nu in 0..n {
        for mu in 0..n {
            acc += p[(v * n + nu) * n + mu] * area[mu * n + nu];
        }
    }
    acc
}

/// Davie step `X_k → X_{k+1}`.
pub(crate) fn davie_step(j: &Jets, x: &[f64], noise: StepNoise<'_>, out: &mut [f64]) {
    let (d, n, m) = (j.d, j.n, j.m);
    for i in 0..d {
        let mut v = x[i] + j.b[i] * noise.dt;
        if !j.sigma_zero {
            for a in 0..m {
                v += j.sig[i * m + a] * noise.db[a];
            }
        }
        if !j.beta_zero {
            let mut r = 0.0;
            for nu in 0..n {
                r += j.beta[i * n + nu] * noise.dw[nu];
            }
            r += level_two(&j.l2x, i, n, noise.area);
            v += r;
        }
        out[i] = v;
    }
}

/// Weight step `I_k → I_{k+1}`.
pub(crate) fn weight_step(j: &Jets, i: f64, noise: StepNoise<'_>) -> f64 {
    if j.weight_zero {
        return i;
    }
    let n = j.n;
    let mut v = i + j.c * noise.dt;
    let mut r = 0.0;
    for nu in 0..n {
        r += j.gam[nu] * noise.dw[nu];
    }
    r += level_two(&j.l2i, 0, n, noise.area);
    v += r;
    v
}

/// Coefficients of one step of a linear equation on `d × cols` states.
///
/// `g` is `d × d`, `s` is `m × d × d`, `f` is `n × d × d`, `fp` is
/// `n × n × d × d` indexed `(ν, μ, i, j)`. The forcing increment `df` is
/// `d × cols` and its Gubinelli derivative `fprime` is `n × d × cols`.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub cols: usize,
    pub g: Vec<f64>,
    pub s: Vec<f64>,
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
    pub df: Vec<f64>,
    pub fprime: Vec<f64>,
    pub forced: bool,
    scratch: Vec<f64>,
}

impl LinearStep {
    pub fn new(d: usize, n: usize, m: usize, cols: usize) -> Self {
        Self {
            d,
            n,
            m,
            cols,
            g: vec![0.0; d * d],
            s: vec![0.0; m * d * d],
            f: vec![0.0; n * d * d],
            fp: vec![0.0; n * n * d * d],
            df: vec![0.0; d * cols],
            fprime: vec![0.0; n * d * cols],
            forced: false,
            scratch: vec![0.0; n * d * cols],
        }
    }

    /// Linearisation of the Davie map around the jets' base point.
    pub(crate) fn tangent_of(&mut self, j: &Jets) {
        let (d, n, m) = (self.d, self.n, self.m);
        self.g.copy_from_slice(&j.db);
        for a in 0..m {
            for i in 0..d {
                for l in 0..d {
                    self.s[(a * d + i) * d + l] = j.dsig[(i * m + a) * d + l];
                }
            }
        }
        for nu in 0..n {
            for i in 0..d {
                for l in 0..d {
                    self.f[(nu * d + i) * d + l] = j.dbeta[(i * n + nu) * d + l];
                }
            }
        }
        for nu in 0..n {
            for mu in 0..n {
                for i in 0..d {
                    for l in 0..d {
                        let mut acc = 0.0;
                        for r in 0..d {
                            acc += j.d2beta[((i * n + nu) * d + l) * d + r] * j.beta[r * n + mu];
                        }
                        acc += j.dbetap[((i * n + nu) * n + mu) * d + l];
                        self.fp[((nu * n + mu) * d + i) * d + l] = acc;
                    }
                }
            }
        }
    }

    /// `f_μ y + F′_μ` for every `μ`, as `n × d × cols`.
    pub fn gubinelli(&self, y: &[f64], out: &mut [f64]) {
        let (d, n, c) = (self.d, self.n, self.cols);
        for mu in 0..n {
            for i in 0..d {
                for col in 0..c {
                    let mut acc = if self.forced { self.fprime[(mu * d + i) * c + col] } else { 0.0 };
                    for l in 0..d {
                        acc += self.f[(mu * d + i) * d + l] * y[l * c + col];
                    }
                    out[(mu * d + i) * c + col] = acc;
                }
            }
        }
    }

    /// `Y_{k+1} = Y + ΔF + GYΔt + S_aYΔB^a + f_νYδW^ν + (f′_{νμ}Y + f_ν(f_μY + F′_μ))A^{μν}`.
    pub(crate) fn step(&mut self, y: &[f64], noise: StepNoise<'_>, out: &mut [f64]) {
        let (d, n, m, c) = (self.d, self.n, self.m, self.cols);
        let mut fy = std::mem::take(&mut self.scratch);
        self.gubinelli(y, &mut fy);
        for i in 0..d {
            for col in 0..c {
                let mut v = y[i * c + col];
                if self.forced {
                    v += self.df[i * c + col];
                }
                let mut gy = 0.0;
                for l in 0..d {
                    gy += self.g[i * d + l] * y[l * c + col];
                }
                v += gy * noise.dt;
                for a in 0..m {
                    let mut sy = 0.0;
                    for l in 0..d {
                        sy += self.s[(a * d + i) * d + l] * y[l * c + col];
                    }
                    v += sy * noise.db[a];
                }
                for nu in 0..n {
                    let mut ly = 0.0;
                    for l in 0..d {
                        ly += self.f[(nu * d + i) * d + l] * y[l * c + col];
                    }
                    v += ly * noise.dw[nu];
                    for mu in 0..n {
                        let a = noise.area[mu * n + nu];
                        if a == 0.0 {
                            continue;
                        }
                        let mut q = 0.0;
                        for l in 0..d {
                            q += self.fp[((nu * n + mu) * d + i) * d + l] * y[l * c + col]
                                + self.f[(nu * d + i) * d + l] * fy[(mu * d + l) * c + col];
                        }
                        v += q * a;
                    }
                }
                out[i * c + col] = v;
            }
        }
        self.scratch = fy;
    }
}

/// `Σ_{jl} t[j·d + l] u_j v_l`.
#[inline]
fn bilinear(t: &[f64], d: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..d {
        let mut row = 0.0;
        for l in 0..d {
            row += t[j * d + l] * v[l];
        }
        acc += u[j] * row;
    }
    acc
}

/// Symmetrised bilinear form, exactly symmetric in `(u, v)`.
#[inline]
pub(crate) fn sym(t: &[f64], d: usize, u: &[f64], v: &[f64]) -> f64 {
    0.5 * (bilinear(t, d, u, v) + bilinear(t, d, v, u))
}

/// `Σ_{jlr} t[(j d + l) d + r] a_j u_l v_r`, symmetrised in `(u, v)`.
#[inline]
pub(crate) fn trilinear(t: &[f64], d: usize, a: &[f64], u: &[f64], v: &[f64], buf: &mut [f64]) -> f64 {
    for l in 0..d {
        for r in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += t[(j * d + l) * d + r] * a[j];
            }
            buf[l * d + r] = acc;
        }
    }
    sym(buf, d, u, v)
}

/// Index pairs `(a, b)` with `a ≤ b`, in row order.
pub fn upper_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for a in 0..d {
        for b in a..d {
            out.push((a, b));
        }
    }
    out
}

pub(crate) fn pair_index(d: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * d - a * (a + 1) / 2 + b
}

/// Column `col` of a `d × cols` matrix.
#[inline]
pub(crate) fn column(y: &[f64], d: usize, cols: usize, col: usize, out: &mut [f64]) {
    for i in 0..d {
        out[i] = y[i * cols + col];
    }
}

/// Scratch for the second-order kernels.
#[derive(Debug, Clone)]
pub(crate) struct SecondOrderScratch {
    u: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
    fu: Vec<f64>,
    fv: Vec<f64>,
    fz: Vec<f64>,
    phi: Vec<f64>,
    buf: Vec<f64>,
    bmu: Vec<f64>,
}

impl SecondOrderScratch {
    pub fn new(d: usize, n: usize) -> Self {
        Self {
            u: vec![0.0; d],
            v: vec![0.0; d],
            z: vec![0.0; d],
            fu: vec![0.0; n * d],
            fv: vec![0.0; n * d],
            fz: vec![0.0; n * d],
            phi: vec![0.0; n * d],
            buf: vec![0.0; d * d],
            bmu: vec![0.0; d],
        }
    }
}

/// `out[(μ, i)] = Σ_l ∂_lβ^i_μ w_l`.
fn apply_dbeta(j: &Jets, w: &[f64], out: &mut [f64]) {
    let (d, n) = (j.d, j.n);
    for mu in 0..n {
        for i in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                acc += j.dbeta[(i * n + mu) * d + l] * w[l];
            }
            out[mu * d + i] = acc;
        }
    }
}

fn beta_column(j: &Jets, mu: usize, out: &mut [f64]) {
    for r in 0..j.d {
        out[r] = j.beta[r * j.n + mu];
    }
}

/// Forcing of the second variation for every pair in `pairs`, written into
/// `ls.df` (`d × pairs`) and `ls.fprime` (`n × d × pairs`). `y` is the first
/// variation `d × d`.
pub(crate) fn second_variation_forcing(
    j: &Jets,
    y: &[f64],
    pairs: &[(usize, usize)],
    noise: StepNoise<'_>,
    ls: &mut LinearStep,
    sc: &mut SecondOrderScratch,
) {
    let (d, n, m) = (j.d, j.n, j.m);
    let np = pairs.len();
    let dd = d * d;
    ls.forced = true;
    for (p, &(a, b)) in pairs.iter().enumerate() {
        column(y, d, d, a, &mut sc.u);
        column(y, d, d, b, &mut sc.v);
        if !j.beta_zero {
            apply_dbeta(j, &sc.u, &mut sc.fu);
            apply_dbeta(j, &sc.v, &mut sc.fv);
        }
        for i in 0..d {
            let mut v = sym(&j.d2b[i * dd..(i + 1) * dd], d, &sc.u, &sc.v) * noise.dt;
            if !j.sigma_zero {
                for al in 0..m {
                    let e = i * m + al;
                    v += sym(&j.d2sig[e * dd..(e + 1) * dd], d, &sc.u, &sc.v) * noise.db[al];
                }
            }
            if !j.beta_zero {
                for nu in 0..n {
                    let e = i * n + nu;
                    let t2 = &j.d2beta[e * dd..(e + 1) * dd];
                    let phi = sym(t2, d, &sc.u, &sc.v);
                    ls.fprime[(nu * d + i) * np + p] = phi;
                    v += phi * noise.dw[nu];
                    for mu in 0..n {
                        let area = noise.area[mu * n + nu];
                        if area == 0.0 {
                            continue;
                        }
                        beta_column(j, mu, &mut sc.bmu);
                        let t3 = &j.d3beta[e * dd * d..(e + 1) * dd * d];
                        let ep = (i * n + nu) * n + mu;
                        let mut q = trilinear(t3, d, &sc.bmu, &sc.u, &sc.v, &mut sc.buf);
                        q += sym(t2, d, &sc.fv[mu * d..(mu + 1) * d], &sc.u);
                        q += sym(t2, d, &sc.v, &sc.fu[mu * d..(mu + 1) * d]);
                        q += sym(&j.d2betap[ep * dd..(ep + 1) * dd], d, &sc.u, &sc.v);
                        v += q * area;
                    }
                }
            } else {
                for nu in 0..n {
                    ls.fprime[(nu * d + i) * np + p] = 0.0;
                }
            }
            ls.df[i * np + p] = v;
        }
    }
}

/// Increment of the tangent weights `J^c` for every column of `y`.
pub(crate) fn tangent_weight_increment(j: &Jets, y: &[f64], noise: StepNoise<'_>, out: &mut [f64], sc: &mut SecondOrderScratch) {
    let (d, n) = (j.d, j.n);
    if j.weight_zero {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for col in 0..d {
        column(y, d, d, col, &mut sc.u);
        let u = &sc.u;
        let mut v = 0.0;
        for l in 0..d {
            v += j.dc[l] * u[l];
        }
        v *= noise.dt;
        if !j.beta_zero {
            apply_dbeta(j, u, &mut sc.fu);
        }
        for nu in 0..n {
            let dg = &j.dgam[nu * d..(nu + 1) * d];
            let mut lin = 0.0;
            for l in 0..d {
                lin += dg[l] * u[l];
            }
            v += lin * noise.dw[nu];
            for mu in 0..n {
                let area = noise.area[mu * n + nu];
                if area == 0.0 {
                    continue;
                }
                let mut q = 0.0;
                let ep = nu * n + mu;
                for l in 0..d {
                    q += j.dgamp[ep * d + l] * u[l];
                }
                if !j.beta_zero {
                    beta_column(j, mu, &mut sc.bmu);
                    q += sym(&j.d2gam[nu * d * d..(nu + 1) * d * d], d, &sc.bmu, u);
                    for l in 0..d {
                        q += dg[l] * sc.fu[mu * d + l];
                    }
                }
                v += q * area;
            }
        }
        out[col] = v;
    }
}

/// Increment of the second tangent weights `K^{ab}` for every pair.
/// `z` is the second variation `d × pairs` at the left node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn second_weight_increment(
    j: &Jets,
    y: &[f64],
    z: &[f64],
    pairs: &[(usize, usize)],
    noise: StepNoise<'_>,
    out: &mut [f64],
    sc: &mut SecondOrderScratch,
) {
    let (d, n) = (j.d, j.n);
    let np = pairs.len();
    let dd = d * d;
    if j.weight_zero {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for (p, &(a, b)) in pairs.iter().enumerate() {
        column(y, d, d, a, &mut sc.u);
        column(y, d, d, b, &mut sc.v);
        column(z, d, np, p, &mut sc.z);
        if !j.beta_zero {
            apply_dbeta(j, &sc.u, &mut sc.fu);
            apply_dbeta(j, &sc.v, &mut sc.fv);
            apply_dbeta(j, &sc.z, &mut sc.fz);
            for mu in 0..n {
                let e0 = mu;
                for i in 0..d {
                    let e = i * n + e0;
                    sc.phi[mu * d + i] = sym(&j.d2beta[e * dd..(e + 1) * dd], d, &sc.u, &sc.v);
                }
            }
        }
        let mut v = sym(&j.d2c, d, &sc.u, &sc.v);
        for l in 0..d {
            v += j.dc[l] * sc.z[l];
        }
        v *= noise.dt;
        for nu in 0..n {
            let dg = &j.dgam[nu * d..(nu + 1) * d];
            let t2 = &j.d2gam[nu * dd..(nu + 1) * dd];
            let mut psi = sym(t2, d, &sc.u, &sc.v);
            for l in 0..d {
                psi += dg[l] * sc.z[l];
            }
            v += psi * noise.dw[nu];
            for mu in 0..n {
                let area = noise.area[mu * n + nu];
                if area == 0.0 {
                    continue;
                }
                let ep = nu * n + mu;
                let mut q = sym(&j.d2gamp[ep * dd..(ep + 1) * dd], d, &sc.u, &sc.v);
                for l in 0..d {
                    q += j.dgamp[ep * d + l] * sc.z[l];
                }
                if !j.beta_zero {
                    beta_column(j, mu, &mut sc.bmu);
                    q += trilinear(&j.d3gam[nu * dd * d..(nu + 1) * dd * d], d, &sc.bmu, &sc.u, &sc.v, &mut sc.buf);
                    q += sym(t2, d, &sc.fu[mu * d..(mu + 1) * d], &sc.v);
                    q += sym(t2, d, &sc.u, &sc.fv[mu * d..(mu + 1) * d]);
                    q += sym(t2, d, &sc.z, &sc.bmu);
                    for l in 0..d {
                        q += dg[l] * (sc.fz[mu * d + l] + sc.phi[mu * d + l]);
                    }
                }
                v += q * area;
            }
        }
        out[p] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_is_consistent() {
        for d in 1..5 {
            for (p, &(a, b)) in upper_pairs(d).iter().enumerate() {
                assert_eq!(pair_index(d, a, b), p);
                assert_eq!(pair_index(d, b, a), p);
            }
        }
    }

    #[test]
    fn symmetric_forms_are_bitwise_symmetric() {
        let t = [0.3, -1.7, 2.2, 0.9];
        let (u, v) = ([0.123, -4.5], [7.25, 0.001]);
        assert_eq!(sym(&t, 2, &u, &v).to_bits(), sym(&t, 2, &v, &u).to_bits());
    }
}
