//! Seeded substreams, sample statistics and log-log slope fitting.
//!
//! Every random draw in the crate comes from a [`SeedLedger`] substream keyed
//! by `(master, tag, mesh index, path index)`. Keys are hashed, so a path's
//! stream never depends on which thread simulates it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Component tags used when deriving substreams.
pub mod tags {
    pub const DRIVER: u64 = 0x6472_6976;
    pub const BROWNIAN: u64 = 0x6272_6f77;
    pub const OUTER: u64 = 0x6f75_7465;
    pub const INNER: u64 = 0x696e_6e65;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed plus the rule that derives per-task substreams from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub master_seed: u64,
}

impl SeedLedger {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// 64-bit key of the substream `(tag, mesh, path)`.
    pub fn key(&self, tag: u64, mesh: u64, path: u64) -> u64 {
        let mut h = splitmix64(self.master_seed);
        h = splitmix64(h ^ tag);
        h = splitmix64(h ^ mesh.rotate_left(17));
        splitmix64(h ^ path.rotate_left(41))
    }

    pub fn stream(&self, tag: u64, mesh: u64, path: u64) -> ChaCha8Rng {
        let key = self.key(tag, mesh, path);
        let mut seed = [0u8; 32];
        let mut h = key;
        for chunk in seed.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Fill `out` with independent standard normals from `rng`.
pub fn fill_normals<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// Brownian increments for one path: `steps` rows of `dim` components over a
/// grid of width `dt`, simulated `refine` times finer and aggregated.
///
/// Aggregation makes runs at `N` and `refine * N` share one fine path.
pub fn brownian_increments<R: rand::Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    steps: usize,
    dt: f64,
    refine: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), steps * dim);
    let refine = refine.max(1);
    let sd = (dt / refine as f64).sqrt();
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..steps {
        for _ in 0..refine {
            for a in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                out[k * dim + a] += sd * z;
            }
        }
    }
}

/// Pairwise (tree) summation; the reduction order depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error `sd / sqrt(M)` with deterministic reduction.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Normal-approximation confidence interval: `(mean, halfwidth)`.
pub fn mean_ci(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("mean_ci on empty sample".into()));
    }
    if !(0.0..1.0).contains(&level) || level == 0.0 {
        return Err(Error::InvalidParameter(format!("confidence level {level}")));
    }
    let (mean, se) = mean_stderr(samples);
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok((mean, z * se))
}

/// Least-squares fit of `log y` against `log h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn slope_fit(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "slope fit needs at least 4 points, got {}",
            pairs.len()
        )));
    }
    if let Some(&(h, y)) = pairs.iter().find(|(h, y)| !(*h > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs positive data, got ({h}, {y})"
        )));
    }
    let n = pairs.len() as f64;
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit with identical abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r2 })
}

/// Fit over the strictly positive entries only; `None` when fewer than four
/// remain.
pub fn fit_positive(pairs: &[(f64, f64)]) -> Option<SlopeFit> {
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(h, y)| h > 0.0 && y > 0.0 && y.is_finite())
        .collect();
    slope_fit(&kept).ok()
}

/// Dyadic spans `1, 2, 4, ..` (in steps) not exceeding `steps / 2`.
pub fn dyadic_spans(steps: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut h = 1;
    while 2 * h <= steps {
        out.push(h);
        h *= 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn slope_of_exact_power_law() {
        let pairs: Vec<_> = (1..8).map(|k| {
            let h = 2f64.powi(-k);
            (h, h * h)
        }).collect();
        let fit = slope_fit(&pairs).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_constant_is_zero() {
        let pairs: Vec<_> = (1..6).map(|k| (2f64.powi(-k), 3.5)).collect();
        let fit = slope_fit(&pairs).unwrap();
        assert!(fit.slope.abs() < 1e-14);
    }

    #[test]
    fn slope_with_multiplicative_noise() {
        let mut rng = SeedLedger::new(3).stream(1, 0, 0);
        let pairs: Vec<_> = (1..10)
            .map(|k| {
                let h = 2f64.powi(-k);
                let noise: f64 = rng.random_range(-1.0..1.0);
                (h, h.powf(1.5) * (1.0 + 0.01 * noise))
            })
            .collect();
        let fit = slope_fit(&pairs).unwrap();
        assert!((1.45..=1.55).contains(&fit.slope), "{}", fit.slope);
    }

    #[test]
    fn slope_rejects_bad_input() {
        assert!(matches!(slope_fit(&[(1.0, 1.0); 3]), Err(Error::InsufficientData(_))));
        let bad = [(0.5, 1.0), (0.25, 0.0), (0.125, 1.0), (0.0625, 1.0)];
        assert!(matches!(slope_fit(&bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ci_of_constant_sample_is_degenerate() {
        let (m, hw) = mean_ci(&[2.5; 10], 0.99).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(hw, 0.0);
        assert!(mean_ci(&[], 0.99).is_err());
    }

    #[test]
    fn ci_is_linear_in_the_sample() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 4.0 * x).collect();
        let (mx, hx) = mean_ci(&xs, 0.99).unwrap();
        let (my, hy) = mean_ci(&ys, 0.99).unwrap();
        assert!((my - 4.0 * mx).abs() < 1e-13);
        assert!((hy - 4.0 * hx).abs() < 1e-13);
    }

    #[test]
    fn ci_coverage_for_standard_normal() {
        let ledger = SeedLedger::new(2024);
        let mut buf = vec![0.0; 100_000];
        let mut covered = 0;
        for trial in 0..100 {
            let mut rng = ledger.stream(7, trial, 0);
            fill_normals(&mut rng, &mut buf);
            let (m, hw) = mean_ci(&buf, 0.99).unwrap();
            if m.abs() <= hw {
                covered += 1;
            }
        }
        assert!(covered >= 95, "coverage {covered}/100");
    }

    #[test]
    fn adjacent_streams_are_uncorrelated() {
        let ledger = SeedLedger::new(11);
        let mut a = vec![0.0; 100_000];
        let mut b = vec![0.0; 100_000];
        fill_normals(&mut ledger.stream(tags::BROWNIAN, 0, 41), &mut a);
        fill_normals(&mut ledger.stream(tags::BROWNIAN, 0, 42), &mut b);
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
        assert!(corr.abs() <= 0.01, "corr {corr}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let ledger = SeedLedger::new(5);
        let x: f64 = ledger.stream(1, 2, 3).random();
        let y: f64 = ledger.stream(1, 2, 3).random();
        let z: f64 = ledger.stream(1, 3, 2).random();
        assert_eq!(x.to_bits(), y.to_bits());
        assert_ne!(x.to_bits(), z.to_bits());
        assert_ne!(ledger.key(1, 0, 1), ledger.key(1, 1, 0));
    }

    #[test]
    fn aggregated_increments_share_the_fine_path() {
        let ledger = SeedLedger::new(9);
        let mut fine = vec![0.0; 8];
        let mut coarse = vec![0.0; 4];
        brownian_increments(&mut ledger.stream(1, 0, 0), 1, 8, 0.125, 1, &mut fine);
        brownian_increments(&mut ledger.stream(1, 0, 0), 1, 4, 0.25, 2, &mut coarse);
        for k in 0..4 {
            assert!((coarse[k] - fine[2 * k] - fine[2 * k + 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
