//! Bootstrap uncertainty of empirical quantiles, summarized per quantile by a
//! skew-normal law matched to the bootstrap mean-centred variance and skewness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::SkewNormalParams;
use crate::error::{Error, Result};
use crate::sample::sorted;
use crate::scalar::{c, Scalar};

/// Ascending quantile probabilities strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid<T> {
    probs: Vec<T>,
}

impl<T: Scalar> QuantileGrid<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("quantile grid is empty".into()));
        }
        if probs.iter().any(|&p| !(p > T::zero() && p < T::one())) {
            return Err(Error::InvalidInput("quantile probabilities must lie in (0, 1)".into()));
        }
        if probs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("quantile probabilities must be strictly increasing".into()));
        }
        Ok(Self { probs })
    }

    /// `{ i / (count + 1) : i = 1..=count }`.
    pub fn uniform(count: usize) -> Result<Self> {
        let d = T::from_usize_lossy(count + 1);
        Self::new((1..=count).map(|i| T::from_usize_lossy(i) / d).collect())
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Median-unbiased sample quantile (Hyndman-Fan type 8) of ascending data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let third = T::one() / c(3.0);
    let h = (T::from_usize_lossy(n) + third) * p + third; // 1-based position
    if h <= T::one() {
        return sorted[0];
    }
    if h >= T::from_usize_lossy(n) {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo.to_usize().expect("position in range") - 1;
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Generator for bootstrap iteration `b`, independent of evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ascending with-replacement resample of `data` for iteration `b`.
pub fn resample_sorted<T: Scalar>(data: &[T], seed: u64, b: u64) -> Vec<T> {
    let mut rng = stream_rng(seed, b);
    let n = data.len();
    let draw: Vec<T> = (0..n).map(|_| data[rng.random_range(0..n)]).collect();
    sorted(&draw)
}

/// `B x Q` matrix of bootstrap quantiles; row `b` holds resample `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapMatrix<T> {
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> BootstrapMatrix<T> {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, q: usize) -> Vec<T> {
        self.rows.iter().map(|r| r[q]).collect()
    }
}

pub fn bootstrap_quantiles<T: Scalar>(
    data: &[T],
    grid: &QuantileGrid<T>,
    iterations: usize,
    seed: u64,
) -> Result<BootstrapMatrix<T>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot bootstrap an empty sample".into()));
    }
    if iterations < 2 {
        return Err(Error::InvalidInput("at least two bootstrap iterations are required".into()));
    }
    let rows = (0..iterations as u64)
        .into_par_iter()
        .map(|b| {
            let s = resample_sorted(data, seed, b);
            grid.probs().iter().map(|&p| quantile_sorted(&s, p)).collect()
        })
        .collect();
    Ok(BootstrapMatrix { rows })
}

/// Spread and asymmetry of one bootstrap column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMoments<T> {
    pub sigma: T,
    pub gamma: T,
    /// Set when all bootstrap values coincide; `gamma` is then reported as 0.
    pub zero_variance: bool,
}

/// Variance with divisor `B - 1`, skewness as `(1/B) sum d^3 / sigma^3`.
pub fn column_moments<T: Scalar>(values: &[T]) -> Result<ColumnMoments<T>> {
    let b = values.len();
    if b < 3 {
        return Err(Error::InvalidInput(format!("{b} bootstrap values; at least 3 required")));
    }
    let bf = T::from_usize_lossy(b);
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / bf;
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, v| a + v);
    let var = ss / (bf - T::one());
    let sigma = var.sqrt();
    let scale = mean.abs().max(T::one());
    if !(sigma > scale * T::epsilon() * c(16.0)) {
        return Ok(ColumnMoments { sigma: T::zero(), gamma: T::zero(), zero_variance: true });
    }
    let cube = values.iter().map(|&v| (v - mean).powi(3)).fold(T::zero(), |a, v| a + v);
    Ok(ColumnMoments { sigma, gamma: cube / bf / (sigma * sigma * sigma), zero_variance: false })
}

pub fn quantile_moments<T: Scalar>(matrix: &BootstrapMatrix<T>) -> Result<Vec<ColumnMoments<T>>> {
    let q = matrix.rows.first().map_or(0, Vec::len);
    (0..q).map(|j| column_moments(&matrix.column(j))).collect()
}

/// Largest skewness a skew-normal law can attain (`delta -> 1`).
pub fn max_skewness<T: Scalar>() -> T {
    let m = (c::<T>(2.0) / T::PI()).sqrt();
    (c::<T>(4.0) - T::PI()) / c(2.0) * m * m * m / (T::one() - m * m).powf(c(1.5))
}

/// Method-of-moments skew-normal with mean `y`, standard deviation `sigma` and
/// skewness `gamma` (clamped to 99% of [`max_skewness`]).
pub fn skew_normal_from_moments<T: Scalar>(y: T, sigma: T, gamma: T) -> Result<SkewNormalParams<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::Domain(format!("skew-normal inversion needs sigma > 0, got {sigma}")));
    }
    let limit = c::<T>(0.99) * max_skewness::<T>();
    let g = if gamma.is_nan() { T::zero() } else { gamma.max(-limit).min(limit) };
    let g23 = g.abs().powf(c(2.0 / 3.0));
    let k = ((c::<T>(4.0) - T::PI()) / c(2.0)).powf(c(2.0 / 3.0));
    let delta_abs = (T::PI() / c(2.0) * g23 / (g23 + k)).sqrt();
    let delta = if g < T::zero() { -delta_abs } else { delta_abs };
    let alpha = delta / (T::one() - delta * delta).sqrt();
    let omega = sigma / (T::one() - c::<T>(2.0) * delta * delta / T::PI()).sqrt();
    let location = y - omega * delta * (c::<T>(2.0) / T::PI()).sqrt();
    SkewNormalParams::new(location, omega, alpha)
}

/// Per-quantile record of the error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileError<T> {
    pub prob: T,
    pub observed: T,
    pub sigma: T,
    pub gamma: T,
    pub zero_variance: bool,
    pub skew_normal: SkewNormalParams<T>,
}

/// Skew-normal uncertainty around each observed quantile, from `B` bootstrap resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileErrorModel<T> {
    pub entries: Vec<QuantileError<T>>,
    pub bootstrap_count: usize,
}

impl<T: Scalar> QuantileErrorModel<T> {
    pub fn build(data: &[T], grid: &QuantileGrid<T>, iterations: usize, seed: u64) -> Result<Self> {
        let matrix = bootstrap_quantiles(data, grid, iterations, seed)?;
        let moments = quantile_moments(&matrix)?;
        let s = sorted(data);
        let entries = grid
            .probs()
            .iter()
            .zip(moments)
            .map(|(&prob, m)| {
                let observed = quantile_sorted(&s, prob);
                // a collapsed column still needs a proper density; use a tiny relative width
                let sigma_eff = if m.zero_variance { observed.abs().max(T::one()) * c(1e-9) } else { m.sigma };
                Ok(QuantileError {
                    prob,
                    observed,
                    sigma: m.sigma,
                    gamma: m.gamma,
                    zero_variance: m.zero_variance,
                    skew_normal: skew_normal_from_moments(observed, sigma_eff, m.gamma)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, bootstrap_count: iterations })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probs(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.prob).collect()
    }

    /// One row per quantile: `prob,y_q,sigma_q,gamma_q,alpha_q,omega_q,xi_q`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prob,y_q,sigma_q,gamma_q,alpha_q,omega_q,xi_q\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.prob, e.observed, e.sigma, e.gamma, e.skew_normal.shape, e.skew_normal.scale, e.skew_normal.location
            ));
        }
        out
    }
}
