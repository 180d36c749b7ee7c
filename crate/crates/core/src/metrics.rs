//! Density comparison on shared bins, mean-residual-life curves and the
//! ForwardStop threshold baseline.

use log::warn;
use rayon::prelude::*;

use crate::dist::{fit_gpd_mle, Continuous, GpdParams, MIN_EXCESSES};
use crate::error::{Error, Result};
use crate::quantile_boot::stream_rng;
use crate::sample::sorted;
use crate::scalar::{c, Scalar};

/// Mass floor applied to candidate bins before computing KL.
pub const KL_FLOOR: f64 = 1e-10;

/// Default bin count across the full test range.
pub const DEFAULT_BINS: usize = 200;

/// Reference and candidate probability masses on shared bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDensityPair<T> {
    edges: Vec<T>,
    reference: Vec<T>,
    candidate: Vec<T>,
}

fn normalize<T: Scalar>(mass: &mut [T]) -> Result<()> {
    if mass.iter().any(|m| !(*m >= T::zero()) || !m.is_finite()) {
        return Err(Error::InvalidInput("bin masses must be finite and nonnegative".into()));
    }
    let total = mass.iter().fold(T::zero(), |a, &m| a + m);
    if !(total > T::zero()) {
        return Err(Error::InvalidInput("bin masses sum to zero".into()));
    }
    mass.iter_mut().for_each(|m| *m = *m / total);
    Ok(())
}

impl<T: Scalar> BinnedDensityPair<T> {
    /// Both mass vectors are renormalized to sum to one.
    pub fn new(edges: Vec<T>, mut reference: Vec<T>, mut candidate: Vec<T>) -> Result<Self> {
        if edges.len() < 2 || reference.len() != edges.len() - 1 || candidate.len() != reference.len() {
            return Err(Error::InvalidInput("need k+1 edges for k bins on both sides".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("bin edges must be strictly increasing".into()));
        }
        normalize(&mut reference)?;
        normalize(&mut candidate)?;
        Ok(Self { edges, reference, candidate })
    }

    /// Empirical masses of `data` against the masses a model assigns by CDF differences.
    pub fn from_model<D: Continuous<T>>(edges: Vec<T>, data: &[T], model: &D) -> Result<Self> {
        let reference = empirical_masses(data, &edges);
        let candidate = model_masses(model, &edges);
        Self::new(edges, reference, candidate)
    }

    pub fn edges(&self) -> &[T] {
        &self.edges
    }

    pub fn reference(&self) -> &[T] {
        &self.reference
    }

    pub fn candidate(&self) -> &[T] {
        &self.candidate
    }

    /// The same bins with the two sides exchanged.
    pub fn swapped(&self) -> Self {
        Self { edges: self.edges.clone(), reference: self.candidate.clone(), candidate: self.reference.clone() }
    }
}

/// `bins + 1` geometrically spaced edges from `lo` to `hi`.
pub fn log_spaced_edges<T: Scalar>(lo: T, hi: T, bins: usize) -> Result<Vec<T>> {
    if !(lo > T::zero() && hi > lo && hi.is_finite()) || bins == 0 {
        return Err(Error::InvalidInput(format!("log-spaced bins need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let k = T::from_usize_lossy(bins);
    let mut edges: Vec<T> = (0..=bins).map(|i| (a + (b - a) * T::from_usize_lossy(i) / k).exp()).collect();
    edges[0] = lo;
    edges[bins] = hi;
    Ok(edges)
}

/// Count of observations per bin; the first bin is closed on the left, all are closed on the right.
pub fn empirical_masses<T: Scalar>(data: &[T], edges: &[T]) -> Vec<T> {
    let mut counts = vec![T::zero(); edges.len().saturating_sub(1)];
    for &x in data {
        if x < edges[0] || x > edges[edges.len() - 1] {
            continue;
        }
        let i = edges.partition_point(|&e| e < x).saturating_sub(1);
        counts[i] = counts[i] + T::one();
    }
    counts
}

/// Probability a model assigns to each bin.
pub fn model_masses<T: Scalar, D: Continuous<T>>(model: &D, edges: &[T]) -> Vec<T> {
    let cdfs: Vec<T> = edges.iter().map(|&e| model.cdf(e)).collect();
    cdfs.windows(2).map(|w| (w[1] - w[0]).max(T::zero())).collect()
}

/// Squared Hellinger distance `1 - sum sqrt(p q)`.
pub fn hellinger_sq<T: Scalar>(pair: &BinnedDensityPair<T>) -> T {
    let bc = pair.reference.iter().zip(&pair.candidate).fold(T::zero(), |a, (&p, &q)| a + (p * q).sqrt());
    (T::one() - bc).max(T::zero()).min(T::one())
}

/// `KL(reference || candidate)`, with the candidate floored at [`KL_FLOOR`] and renormalized.
pub fn kl_divergence<T: Scalar>(pair: &BinnedDensityPair<T>) -> T {
    let floor: T = c(KL_FLOOR);
    let q: Vec<T> = pair.candidate.iter().map(|&q| q.max(floor)).collect();
    let total = q.iter().fold(T::zero(), |a, &v| a + v);
    let kl = pair
        .reference
        .iter()
        .zip(&q)
        .filter(|(&p, _)| p > T::zero())
        .fold(T::zero(), |a, (&p, &q)| a + p * (p / (q / total)).ln());
    kl.max(T::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Bulk,
    Tail,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Bulk => "bulk",
            Region::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow<T> {
    pub method: String,
    pub region: Region,
    pub hellinger: T,
    pub kl: T,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport<T> {
    pub rows: Vec<EvalRow<T>>,
}

impl<T: Scalar> EvalReport<T> {
    pub fn get(&self, method: &str, region: Region) -> Option<&EvalRow<T>> {
        self.rows.iter().find(|r| r.method == method && r.region == region)
    }

    pub fn extend(&mut self, other: EvalReport<T>) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,region,hellinger,kl,n_obs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                r.method,
                r.region.as_str(),
                r.hellinger.as_f64(),
                r.kl.as_f64(),
                r.n_obs
            ));
        }
        out
    }
}

/// Shared bins for a test sample: log-spaced over `[min, max]` with `split_u` added as an edge.
pub fn evaluation_edges<T: Scalar>(test: &[T], split_u: T, bins: usize) -> Result<Vec<T>> {
    let s = sorted(test);
    let (lo, hi) = match (s.first(), s.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::InvalidInput("empty test sample".into())),
    };
    if !(split_u >= lo && split_u < hi) {
        return Err(Error::InvalidInput(format!("split {split_u} outside the test range [{lo}, {hi}]")));
    }
    let mut edges = log_spaced_edges(lo, hi, bins)?;
    if !edges.contains(&split_u) {
        let i = edges.partition_point(|&e| e < split_u);
        edges.insert(i, split_u);
    }
    Ok(edges)
}

/// Hellinger and KL of `model` against the binned test sample, separately on
/// `x <= split_u` (bulk) and `x > split_u` (tail). Masses are renormalized within each region.
pub fn bulk_tail_report<T: Scalar, D: Continuous<T>>(
    test: &[T],
    model: &D,
    split_u: T,
    method: &str,
) -> Result<EvalReport<T>> {
    let edges = evaluation_edges(test, split_u, DEFAULT_BINS)?;
    bulk_tail_report_on(test, model, split_u, method, &edges)
}

/// As [`bulk_tail_report`], on caller-supplied edges (which must contain `split_u`).
pub fn bulk_tail_report_on<T: Scalar, D: Continuous<T>>(
    test: &[T],
    model: &D,
    split_u: T,
    method: &str,
    edges: &[T],
) -> Result<EvalReport<T>> {
    let cut = edges
        .iter()
        .position(|&e| e == split_u)
        .ok_or_else(|| Error::InvalidInput(format!("split {split_u} is not a bin edge")))?;
    let reference = empirical_masses(test, edges);
    let candidate = model_masses(model, edges);
    let mut rows = Vec::with_capacity(2);
    for (region, range) in [(Region::Bulk, 0..cut), (Region::Tail, cut..edges.len() - 1)] {
        let n_obs = test
            .iter()
            .filter(|&&x| match region {
                Region::Bulk => x <= split_u,
                Region::Tail => x > split_u,
            })
            .count();
        if n_obs == 0 || range.is_empty() {
            return Err(Error::InvalidInput(format!("no test observations in the {} region", region.as_str())));
        }
        let pair = BinnedDensityPair::new(
            edges[range.start..=range.end].to_vec(),
            reference[range.clone()].to_vec(),
            candidate[range].to_vec(),
        )?;
        rows.push(EvalRow { method: method.to_string(), region, hellinger: hellinger_sq(&pair), kl: kl_divergence(&pair), n_obs });
    }
    Ok(EvalReport { rows })
}

/// Empirical mean excess `e(v) = mean(x - v | x > v)` over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MrlCurve<T> {
    pub thresholds: Vec<T>,
    /// `None` where no observation exceeds the grid point.
    pub mean_excess: Vec<Option<T>>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> MrlCurve<T> {
    /// Grid points with no exceedances.
    pub fn empty_points(&self) -> Vec<T> {
        self.thresholds
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n == 0)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("v,mean_excess,count\n");
        for ((v, e), n) in self.thresholds.iter().zip(&self.mean_excess).zip(&self.counts) {
            let e = e.map(|e| format!("{:e}", e.as_f64())).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", v.as_f64(), e, n));
        }
        out
    }
}

pub fn mrl_curve<T: Scalar>(data: &[T], grid: &[T]) -> MrlCurve<T> {
    let s = sorted(data);
    // suffix sums so each grid point costs one binary search
    let mut suffix = vec![T::zero(); s.len() + 1];
    for i in (0..s.len()).rev() {
        suffix[i] = suffix[i + 1] + s[i];
    }
    let mut mean_excess = Vec::with_capacity(grid.len());
    let mut counts = Vec::with_capacity(grid.len());
    for &v in grid {
        let i = s.partition_point(|&x| x <= v);
        let n = s.len() - i;
        counts.push(n);
        mean_excess.push((n > 0).then(|| suffix[i] / T::from_usize_lossy(n) - v));
    }
    let curve = MrlCurve { thresholds: grid.to_vec(), mean_excess, counts };
    let empty = curve.empty_points();
    if !empty.is_empty() {
        warn!("{} MRL grid points have no exceedances", empty.len());
    }
    curve
}

/// Anderson–Darling statistic of values already transformed to (0,1) by a fitted CDF.
pub fn anderson_darling<T: Scalar>(transformed: &[T]) -> T {
    let mut z = transformed.to_vec();
    z.sort_by(|a, b| a.partial_cmp(b).expect("NaN in transformed sample"));
    let n = z.len();
    let nf = T::from_usize_lossy(n);
    let tiny: T = c(1e-300_f64.max(T::min_positive_value().as_f64()));
    let sum = (0..n).fold(T::zero(), |a, i| {
        let lo = z[i].max(tiny);
        let hi = (T::one() - z[n - 1 - i]).max(tiny);
        a + T::from_usize_lossy(2 * i + 1) * (lo.ln() + hi.ln())
    });
    -nf - sum / nf
}

/// `A^2` of excesses against a GPD.
pub fn gpd_anderson_darling<T: Scalar>(params: &GpdParams<T>, excesses: &[T]) -> T {
    let z: Vec<T> = excesses.iter().map(|&e| params.cdf(params.location + e)).collect();
    anderson_darling(&z)
}

/// `-(1/k) sum_{i<=k} ln(1 - p_i)` for each prefix length `k = 1..n`.
pub fn forward_stop_statistics<T: Scalar>(p_values: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            acc = acc - (-p).ln_1p();
            acc / T::from_usize_lossy(i + 1)
        })
        .collect()
}

/// Largest prefix length `k` whose statistic is at most `alpha`, if any.
pub fn forward_stop_rule<T: Scalar>(p_values: &[T], alpha: T) -> Option<usize> {
    forward_stop_statistics(p_values)
        .iter()
        .rposition(|&s| s <= alpha)
        .map(|i| i + 1)
}

/// Parametric-bootstrap p-value of the Anderson–Darling statistic for a GPD fit.
pub fn ad_bootstrap_p_value<T: Scalar>(params: &GpdParams<T>, n: usize, observed: T, n_boot: usize, seed: u64) -> T {
    let mut rng = stream_rng(seed, 0);
    let mut exceed = 0usize;
    let mut used = 0usize;
    for _ in 0..n_boot {
        let sim: Vec<T> = params.sample_with(&mut rng, n).into_iter().map(|x| x - params.location).collect();
        let Ok(fit) = fit_gpd_mle(params.location, &sim) else { continue };
        used += 1;
        if gpd_anderson_darling(&fit.params, &sim) >= observed {
            exceed += 1;
        }
    }
    T::from_usize_lossy(exceed + 1) / T::from_usize_lossy(used + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStopResult<T> {
    /// Grid points that had enough exceedances to be tested.
    pub thresholds: Vec<T>,
    pub statistics: Vec<T>,
    pub p_values: Vec<T>,
    pub fs_statistics: Vec<T>,
    /// Grid points dropped for having fewer than the minimum exceedances.
    pub dropped: Vec<T>,
    /// 1-based count of accepted thresholds, `None` if no prefix qualifies.
    pub k_hat: Option<usize>,
    pub threshold: Option<T>,
}

/// ForwardStop over an ascending grid: GPD fit and Anderson–Darling p-value at
/// each point, then the largest `k` with mean `-ln(1 - p_i)` over the first `k` at most `alpha`.
pub fn forward_stop<T: Scalar>(data: &[T], grid: &[T], alpha: T, n_boot: usize, seed: u64) -> Result<ForwardStopResult<T>> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("threshold grid must be strictly increasing".into()));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_boot == 0 {
        return Err(Error::InvalidInput("at least one bootstrap replicate is required".into()));
    }
    let s = sorted(data);
    let tested: Vec<Option<(T, T, T)>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &u)| {
            let start = s.partition_point(|&x| x <= u);
            let excesses: Vec<T> = s[start..].iter().map(|&x| x - u).collect();
            if excesses.len() < MIN_EXCESSES {
                warn!("ForwardStop: dropping threshold {u} with {} exceedances", excesses.len());
                return None;
            }
            let fit = match fit_gpd_mle(u, &excesses) {
                Ok(f) => f,
                Err(e) => {
                    warn!("ForwardStop: dropping threshold {u}: {e}");
                    return None;
                }
            };
            let a2 = gpd_anderson_darling(&fit.params, &excesses);
            let p = ad_bootstrap_p_value(&fit.params, excesses.len(), a2, n_boot, seed.wrapping_add(i as u64));
            Some((u, a2, p))
        })
        .collect();
    let mut out = ForwardStopResult {
        thresholds: Vec::new(),
        statistics: Vec::new(),
        p_values: Vec::new(),
        fs_statistics: Vec::new(),
        dropped: Vec::new(),
        k_hat: None,
        threshold: None,
    };
    for (&u, t) in grid.iter().zip(tested) {
        match t {
            Some((u, a2, p)) => {
                out.thresholds.push(u);
                out.statistics.push(a2);
                out.p_values.push(p);
            }
            None => out.dropped.push(u),
        }
    }
    out.fs_statistics = forward_stop_statistics(&out.p_values);
    out.k_hat = forward_stop_rule(&out.p_values, alpha);
    out.threshold = out.k_hat.map(|k| out.thresholds[k - 1]);
    if out.threshold.is_none() {
        warn!("ForwardStop: no prefix of the grid passes at alpha = {alpha}");
    }
    Ok(out)
}
