//! Error-integration model averaging over candidate thresholds.
//!
//! Homogeneous data use bootstrap quantile uncertainty ([`hom_likelihoods`],
//! [`hom_weights`]); labeled data integrate per-observation error draws within
//! each group ([`het_weights`]). In both cases the tail-weighted weights `w*`
//! are compared with the plain weights `w`, and the identified threshold is the
//! smallest candidate whose tail-weighted weight is at least its plain weight.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dist::{fit_gev, Continuous, GevParams, SkewNormalParams};
use crate::error::{Error, Result};
use crate::mixture::{render_sig17, BulkFit, MixtureFitter, MixtureModel};
use crate::quantile_boot::{resample_sorted, stream_rng, QuantileErrorModel};
use crate::sample::{sorted, LossSample};
use crate::scalar::{c, Scalar};
use crate::special::{norm_log_cdf, norm_log_pdf};

/// Candidate mixtures at strictly increasing thresholds, with prior model probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    models: Vec<MixtureModel<T>>,
    priors: Vec<T>,
}

impl<T: Scalar> CandidateSet<T> {
    pub fn new(models: Vec<MixtureModel<T>>, priors: Vec<T>) -> Result<Self> {
        if models.len() < 2 {
            return Err(Error::InvalidInput(format!("{} candidate models; at least 2 required", models.len())));
        }
        if priors.len() != models.len() {
            return Err(Error::InvalidInput("one prior per candidate model is required".into()));
        }
        if models.windows(2).any(|w| !(w[0].threshold() < w[1].threshold())) {
            return Err(Error::InvalidInput("candidate thresholds must be strictly increasing".into()));
        }
        if priors.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::InvalidInput("priors must be positive".into()));
        }
        let total = priors.iter().fold(T::zero(), |a, &p| a + p);
        if (total - T::one()).abs() > c(1e-6) {
            return Err(Error::InvalidInput(format!("priors sum to {total}, not 1")));
        }
        Ok(Self { models, priors })
    }

    /// Equal prior `1/M` on every model.
    pub fn uniform(models: Vec<MixtureModel<T>>) -> Result<Self> {
        let m = T::from_usize_lossy(models.len().max(1));
        let priors = vec![T::one() / m; models.len()];
        Self::new(models, priors)
    }

    pub fn models(&self) -> &[MixtureModel<T>] {
        &self.models
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn thresholds(&self) -> Vec<T> {
        self.models.iter().map(|m| m.threshold()).collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Fits one mixture per threshold, dropping thresholds whose fit fails.
///
/// Returns the fitted candidates (uniform priors) and the dropped thresholds.
pub fn fit_candidates<T: Scalar>(train: &[T], thresholds: &[T]) -> Result<(CandidateSet<T>, Vec<T>)> {
    fit_candidates_with(&MixtureFitter::new(train), thresholds)
}

pub fn fit_candidates_with<T: Scalar>(
    fitter: &MixtureFitter<T>,
    thresholds: &[T],
) -> Result<(CandidateSet<T>, Vec<T>)> {
    let mut models = Vec::new();
    let mut dropped = Vec::new();
    for &u in thresholds {
        match fitter.fit(u) {
            Ok(m) => models.push(m),
            Err(e) => {
                warn!("dropping candidate threshold {u}: {e}");
                dropped.push(u);
            }
        }
    }
    if models.len() < 2 {
        return Err(Error::Numerical(format!(
            "only {} of {} candidate thresholds could be fitted",
            models.len(),
            thresholds.len()
        )));
    }
    Ok((CandidateSet::uniform(models)?, dropped))
}

/// Where the bootstrap-level model quantiles come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// Each candidate is refitted on bootstrap resample `b` of the training data.
    #[default]
    Refit,
    /// The full-data fit's quantile is used for every `b`.
    Fixed,
}

/// Model quantiles at the error-model probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePredictions<T> {
    /// `M x Q` quantiles of the full-data fits.
    pub point: Vec<Vec<T>>,
    /// `M x B x Q` quantiles of the refitted models (refit mode only).
    pub bootstrap: Option<Vec<Vec<Vec<T>>>>,
    /// Resamples on which a refit failed and the full-data quantiles were substituted.
    pub refit_failures: usize,
}

impl<T: Scalar> QuantilePredictions<T> {
    fn draws(&self, m: usize) -> Box<dyn Iterator<Item = &[T]> + '_> {
        match &self.bootstrap {
            Some(b) => Box::new(b[m].iter().map(Vec::as_slice)),
            None => Box::new(std::iter::once(self.point[m].as_slice())),
        }
    }
}

fn model_quantiles<T: Scalar>(model: &MixtureModel<T>, probs: &[T]) -> Result<Vec<T>> {
    probs.iter().map(|&p| model.quantile(p)).collect()
}

/// Model quantiles `y_hat_{m,b}^(q)` for every candidate, in the chosen mode.
pub fn predict_quantiles<T: Scalar>(
    candidates: &CandidateSet<T>,
    train: &[T],
    probs: &[T],
    mode: PredictionMode,
    bulk_fit: BulkFit,
    iterations: usize,
    seed: u64,
) -> Result<QuantilePredictions<T>> {
    let point: Vec<Vec<T>> = candidates
        .models()
        .iter()
        .map(|m| model_quantiles(m, probs))
        .collect::<Result<_>>()?;
    if mode == PredictionMode::Fixed {
        return Ok(QuantilePredictions { point, bootstrap: None, refit_failures: 0 });
    }
    let thresholds = candidates.thresholds();
    let per_b: Vec<(Vec<Vec<T>>, usize)> = (0..iterations as u64)
        .into_par_iter()
        .map(|b| {
            let fitter = MixtureFitter::from_sorted(resample_sorted(train, seed, b)).with_bulk_fit(bulk_fit);
            let mut failures = 0;
            let rows = thresholds
                .iter()
                .enumerate()
                .map(|(m, &u)| match fitter.fit(u).and_then(|fit| model_quantiles(&fit, probs)) {
                    Ok(q) => q,
                    Err(_) => {
                        failures += 1;
                        point[m].clone()
                    }
                })
                .collect();
            (rows, failures)
        })
        .collect();
    let refit_failures = per_b.iter().map(|(_, f)| f).sum();
    let mut bootstrap = vec![Vec::with_capacity(iterations); thresholds.len()];
    for (rows, _) in per_b {
        for (m, row) in rows.into_iter().enumerate() {
            bootstrap[m].push(row);
        }
    }
    Ok(QuantilePredictions { point, bootstrap: Some(bootstrap), refit_failures })
}

/// `ln L(y_hat_m^(q))` for every model `m` (rows) and quantile `q` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMatrix<T> {
    pub log_l: Vec<Vec<T>>,
}

/// Geometric-mean skew-normal likelihood of each model's bootstrap quantiles,
/// `L = 2/omega * (prod_b phi(z_b) Phi(alpha z_b))^(1/B)`, accumulated in log space.
pub fn hom_likelihoods<T: Scalar>(
    predictions: &QuantilePredictions<T>,
    qem: &QuantileErrorModel<T>,
) -> Result<LikelihoodMatrix<T>> {
    let q_count = qem.len();
    let mut log_l = Vec::with_capacity(predictions.point.len());
    for m in 0..predictions.point.len() {
        let mut sums = vec![T::zero(); q_count];
        let mut count = 0usize;
        for row in predictions.draws(m) {
            if row.len() != q_count {
                return Err(Error::InvalidInput("prediction and error-model grids differ".into()));
            }
            for ((acc, &y), e) in sums.iter_mut().zip(row).zip(&qem.entries) {
                *acc = *acc + skew_normal_log_kernel(&e.skew_normal, y);
            }
            count += 1;
        }
        let cf = T::from_usize_lossy(count);
        let row: Vec<T> = sums
            .iter()
            .zip(&qem.entries)
            .map(|(&s, e)| c::<T>(2.0).ln() - e.skew_normal.scale.ln() + s / cf)
            .collect();
        if let Some(q) = row.iter().position(|v| v.is_nan()) {
            return Err(Error::Numerical(format!("likelihood is NaN for model {m}, quantile {q}")));
        }
        log_l.push(row);
    }
    Ok(LikelihoodMatrix { log_l })
}

/// `ln phi(z) + ln Phi(alpha z)` with `z = (y - location)/scale`.
fn skew_normal_log_kernel<T: Scalar>(p: &SkewNormalParams<T>, y: T) -> T {
    let z = (y - p.location) / p.scale;
    norm_log_pdf(z) + norm_log_cdf(p.shape * z)
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || max.is_nan() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// Normalizes log-scores into (log) weights. Errors if every score is zero.
fn log_normalize<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    let total = log_sum_exp(scores.iter().copied());
    if !total.is_finite() {
        return Err(Error::Numerical("every candidate has zero likelihood; model set is degenerate".into()));
    }
    Ok(scores.iter().map(|&s| s - total).collect())
}

/// Plain and tail-weighted model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub w: Vec<T>,
    pub w_star: Vec<T>,
    pub log_w: Vec<T>,
    pub log_w_star: Vec<T>,
}

impl<T: Scalar> ModelWeights<T> {
    fn from_logs(log_w: Vec<T>, log_w_star: Vec<T>) -> Self {
        let w = log_w.iter().map(|v| v.exp()).collect();
        let w_star = log_w_star.iter().map(|v| v.exp()).collect();
        Self { w, w_star, log_w, log_w_star }
    }
}

/// Averages the per-quantile likelihoods and applies Bayes' rule.
///
/// `L(D|M_m)` is the plain mean over quantiles; `L*(D|M_m)` weights quantile `q`
/// by `y_hat_m^(q) / sum_j y_hat_m^(j)` using the full-data predictions.
pub fn hom_weights<T: Scalar>(likelihoods: &LikelihoodMatrix<T>, point: &[Vec<T>], priors: &[T]) -> Result<ModelWeights<T>> {
    let m_count = likelihoods.log_l.len();
    if point.len() != m_count || priors.len() != m_count {
        return Err(Error::InvalidInput("likelihoods, predictions and priors disagree on model count".into()));
    }
    let mut plain = Vec::with_capacity(m_count);
    let mut tail = Vec::with_capacity(m_count);
    for ((row, preds), &prior) in likelihoods.log_l.iter().zip(point).zip(priors) {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN likelihood".into()));
        }
        let qf = T::from_usize_lossy(row.len());
        let total_pred = preds.iter().fold(T::zero(), |a, &b| a + b);
        plain.push(log_sum_exp(row.iter().copied()) - qf.ln() + prior.ln());
        let weighted = row.iter().zip(preds).map(|(&l, &y)| l + (y / total_pred).ln());
        tail.push(log_sum_exp(weighted) + prior.ln());
    }
    Ok(ModelWeights::from_logs(log_normalize(&plain)?, log_normalize(&tail)?))
}

/// Per-model weights with the identified threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport<T> {
    pub group: Option<String>,
    pub thresholds: Vec<T>,
    pub weights: ModelWeights<T>,
    /// `None` when no candidate's tail-weighted weight reaches its plain weight.
    pub u_star: Option<T>,
}

impl<T: Scalar> WeightReport<T> {
    pub fn new(group: Option<String>, thresholds: Vec<T>, weights: ModelWeights<T>) -> Self {
        let u_star = identify_threshold(&weights, &thresholds);
        if u_star.is_none() {
            warn!(
                "no weight reversal among candidates{}; the optimum may lie outside the grid",
                group.as_ref().map(|g| format!(" of group `{g}`")).unwrap_or_default()
            );
        }
        Self { group, thresholds, weights, u_star }
    }

    /// Index of the identified model.
    pub fn star_index(&self) -> Option<usize> {
        self.u_star.and_then(|u| self.thresholds.iter().position(|&t| t == u))
    }

    pub fn csv_header(grouped: bool) -> &'static str {
        if grouped {
            "m,u_m,w,w_star,group\n"
        } else {
            "m,u_m,w,w_star\n"
        }
    }

    /// Rows `m,u_m,w,w_star[,group]` (m is 1-based), without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (i, u) in self.thresholds.iter().enumerate() {
            out.push_str(&format!("{},{},{:e},{:e}", i + 1, u, self.weights.w[i].as_f64(), self.weights.w_star[i].as_f64()));
            if let Some(g) = &self.group {
                out.push_str(&format!(",{g}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}{}", Self::csv_header(self.group.is_some()), self.csv_rows())
    }

    pub fn to_json_value(&self) -> Value {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        json!({
            "group": self.group,
            "thresholds": f(&self.thresholds),
            "w": f(&self.weights.w),
            "w_star": f(&self.weights.w_star),
            "log_w": f(&self.weights.log_w),
            "log_w_star": f(&self.weights.log_w_star),
            "u_star": self.u_star.map(|u| u.as_f64()),
        })
    }

    pub fn to_json(&self) -> String {
        render_sig17(&self.to_json_value())
    }
}

/// Smallest threshold whose tail-weighted weight is at least its plain weight.
///
/// Compared in log space so that weights underflowing to zero still order
/// correctly; a model whose weights are both exactly zero never qualifies.
pub fn identify_threshold<T: Scalar>(weights: &ModelWeights<T>, thresholds: &[T]) -> Option<T> {
    thresholds
        .iter()
        .zip(weights.log_w.iter().zip(&weights.log_w_star))
        .find(|(_, (&lw, &lws))| lws > T::neg_infinity() && lws >= lw)
        .map(|(&u, _)| u)
}

/// Settings for the bootstrap-quantile pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct HomConfig<T> {
    pub grid: crate::quantile_boot::QuantileGrid<T>,
    pub bootstrap: usize,
    pub mode: PredictionMode,
    pub bulk_fit: BulkFit,
    pub seed: u64,
}

impl<T: Scalar> HomConfig<T> {
    /// 100 equally spaced quantiles, 200 resamples, refit mode.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            grid: crate::quantile_boot::QuantileGrid::uniform(100).expect("valid default grid"),
            bootstrap: 200,
            mode: PredictionMode::Refit,
            bulk_fit: BulkFit::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HomResult<T> {
    pub candidates: CandidateSet<T>,
    pub dropped_thresholds: Vec<T>,
    pub error_model: QuantileErrorModel<T>,
    pub likelihoods: LikelihoodMatrix<T>,
    pub report: WeightReport<T>,
    pub refit_failures: usize,
}

/// End-to-end hom-EI: fit candidates on `train`, build the quantile error model
/// on `calibration`, compute both weight vectors and identify the threshold.
pub fn run_hom<T: Scalar>(train: &[T], calibration: &[T], thresholds: &[T], config: &HomConfig<T>) -> Result<HomResult<T>> {
    let fitter = MixtureFitter::new(train).with_bulk_fit(config.bulk_fit);
    let (candidates, dropped_thresholds) = fit_candidates_with(&fitter, thresholds)?;
    let error_model = QuantileErrorModel::build(calibration, &config.grid, config.bootstrap, config.seed)?;
    // independent stream family for the training resamples
    let refit_seed = config.seed ^ 0x9E37_79B9_7F4A_7C15;
    let predictions = predict_quantiles(
        &candidates,
        train,
        config.grid.probs(),
        config.mode,
        config.bulk_fit,
        config.bootstrap,
        refit_seed,
    )?;
    let likelihoods = hom_likelihoods(&predictions, &error_model)?;
    let weights = hom_weights(&likelihoods, &predictions.point, candidates.priors())?;
    let report = WeightReport::new(None, candidates.thresholds(), weights);
    Ok(HomResult {
        candidates,
        dropped_thresholds,
        error_model,
        likelihoods,
        report,
        refit_failures: predictions.refit_failures,
    })
}

/// Weighted combination `sum_m w_m f_m` of candidate mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMixture<T> {
    models: Vec<MixtureModel<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> PosteriorMixture<T> {
    pub fn new(models: Vec<MixtureModel<T>>, weights: Vec<T>) -> Result<Self> {
        if models.is_empty() || models.len() != weights.len() {
            return Err(Error::InvalidInput("posterior needs one weight per model".into()));
        }
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        if weights.iter().any(|&w| w < T::zero()) || (total - T::one()).abs() > c(1e-9) {
            return Err(Error::InvalidInput(format!("posterior weights must be nonnegative and sum to 1 (sum {total})")));
        }
        Ok(Self { models, weights })
    }

    pub fn models(&self) -> &[MixtureModel<T>] {
        &self.models
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

impl<T: Scalar> Continuous<T> for PosteriorMixture<T> {
    fn pdf(&self, x: T) -> T {
        self.models.iter().zip(&self.weights).fold(T::zero(), |a, (m, &w)| a + w * m.pdf(x))
    }

    fn cdf(&self, x: T) -> T {
        self.models.iter().zip(&self.weights).fold(T::zero(), |a, (m, &w)| a + w * m.cdf(x))
    }

    fn quantile(&self, q: T) -> Result<T> {
        if !(q >= T::zero() && q < T::one()) {
            return Err(Error::Domain(format!("posterior quantile needs 0 <= q < 1, got {q}")));
        }
        if q == T::zero() {
            return Ok(T::zero());
        }
        let qs = self.models.iter().map(|m| m.quantile(q)).collect::<Result<Vec<_>>>()?;
        let mut lo = qs.iter().copied().fold(T::infinity(), T::min);
        let mut hi = qs.iter().copied().fold(T::zero(), T::max);
        for _ in 0..200 {
            let mid = (lo + hi) / c(2.0);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= hi * c(1e-15) {
                break;
            }
        }
        Ok((lo + hi) / c(2.0))
    }
}

/// Error law for one regime (bulk or tail) of a group's calibration residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualModel<T> {
    SkewNormal(SkewNormalParams<T>),
    Gev(GevParams<T>),
    /// No perturbation.
    Zero,
}

impl<T: Scalar> ResidualModel<T> {
    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<T> {
        match self {
            ResidualModel::SkewNormal(p) => p.sample_with(rng, n),
            ResidualModel::Gev(p) => p.sample_with(rng, n),
            ResidualModel::Zero => vec![T::zero(); n],
        }
    }
}

/// Residual laws fitted on one group's calibration data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualModels<T> {
    /// Observations at or below this value use `bulk`, the rest use `tail`.
    pub boundary: T,
    pub bulk: ResidualModel<T>,
    pub tail: ResidualModel<T>,
}

impl<T: Scalar> ResidualModels<T> {
    pub fn zero() -> Self {
        Self { boundary: T::infinity(), bulk: ResidualModel::Zero, tail: ResidualModel::Zero }
    }

    fn for_value(&self, y: T) -> &ResidualModel<T> {
        if y <= self.boundary {
            &self.bulk
        } else {
            &self.tail
        }
    }
}

fn moment_skew_normal<T: Scalar>(res: &[T]) -> Option<SkewNormalParams<T>> {
    if res.len() < 3 {
        return None;
    }
    let n = T::from_usize_lossy(res.len());
    let mean = res.iter().fold(T::zero(), |a, &v| a + v) / n;
    let m = crate::quantile_boot::column_moments(res).ok()?;
    if m.zero_variance {
        return None;
    }
    crate::quantile_boot::skew_normal_from_moments(mean, m.sigma, m.gamma).ok()
}

/// Fits the calibration residual laws of one group.
///
/// Predictions come from the reference (median-threshold) candidate evaluated at
/// each observation's plotting position `(rank - 1/2)/n`; residuals of points at
/// or below the reference threshold get a moment-matched skew-normal, those above
/// a GEV fitted by maximum likelihood (skew-normal if the GEV fit fails).
pub fn fit_residual_models<T: Scalar>(candidates: &CandidateSet<T>, calibration: &[T]) -> Result<ResidualModels<T>> {
    let reference = &candidates.models()[(candidates.len() - 1) / 2];
    let boundary = reference.threshold();
    let s = sorted(calibration);
    let n = T::from_usize_lossy(s.len());
    let mut bulk_res = Vec::new();
    let mut tail_res = Vec::new();
    for (i, &y) in s.iter().enumerate() {
        let p = (T::from_usize_lossy(i) + c(0.5)) / n;
        let pred = reference.quantile(p)?;
        if y <= boundary {
            bulk_res.push(y - pred);
        } else {
            tail_res.push(y - pred);
        }
    }
    let bulk = moment_skew_normal(&bulk_res).map(ResidualModel::SkewNormal).ok_or_else(|| {
        Error::Numerical(format!("too few or degenerate bulk residuals below {boundary}"))
    })?;
    let tail = match fit_gev(&tail_res) {
        Ok(f) => ResidualModel::Gev(f.params),
        Err(e) => {
            warn!("GEV residual fit above {boundary} failed ({e}); using skew-normal");
            moment_skew_normal(&tail_res).map(ResidualModel::SkewNormal).unwrap_or(bulk)
        }
    };
    Ok(ResidualModels { boundary, bulk, tail })
}

/// Minimum calibration observations per group.
pub const MIN_GROUP_CALIBRATION: usize = 100;

/// Numerical error integration over one group's calibration observations.
///
/// For observation `k` and draw `s`, the model posterior is proportional to
/// `prior_m * f_m(y_k + eps_s^(k))`. Plain weights average these posteriors with
/// equal observation weight, tail-weighted ones with weight `y_k / sum_i y_i`.
/// Draws that push `y + eps` outside every model's support are skipped, and both
/// averages are taken over the remaining draws.
pub fn integrate_weights<T: Scalar>(
    candidates: &CandidateSet<T>,
    observations: &[T],
    residuals: &ResidualModels<T>,
    draws: usize,
    seed: u64,
) -> Result<ModelWeights<T>> {
    let m_count = candidates.len();
    let log_priors: Vec<T> = candidates.priors().iter().map(|p| p.ln()).collect();
    let partials: Vec<(Vec<T>, Vec<T>, T, T)> = observations
        .par_iter()
        .enumerate()
        .map(|(k, &y)| {
            let mut rng = stream_rng(seed, k as u64);
            let eps = residuals.for_value(y).draw(&mut rng, draws);
            let mut plain = vec![T::zero(); m_count];
            let mut tail = vec![T::zero(); m_count];
            let mut valid = T::zero();
            let mut lp = vec![T::zero(); m_count];
            for e in eps {
                let x = y + e;
                for ((slot, m), &pr) in lp.iter_mut().zip(candidates.models()).zip(&log_priors) {
                    *slot = pr + m.ln_pdf(x);
                }
                let total = log_sum_exp(lp.iter().copied());
                if !total.is_finite() {
                    continue;
                }
                valid = valid + T::one();
                for ((p, t), &l) in plain.iter_mut().zip(tail.iter_mut()).zip(&lp) {
                    let r = (l - total).exp();
                    *p = *p + r;
                    *t = *t + y * r;
                }
            }
            (plain, tail, valid, valid * y)
        })
        .collect();
    let mut plain = vec![T::zero(); m_count];
    let mut tail = vec![T::zero(); m_count];
    let (mut valid, mut mass) = (T::zero(), T::zero());
    for (p, t, v, ym) in partials {
        for m in 0..m_count {
            plain[m] = plain[m] + p[m];
            tail[m] = tail[m] + t[m];
        }
        valid = valid + v;
        mass = mass + ym;
    }
    if !(valid > T::zero()) {
        return Err(Error::Numerical("no error draw lies inside any candidate's support".into()));
    }
    let log_w: Vec<T> = plain.iter().map(|&p| (p / valid).ln()).collect();
    let log_w_star: Vec<T> = tail.iter().map(|&t| (t / mass).ln()).collect();
    Ok(ModelWeights::from_logs(log_normalize(&log_w)?, log_normalize(&log_w_star)?))
}

/// Settings for grouped error integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HetConfig {
    pub draws: usize,
    pub bulk_fit: BulkFit,
    pub seed: u64,
}

impl Default for HetConfig {
    fn default() -> Self {
        Self { draws: 500, bulk_fit: BulkFit::default(), seed: 0 }
    }
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and runs
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-group error-integration weights with the identified threshold of each group.
pub fn het_weights<T: Scalar>(
    candidates: &BTreeMap<String, CandidateSet<T>>,
    calibration: &LossSample<T>,
    config: &HetConfig,
) -> Result<BTreeMap<String, WeightReport<T>>> {
    if calibration.labels().is_none() {
        return Err(Error::InvalidInput("grouped error integration needs labeled calibration data".into()));
    }
    if config.draws < 100 {
        return Err(Error::InvalidInput(format!("{} error draws; at least 100 required", config.draws)));
    }
    let groups = calibration.groups();
    let mut out = BTreeMap::new();
    for (label, set) in candidates {
        let obs = groups
            .get(label)
            .ok_or_else(|| Error::InvalidInput("no calibration observations".into()).in_group(label))?;
        if obs.len() < MIN_GROUP_CALIBRATION {
            return Err(Error::InvalidInput(format!(
                "{} calibration observations; at least {MIN_GROUP_CALIBRATION} required",
                obs.len()
            ))
            .in_group(label));
        }
        let residuals = fit_residual_models(set, obs.values()).map_err(|e| e.in_group(label))?;
        let weights = integrate_weights(set, obs.values(), &residuals, config.draws, config.seed ^ label_hash(label))
            .map_err(|e| e.in_group(label))?;
        out.insert(label.clone(), WeightReport::new(Some(label.clone()), set.thresholds(), weights));
    }
    Ok(out)
}

/// Identified threshold of every group.
pub fn het_identify<T: Scalar>(reports: &BTreeMap<String, WeightReport<T>>) -> BTreeMap<String, Option<T>> {
    reports.iter().map(|(g, r)| (g.clone(), r.u_star)).collect()
}

#[derive(Debug, Clone)]
pub struct HetResult<T> {
    pub candidates: BTreeMap<String, CandidateSet<T>>,
    pub dropped_thresholds: BTreeMap<String, Vec<T>>,
    pub reports: BTreeMap<String, WeightReport<T>>,
}

/// End-to-end het-EI: per-group candidate fits on `train`, error integration on `calibration`.
pub fn run_het<T: Scalar>(
    train: &LossSample<T>,
    calibration: &LossSample<T>,
    thresholds: &[T],
    config: &HetConfig,
) -> Result<HetResult<T>> {
    if train.labels().is_none() {
        return Err(Error::InvalidInput("grouped fitting needs labeled training data".into()));
    }
    let mut candidates = BTreeMap::new();
    let mut dropped_thresholds = BTreeMap::new();
    for (label, sample) in train.groups() {
        let fitter = MixtureFitter::new(sample.values()).with_bulk_fit(config.bulk_fit);
        let (set, dropped) = fit_candidates_with(&fitter, thresholds).map_err(|e| e.in_group(&label))?;
        candidates.insert(label.clone(), set);
        dropped_thresholds.insert(label, dropped);
    }
    let reports = het_weights(&candidates, calibration, config)?;
    Ok(HetResult { candidates, dropped_thresholds, reports })
}
