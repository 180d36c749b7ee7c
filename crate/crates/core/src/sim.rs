//! Synthetic loss scenarios and replicated threshold-identification studies.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bma::{run_het, run_hom, HetConfig, HomConfig, PosteriorMixture, PredictionMode};
use crate::dist::{Continuous, GpdParams, LognormalParams};
use crate::error::{Error, Result};
use crate::metrics::{bulk_tail_report_on, evaluation_edges, EvalReport, Region, DEFAULT_BINS};
use crate::mixture::{render_sig17, BulkFit, MixtureFitter, MixtureModel};
use crate::quantile_boot::{quantile_sorted, stream_rng, QuantileGrid};
use crate::sample::{sorted, LossSample};

/// One claim type: lognormal bulk truncated at `threshold`, GPD above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimType {
    pub name: String,
    pub mu: f64,
    pub sigma_log: f64,
    pub threshold: f64,
    pub tail_scale: f64,
    pub tail_shape: f64,
    /// Probability that a claim of this type is drawn from the tail.
    pub tail_fraction: f64,
    /// Share of this type among all claims.
    pub proportion: f64,
}

impl ClaimType {
    pub fn mixture(&self) -> Result<MixtureModel<f64>> {
        let bulk = LognormalParams::new(self.mu, self.sigma_log)?;
        let tail = GpdParams::new(self.threshold, self.tail_scale, self.tail_shape)?;
        MixtureModel::new(self.threshold, self.tail_fraction, bulk, tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    /// Zero means the training part doubles as calibration data.
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.49, calibration: 0.21, test: 0.30 }
    }
}

fn default_quantiles() -> usize {
    100
}
fn default_bootstrap() -> usize {
    200
}
fn default_draws() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub types: Vec<ClaimType>,
    pub n: usize,
    pub thresholds: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_quantiles")]
    pub quantiles: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub mode: PredictionMode,
    #[serde(default)]
    pub bulk_fit: BulkFit,
}

impl ScenarioSpec {
    /// LN(5, 1) bulk with a 5% GPD(700, 600, 0.2) tail; candidates 400..=1000 by 100.
    pub fn homogeneous() -> Self {
        Self {
            name: "homogeneous".into(),
            types: vec![ClaimType {
                name: "type1".into(),
                mu: 5.0,
                sigma_log: 1.0,
                threshold: 700.0,
                tail_scale: 600.0,
                tail_shape: 0.2,
                tail_fraction: 0.05,
                proportion: 1.0,
            }],
            n: 10_000,
            thresholds: (4..=10).map(|k| k as f64 * 100.0).collect(),
            replications: 200,
            seed: 20_240_601,
            split: SplitFractions::default(),
            quantiles: default_quantiles(),
            bootstrap: default_bootstrap(),
            draws: default_draws(),
            mode: PredictionMode::default(),
            bulk_fit: BulkFit::default(),
        }
    }

    /// Two equally likely claim types; candidates 400..=1600 by 200.
    pub fn heterogeneous() -> Self {
        let mut spec = Self::homogeneous();
        spec.name = "heterogeneous".into();
        spec.types[0].proportion = 0.5;
        spec.types.push(ClaimType {
            name: "type2".into(),
            mu: 6.0,
            sigma_log: 0.5,
            threshold: 1000.0,
            tail_scale: 500.0,
            tail_shape: 0.1,
            tail_fraction: 0.05,
            proportion: 0.5,
        });
        spec.thresholds = (2..=8).map(|k| k as f64 * 200.0).collect();
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::InvalidInput("scenario has no claim types".into()));
        }
        for t in &self.types {
            if !(t.tail_fraction > 0.0 && t.tail_fraction < 1.0) {
                return Err(Error::InvalidInput(format!("tail fraction of `{}` must lie in (0, 1)", t.name)));
            }
            if !(t.proportion > 0.0) {
                return Err(Error::InvalidInput(format!("proportion of `{}` must be positive", t.name)));
            }
            t.mixture()?;
        }
        let total: f64 = self.types.iter().map(|t| t.proportion).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("type proportions sum to {total}, not 1")));
        }
        if self.thresholds.len() < 2 || self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("need at least two strictly increasing candidate thresholds".into()));
        }
        let s = self.split;
        if s.train <= 0.0 || s.test <= 0.0 || s.calibration < 0.0 || (s.train + s.calibration + s.test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("split fractions must be nonnegative, train/test positive, summing to 1".into()));
        }
        if self.n == 0 || self.replications == 0 {
            return Err(Error::InvalidInput("sample size and replication count must be positive".into()));
        }
        Ok(())
    }

    pub fn is_heterogeneous(&self) -> bool {
        self.types.len() > 1
    }
}

/// One generated database split into train, calibration and test parts, labeled by claim type.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: LossSample<f64>,
    /// Equal to `train` when the calibration fraction is zero.
    pub calibration: LossSample<f64>,
    pub test: LossSample<f64>,
}

impl GeneratedData {
    /// Small/medium/large cut points: 20th and 80th percentiles of the training data.
    pub fn size_class_cuts(&self) -> (f64, f64) {
        let s = self.train.sorted();
        (quantile_sorted(&s, 0.2), quantile_sorted(&s, 0.8))
    }

    /// Size class of every value in `sample` under the training cut points.
    pub fn size_classes(&self, sample: &LossSample<f64>) -> Vec<&'static str> {
        let (lo, hi) = self.size_class_cuts();
        sample
            .values()
            .iter()
            .map(|&x| if x <= lo { "small" } else if x <= hi { "medium" } else { "large" })
            .collect()
    }
}

fn draw_value<R: Rng>(rng: &mut R, t: &ClaimType, bulk: &LognormalParams<f64>, tail: &GpdParams<f64>, bulk_mass: f64) -> Result<f64> {
    let tail_draw = rng.random::<f64>() < t.tail_fraction;
    let v: f64 = rng.sample(Open01);
    if tail_draw {
        tail.quantile(v)
    } else {
        // inverse CDF of the bulk truncated at the threshold
        Ok(bulk.quantile(v * bulk_mass)?.min(t.threshold))
    }
}

/// Draws `spec.n` claims (type by proportion, then bulk or tail) and splits them.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<GeneratedData> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0);
    let laws: Vec<(LognormalParams<f64>, GpdParams<f64>, f64)> = spec
        .types
        .iter()
        .map(|t| {
            let bulk = LognormalParams::new(t.mu, t.sigma_log)?;
            let tail = GpdParams::new(t.threshold, t.tail_scale, t.tail_shape)?;
            Ok((bulk, tail, bulk.cdf(t.threshold)))
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let pick: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = spec.types.len() - 1;
        for (i, t) in spec.types.iter().enumerate() {
            acc += t.proportion;
            if pick < acc {
                k = i;
                break;
            }
        }
        let (bulk, tail, mass) = &laws[k];
        values.push(draw_value(&mut rng, &spec.types[k], bulk, tail, *mass)?);
        labels.push(spec.types[k].name.clone());
    }
    let n_train = (spec.split.train * spec.n as f64).round() as usize;
    let n_cal = (spec.split.calibration * spec.n as f64).round() as usize;
    let n_cal = n_cal.min(spec.n - n_train);
    let part = |a: usize, b: usize| LossSample::with_labels(values[a..b].to_vec(), labels[a..b].to_vec());
    let train = part(0, n_train)?;
    let calibration = if n_cal == 0 { train.clone() } else { part(n_train, n_train + n_cal)? };
    let test = part(n_train + n_cal, spec.n)?;
    Ok(GeneratedData { train, calibration, test })
}

/// Seed of replication `r`, independent of execution order.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    stream_rng(master, r as u64 + 1).random()
}

/// Metrics for one group in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub replication: usize,
    pub seed: u64,
    pub group: String,
    pub u_star: Option<f64>,
    /// Bulk/tail split used for evaluation.
    pub split_u: f64,
    pub metrics: EvalReport<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyFailure {
    pub replication: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Hellinger,
    Kl,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Hellinger => "hellinger",
            Metric::Kl => "kl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UStarSummary {
    pub mean: f64,
    pub sd: f64,
    pub identified: usize,
    pub none: usize,
}

/// Per-replication rows with recomputable aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub scenario: String,
    pub replications: usize,
    pub combination_methods: Vec<String>,
    pub single_method: String,
    pub rows: Vec<StudyRow>,
    pub failures: Vec<StudyFailure>,
}

impl StudyResult {
    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.rows.iter().map(|r| r.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    }

    fn group_rows<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a StudyRow> + 'a {
        self.rows.iter().filter(move |r| r.group == group)
    }

    /// Mean and sample standard deviation of the identified thresholds.
    pub fn u_star_summary(&self, group: &str) -> UStarSummary {
        let found: Vec<f64> = self.group_rows(group).filter_map(|r| r.u_star).collect();
        let none = self.group_rows(group).filter(|r| r.u_star.is_none()).count();
        let n = found.len() as f64;
        let mean = found.iter().sum::<f64>() / n;
        let sd = if found.len() > 1 {
            (found.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        UStarSummary { mean, sd, identified: found.len(), none }
    }

    /// Share of replications where `method` has a strictly smaller metric than the single-threshold model.
    pub fn outperformance(&self, group: &str, method: &str, region: Region, metric: Metric) -> Option<f64> {
        let pick = |r: &EvalReport<f64>, m: &str| {
            r.get(m, region).map(|row| match metric {
                Metric::Hellinger => row.hellinger,
                Metric::Kl => row.kl,
            })
        };
        let mut wins = 0usize;
        let mut total = 0usize;
        for row in self.group_rows(group) {
            if let (Some(a), Some(b)) = (pick(&row.metrics, method), pick(&row.metrics, &self.single_method)) {
                total += 1;
                wins += usize::from(a < b);
            }
        }
        (total > 0).then(|| wins as f64 / total as f64)
    }

    /// Mean metric of a method over replications.
    pub fn mean_metric(&self, group: &str, method: &str, region: Region, metric: Metric) -> Option<f64> {
        let v: Vec<f64> = self
            .group_rows(group)
            .filter_map(|r| r.metrics.get(method, region))
            .map(|row| match metric {
                Metric::Hellinger => row.hellinger,
                Metric::Kl => row.kl,
            })
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-replication rows, followed by the aggregate block as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replication,seed,group,u_star,split_u,method,region,hellinger,kl,n_obs\n");
        for r in &self.rows {
            let u = r.u_star.map(|u| u.to_string()).unwrap_or_else(|| "none".into());
            for m in &r.metrics.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{:e},{:e},{}\n",
                    r.replication,
                    r.seed,
                    r.group,
                    u,
                    r.split_u,
                    m.method,
                    m.region.as_str(),
                    m.hellinger,
                    m.kl,
                    m.n_obs
                ));
            }
        }
        for f in &self.failures {
            out.push_str(&format!("# failure replication={} seed={}: {}\n", f.replication, f.seed, f.reason));
        }
        out.push_str("# aggregate,group,statistic,method,region,metric,value\n");
        for g in self.groups() {
            let s = self.u_star_summary(&g);
            out.push_str(&format!("# aggregate,{g},u_star_mean,,,,{}\n", s.mean));
            out.push_str(&format!("# aggregate,{g},u_star_sd,,,,{}\n", s.sd));
            out.push_str(&format!("# aggregate,{g},u_star_none,,,,{}\n", s.none));
            for m in &self.combination_methods {
                for region in [Region::Bulk, Region::Tail] {
                    for metric in [Metric::Hellinger, Metric::Kl] {
                        if let Some(p) = self.outperformance(&g, m, region, metric) {
                            out.push_str(&format!(
                                "# aggregate,{g},outperformance,{m},{},{},{p}\n",
                                region.as_str(),
                                metric.as_str()
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn summary_json_value(&self) -> Value {
        let mut groups = serde_json::Map::new();
        for g in self.groups() {
            let s = self.u_star_summary(&g);
            let mut perf = serde_json::Map::new();
            let mut means = serde_json::Map::new();
            let methods = self.combination_methods.iter().chain(std::iter::once(&self.single_method));
            for m in methods {
                let mut by_region = serde_json::Map::new();
                let mut mean_region = serde_json::Map::new();
                for region in [Region::Bulk, Region::Tail] {
                    let entry = |f: &dyn Fn(Metric) -> Option<f64>| json!({"hellinger": f(Metric::Hellinger), "kl": f(Metric::Kl)});
                    by_region.insert(region.as_str().into(), entry(&|k| self.outperformance(&g, m, region, k)));
                    mean_region.insert(region.as_str().into(), entry(&|k| self.mean_metric(&g, m, region, k)));
                }
                if *m != self.single_method {
                    perf.insert(m.clone(), Value::Object(by_region));
                }
                means.insert(m.clone(), Value::Object(mean_region));
            }
            groups.insert(
                g.clone(),
                json!({
                    "u_star": {"mean": finite(s.mean), "sd": finite(s.sd), "identified": s.identified, "none": s.none},
                    "outperformance": perf,
                    "mean_metrics": means,
                }),
            );
        }
        json!({
            "scenario": self.scenario,
            "replications": self.replications,
            "completed": self.replications - self.failures.len(),
            "failures": self.failures.iter().map(|f| json!({"replication": f.replication, "seed": f.seed, "reason": f.reason})).collect::<Vec<_>>(),
            "single_method": self.single_method,
            "groups": groups,
        })
    }

    pub fn summary_json(&self) -> String {
        render_sig17(&self.summary_json_value())
    }
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

fn collect_study(
    spec: &ScenarioSpec,
    combination_methods: Vec<String>,
    single_method: &str,
    outcomes: Vec<(usize, u64, Result<Vec<StudyRow>>)>,
) -> Result<StudyResult> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (replication, seed, out) in outcomes {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => {
                warn!("replication {replication} (seed {seed}) failed: {e}");
                failures.push(StudyFailure { replication, seed, reason: e.to_string() });
            }
        }
    }
    if failures.len() as f64 >= MAX_FAILURE_RATE * spec.replications as f64 && !failures.is_empty() {
        return Err(Error::Numerical(format!(
            "{} of {} replications failed (first: {})",
            failures.len(),
            spec.replications,
            failures[0].reason
        )));
    }
    Ok(StudyResult {
        scenario: spec.name.clone(),
        replications: spec.replications,
        combination_methods,
        single_method: single_method.into(),
        rows,
        failures,
    })
}

fn run_replications<F>(spec: &ScenarioSpec, one: F) -> Vec<(usize, u64, Result<Vec<StudyRow>>)>
where
    F: Fn(usize, u64) -> Result<Vec<StudyRow>> + Sync,
{
    (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(spec.seed, r);
            (r, seed, one(r, seed))
        })
        .collect()
}

fn evaluate_methods(
    test: &[f64],
    split_u: f64,
    combos: &[(&str, PosteriorMixture<f64>)],
    single: (&str, &MixtureModel<f64>),
) -> Result<EvalReport<f64>> {
    let edges = evaluation_edges(test, split_u, DEFAULT_BINS)?;
    let mut report = EvalReport::default();
    for (name, post) in combos {
        report.extend(bulk_tail_report_on(test, post, split_u, name, &edges)?);
    }
    report.extend(bulk_tail_report_on(test, single.1, split_u, single.0, &edges)?);
    Ok(report)
}

/// Model at `u`, reusing a fitted candidate when one sits exactly there.
fn model_at(candidates: &[MixtureModel<f64>], train: &[f64], u: f64, bulk_fit: BulkFit) -> Result<MixtureModel<f64>> {
    match candidates.iter().find(|m| m.threshold() == u) {
        Some(m) => Ok(m.clone()),
        None => MixtureFitter::new(train).with_bulk_fit(bulk_fit).fit(u),
    }
}

pub const HOM_METHODS: [&str; 2] = ["hom-EI", "w-hom-EI"];
pub const HET_METHODS: [&str; 2] = ["het-EI", "w-het-EI"];
pub const SINGLE_METHOD: &str = "single";

/// One homogeneous replication: identify `u*`, then compare both combinations
/// with the single model at the true threshold, split at the true threshold.
pub fn homogeneous_replication(spec: &ScenarioSpec, replication: usize, seed: u64) -> Result<StudyRow> {
    let data = generate(spec, seed)?;
    let truth = spec.types[0].threshold;
    let config = HomConfig {
        grid: QuantileGrid::uniform(spec.quantiles)?,
        bootstrap: spec.bootstrap,
        mode: spec.mode,
        bulk_fit: spec.bulk_fit,
        seed,
    };
    let res = run_hom(data.train.values(), data.calibration.values(), &spec.thresholds, &config)?;
    let models = res.candidates.models().to_vec();
    let w = &res.report.weights;
    let combos = [
        (HOM_METHODS[0], PosteriorMixture::new(models.clone(), w.w.clone())?),
        (HOM_METHODS[1], PosteriorMixture::new(models.clone(), w.w_star.clone())?),
    ];
    let single = model_at(&models, data.train.values(), truth, spec.bulk_fit)?;
    let metrics = evaluate_methods(data.test.values(), truth, &combos, (SINGLE_METHOD, &single))?;
    Ok(StudyRow {
        replication,
        seed,
        group: spec.types[0].name.clone(),
        u_star: res.report.u_star,
        split_u: truth,
        metrics,
    })
}

pub fn run_homogeneous_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    spec.validate()?;
    if spec.is_heterogeneous() {
        return Err(Error::InvalidInput("homogeneous study needs a single claim type".into()));
    }
    let outcomes = run_replications(spec, |r, seed| homogeneous_replication(spec, r, seed).map(|row| vec![row]));
    collect_study(spec, HOM_METHODS.iter().map(|s| s.to_string()).collect(), SINGLE_METHOD, outcomes)
}

/// One heterogeneous replication: grouped weights per claim type, then per type
/// compare both combinations with the single model at that type's identified
/// threshold (the true one if none is identified), split at that threshold.
pub fn heterogeneous_replication(spec: &ScenarioSpec, replication: usize, seed: u64) -> Result<Vec<StudyRow>> {
    let data = generate(spec, seed)?;
    let config = HetConfig { draws: spec.draws, bulk_fit: spec.bulk_fit, seed };
    let res = run_het(&data.train, &data.calibration, &spec.thresholds, &config)?;
    let train_groups = data.train.groups();
    let test_groups = data.test.groups();
    let mut rows = Vec::new();
    for t in &spec.types {
        let report = res.reports.get(&t.name).ok_or_else(|| Error::InvalidInput(format!("no weights for `{}`", t.name)))?;
        let set = &res.candidates[&t.name];
        let models = set.models().to_vec();
        let split_u = report.u_star.unwrap_or(t.threshold);
        let train = train_groups[&t.name].values();
        let test = test_groups
            .get(&t.name)
            .ok_or_else(|| Error::InvalidInput("no test observations".into()).in_group(&t.name))?;
        let combos = [
            (HET_METHODS[0], PosteriorMixture::new(models.clone(), report.weights.w.clone())?),
            (HET_METHODS[1], PosteriorMixture::new(models.clone(), report.weights.w_star.clone())?),
        ];
        let single = model_at(&models, train, split_u, spec.bulk_fit)?;
        let metrics = evaluate_methods(test.values(), split_u, &combos, (SINGLE_METHOD, &single))
            .map_err(|e| e.in_group(&t.name))?;
        rows.push(StudyRow { replication, seed, group: t.name.clone(), u_star: report.u_star, split_u, metrics });
    }
    Ok(rows)
}

pub fn run_heterogeneous_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    spec.validate()?;
    if !spec.is_heterogeneous() {
        return Err(Error::InvalidInput("heterogeneous study needs at least two claim types".into()));
    }
    let outcomes = run_replications(spec, |r, seed| heterogeneous_replication(spec, r, seed));
    collect_study(spec, HET_METHODS.iter().map(|s| s.to_string()).collect(), SINGLE_METHOD, outcomes)
}

/// Runs the study matching the scenario's number of claim types.
pub fn run_study(spec: &ScenarioSpec) -> Result<StudyResult> {
    if spec.is_heterogeneous() {
        run_heterogeneous_study(spec)
    } else {
        run_homogeneous_study(spec)
    }
}

/// Empirical exceedance share above each type's threshold, by type.
pub fn exceedance_fractions(data: &LossSample<f64>, spec: &ScenarioSpec) -> BTreeMap<String, f64> {
    let groups = data.groups();
    spec.types
        .iter()
        .filter_map(|t| {
            let g = groups.get(&t.name)?;
            let s = sorted(g.values());
            let above = s.len() - s.partition_point(|&x| x <= t.threshold);
            Some((t.name.clone(), above as f64 / s.len() as f64))
        })
        .collect()
}
