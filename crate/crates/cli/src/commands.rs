//! One function per mode; each reads its inputs, runs the library pipeline and writes its files.

use std::collections::BTreeMap;

use log::warn;
use serde_json::{json, Value};
use tailweight::bma::{run_het, run_hom, HetConfig, HomConfig, PosteriorMixture, WeightReport};
use tailweight::metrics::{bulk_tail_report, forward_stop, mrl_curve, EvalReport, MrlCurve};
use tailweight::quantile_boot::quantile_sorted;
use tailweight::sim::{run_study, ScenarioSpec};
use tailweight::{LossSample, MixtureModel, QuantileGrid};

use crate::config::{hash_value, GridSpec, Mode, RunConfig};
use crate::data::{read_losses, split, MIN_ROWS};
use crate::error::{CliError, CliResult};
use crate::output::{OutputDir, Provenance};

const DEFAULT_BOOTSTRAP: usize = 200;
const DEFAULT_QUANTILES: usize = 100;
const DEFAULT_DRAWS: usize = 500;
const MRL_POINTS: usize = 100;

const HOMOGENEOUS: &str = include_str!("../scenarios/homogeneous.json");
const HETEROGENEOUS: &str = include_str!("../scenarios/heterogeneous.json");

pub fn run(config: &RunConfig) -> CliResult<()> {
    match config.mode {
        Mode::Hom => cmd_hom(config),
        Mode::Het => cmd_het(config),
        Mode::Simulate => cmd_simulate(config),
        Mode::Evaluate => cmd_evaluate(config),
        Mode::Mrl => cmd_mrl(config),
        Mode::Forwardstop => cmd_forwardstop(config),
    }
}

fn provenance(config: &RunConfig) -> Provenance {
    Provenance { seed: config.seed, config_hash: config.hash() }
}

fn load(config: &RunConfig, grouped: bool) -> CliResult<LossSample> {
    let loss = config.loss_column.as_deref().expect("validated");
    let group = if grouped { config.group_column.as_deref() } else { None };
    read_losses(&config.input[0], loss, group, config.delimiter)
}

fn require_rows(data: &LossSample) -> CliResult<()> {
    if data.len() < MIN_ROWS {
        return Err(CliError::Input(format!("{} data rows; at least {MIN_ROWS} required", data.len())));
    }
    Ok(())
}

/// Candidate thresholds, ascending and distinct; quantile grids are taken on `data`.
fn resolve_grid(grid: &GridSpec, data: &[f64]) -> Vec<f64> {
    let mut t = match grid {
        GridSpec::Explicit(t) => t.clone(),
        GridSpec::Quantiles { lo, hi, step } => {
            let mut s = data.to_vec();
            s.sort_by(f64::total_cmp);
            let k = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=k).map(|i| quantile_sorted(&s, lo + step * i as f64)).collect()
        }
    };
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn ecdf(data: &[f64], x: f64) -> f64 {
    data.iter().filter(|&&v| v <= x).count() as f64 / data.len() as f64
}

/// Evenly spaced points from the smallest loss to the 99th percentile, plus the candidates.
fn mrl_grid(data: &[f64], candidates: &[f64]) -> Vec<f64> {
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], quantile_sorted(&s, 0.99));
    let step = (hi - lo) / (MRL_POINTS - 1) as f64;
    let mut g: Vec<f64> = (0..MRL_POINTS).map(|i| lo + step * i as f64).collect();
    g.extend(candidates);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Split for the combinations: `u*`, or the candidate with the largest tail-weighted weight.
fn combination_split(report: &WeightReport<f64>) -> (f64, &'static str) {
    match report.u_star {
        Some(u) => (u, "u_star"),
        None => {
            let i = report
                .weights
                .w_star
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("nonempty candidate set");
            warn!("no threshold identified; evaluating combinations at the largest-w* candidate {}", report.thresholds[i]);
            (report.thresholds[i], "max_w_star")
        }
    }
}

fn metric_rows(report: &EvalReport<f64>, split_u: f64) -> Vec<Value> {
    report
        .rows
        .iter()
        .map(|r| {
            json!({
                "method": r.method, "region": r.region.as_str(), "split_u": split_u,
                "hellinger": r.hellinger, "kl": r.kl, "n_obs": r.n_obs,
            })
        })
        .collect()
}

/// Evaluation of both combinations at `split_u` and of every single candidate at its own threshold.
struct Evaluation {
    metrics: Vec<Value>,
    table: Vec<Value>,
    csv_rows: Vec<(String, EvalReport<f64>)>,
}

fn evaluate_candidates(
    test: &[f64],
    all: &[f64],
    models: &[MixtureModel],
    report: &WeightReport<f64>,
    methods: [&str; 2],
    split_u: f64,
) -> CliResult<Evaluation> {
    let mut metrics = Vec::new();
    let mut table = Vec::new();
    let mut csv_rows = Vec::new();
    let quantile = ecdf(all, split_u);
    for (name, w) in methods.iter().zip([&report.weights.w, &report.weights.w_star]) {
        let post = PosteriorMixture::new(models.to_vec(), w.clone())?;
        let r = bulk_tail_report(test, &post, split_u, name)?;
        metrics.extend(metric_rows(&r, split_u));
        table.push(json!({"method": name, "threshold": split_u, "quantile": quantile}));
        csv_rows.push((name.to_string(), r));
    }
    for m in models {
        let u = m.threshold();
        let name = format!("u={u}");
        match bulk_tail_report(test, m, u, &name) {
            Ok(r) => {
                metrics.extend(metric_rows(&r, u));
                csv_rows.push((name.clone(), r));
            }
            Err(e) => warn!("skipping single-threshold evaluation at {u}: {e}"),
        }
        table.push(json!({"method": name, "threshold": u, "quantile": ecdf(all, u)}));
    }
    Ok(Evaluation { metrics, table, csv_rows })
}

fn eval_csv(rows: &[(Option<String>, EvalReport<f64>)]) -> String {
    let grouped = rows.iter().any(|(g, _)| g.is_some());
    let mut out = String::from(if grouped { "group," } else { "" });
    out.push_str("method,region,hellinger,kl,n_obs\n");
    for (g, r) in rows {
        for line in r.to_csv().lines().skip(1) {
            if let Some(g) = g {
                out.push_str(g);
                out.push(',');
            }
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn posterior_json(models: &[MixtureModel], report: &WeightReport<f64>, split_u: f64) -> Value {
    json!({
        "split_u": split_u,
        "thresholds": report.thresholds,
        "w": report.weights.w,
        "w_star": report.weights.w_star,
        "models": models.iter().map(MixtureModel::to_json_value).collect::<Vec<_>>(),
    })
}

fn sizes(all: &LossSample, train: &LossSample, cal: &LossSample, test: &LossSample, reused: bool) -> Value {
    json!({"total": all.len(), "train": train.len(), "calibration": if reused { 0 } else { cal.len() }, "test": test.len()})
}

fn cmd_hom(config: &RunConfig) -> CliResult<()> {
    let data = load(config, false)?;
    require_rows(&data)?;
    let seed = config.seed.expect("validated");
    let thresholds = resolve_grid(config.grid.as_ref().expect("validated"), data.values());
    let fractions = config.split_fractions();
    let (train, cal, test) = split(&data, fractions, seed)?;
    let hom = HomConfig {
        grid: QuantileGrid::uniform(config.quantiles.unwrap_or(DEFAULT_QUANTILES))?,
        bootstrap: config.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
        mode: config.prediction.unwrap_or_default(),
        bulk_fit: config.bulk_fit.unwrap_or_default(),
        seed,
    };
    let res = run_hom(train.values(), cal.values(), &thresholds, &hom)?;
    let models = res.candidates.models();
    let (split_u, split_source) = combination_split(&res.report);
    let eval = evaluate_candidates(test.values(), data.values(), models, &res.report, ["hom-EI", "w-hom-EI"], split_u)?;
    let mrl = mrl_curve(train.values(), &mrl_grid(train.values(), &res.candidates.thresholds()));

    let out = OutputDir::create(&config.out, provenance(config))?;
    out.csv("weights.csv", &res.report.to_csv())?;
    out.csv("mrl.csv", &mrl.to_csv())?;
    let rows: Vec<(Option<String>, EvalReport<f64>)> = eval.csv_rows.into_iter().map(|(_, r)| (None, r)).collect();
    out.csv("eval.csv", &eval_csv(&rows))?;
    out.json("model.json", json!({"kind": "posterior", "posterior": posterior_json(models, &res.report, split_u)}))?;
    out.json(
        "report.json",
        json!({
            "mode": "hom",
            "config": config.to_json_value(),
            "n": sizes(&data, &train, &cal, &test, fractions[1] == 0.0),
            "thresholds": res.candidates.thresholds(),
            "dropped_thresholds": res.dropped_thresholds,
            "u_star": res.report.u_star,
            "split_u": split_u,
            "split_source": split_source,
            "weights": res.report.to_json_value(),
            "refit_failures": res.refit_failures,
            "metrics": eval.metrics,
            "threshold_table": eval.table,
            "mrl_empty_points": mrl.empty_points(),
        }),
    )?;
    println!("u* = {}", res.report.u_star.map_or("none".into(), |u| u.to_string()));
    Ok(())
}

fn cmd_het(config: &RunConfig) -> CliResult<()> {
    let data = load(config, true)?;
    require_rows(&data)?;
    let seed = config.seed.expect("validated");
    let thresholds = resolve_grid(config.grid.as_ref().expect("validated"), data.values());
    let fractions = config.split_fractions();
    let (train, cal, test) = split(&data, fractions, seed)?;
    let het = HetConfig {
        draws: config.draws.unwrap_or(DEFAULT_DRAWS),
        bulk_fit: config.bulk_fit.unwrap_or_default(),
        seed,
    };
    let res = run_het(&train, &cal, &thresholds, &het)?;
    let test_groups = test.groups();
    let all_groups = data.groups();

    let mut weights_csv = String::from(WeightReport::<f64>::csv_header(true));
    let mut rows = Vec::new();
    let mut groups = serde_json::Map::new();
    let mut model_groups = serde_json::Map::new();
    for (g, report) in &res.reports {
        weights_csv.push_str(&report.csv_rows());
        let models = res.candidates[g].models();
        let (split_u, split_source) = combination_split(report);
        let test_g = test_groups
            .get(g)
            .ok_or_else(|| CliError::Input(format!("group `{g}` has no test observations")))?;
        let eval = evaluate_candidates(test_g.values(), all_groups[g].values(), models, report, ["het-EI", "w-het-EI"], split_u)
            .map_err(|e| CliError::Degenerate(format!("group `{g}`: {e}")))?;
        rows.extend(eval.csv_rows.into_iter().map(|(_, r)| (Some(g.clone()), r)));
        model_groups.insert(g.clone(), posterior_json(models, report, split_u));
        groups.insert(
            g.clone(),
            json!({
                "thresholds": res.candidates[g].thresholds(),
                "dropped_thresholds": res.dropped_thresholds[g],
                "u_star": report.u_star,
                "split_u": split_u,
                "split_source": split_source,
                "weights": report.to_json_value(),
                "metrics": eval.metrics,
                "threshold_table": eval.table,
            }),
        );
    }
    let mrl = mrl_curve(train.values(), &mrl_grid(train.values(), &thresholds));

    let out = OutputDir::create(&config.out, provenance(config))?;
    out.csv("weights.csv", &weights_csv)?;
    out.csv("mrl.csv", &mrl.to_csv())?;
    out.csv("eval.csv", &eval_csv(&rows))?;
    out.json("model.json", json!({"kind": "grouped_posterior", "groups": model_groups}))?;
    out.json(
        "report.json",
        json!({
            "mode": "het",
            "config": config.to_json_value(),
            "n": sizes(&data, &train, &cal, &test, fractions[1] == 0.0),
            "groups": groups,
            "mrl_empty_points": mrl.empty_points(),
        }),
    )?;
    for (g, r) in &res.reports {
        println!("{g}: u* = {}", r.u_star.map_or("none".into(), |u| u.to_string()));
    }
    Ok(())
}

fn cmd_mrl(config: &RunConfig) -> CliResult<()> {
    let data = load(config, false)?;
    let grid = resolve_grid(config.grid.as_ref().expect("defaulted"), data.values());
    let curve: MrlCurve<f64> = mrl_curve(data.values(), &grid);
    let out = OutputDir::create(&config.out, provenance(config))?;
    out.csv("mrl.csv", &curve.to_csv())?;
    out.json(
        "report.json",
        json!({"mode": "mrl", "config": config.to_json_value(), "n": data.len(), "empty_points": curve.empty_points()}),
    )
}

fn cmd_forwardstop(config: &RunConfig) -> CliResult<()> {
    let data = load(config, false)?;
    let grid = resolve_grid(config.grid.as_ref().expect("validated"), data.values());
    let seed = config.seed.expect("validated");
    let fs = forward_stop(data.values(), &grid, config.alpha, config.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP), seed)?;
    let mut csv = String::from("u,statistic,p_value,fs_statistic\n");
    for i in 0..fs.thresholds.len() {
        csv.push_str(&format!("{},{:e},{:e},{:e}\n", fs.thresholds[i], fs.statistics[i], fs.p_values[i], fs.fs_statistics[i]));
    }
    let out = OutputDir::create(&config.out, provenance(config))?;
    out.csv("forwardstop.csv", &csv)?;
    out.json(
        "report.json",
        json!({
            "mode": "forwardstop",
            "config": config.to_json_value(),
            "n": data.len(),
            "alpha": config.alpha,
            "k_hat": fs.k_hat,
            "threshold": fs.threshold,
            "dropped_thresholds": fs.dropped,
        }),
    )?;
    println!("ForwardStop threshold = {}", fs.threshold.map_or("none".into(), |u| u.to_string()));
    Ok(())
}

/// Bundled scenario by name, or a JSON/TOML scenario file.
pub fn load_scenario(name: &str) -> CliResult<ScenarioSpec> {
    let parse_err = |src: &str, e: String| CliError::Input(format!("scenario {src}: {e}"));
    match name {
        "homogeneous" => serde_json::from_str(HOMOGENEOUS).map_err(|e| parse_err(name, e.to_string())),
        "heterogeneous" => serde_json::from_str(HETEROGENEOUS).map_err(|e| parse_err(name, e.to_string())),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, e.to_string()))?;
            if path.to_ascii_lowercase().ends_with(".toml") {
                toml::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
            } else {
                serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
            }
        }
    }
}

fn cmd_simulate(config: &RunConfig) -> CliResult<()> {
    let mut spec = load_scenario(config.scenario.as_deref().expect("validated"))?;
    if let Some(s) = config.seed {
        spec.seed = s;
    }
    if let Some(r) = config.replications {
        spec.replications = r;
    }
    if let Some(b) = config.bootstrap {
        spec.bootstrap = b;
    }
    if let Some(q) = config.quantiles {
        spec.quantiles = q;
    }
    if let Some(d) = config.draws {
        spec.draws = d;
    }
    if let Some(m) = config.prediction {
        spec.mode = m;
    }
    if let Some(b) = config.bulk_fit {
        spec.bulk_fit = b;
    }
    if let Some([train, calibration, test]) = config.split {
        spec.split = tailweight::sim::SplitFractions { train, calibration, test };
    }
    match &config.grid {
        Some(GridSpec::Explicit(t)) => spec.thresholds = t.clone(),
        Some(GridSpec::Quantiles { .. }) => {
            return Err(CliError::Input("simulate takes explicit thresholds, not a quantile range".into()))
        }
        None => {}
    }
    spec.validate()?;
    let spec_json = serde_json::to_value(&spec).map_err(|e| CliError::Input(e.to_string()))?;
    let provenance = Provenance {
        seed: Some(spec.seed),
        config_hash: hash_value(&json!({"config": config.to_json_value(), "scenario": spec_json})),
    };
    let study = run_study(&spec)?;
    let out = OutputDir::create(&config.out, provenance)?;
    out.csv("study.csv", &study.to_csv())?;
    let mut summary = study.summary_json_value();
    if let Value::Object(map) = &mut summary {
        map.insert("config".into(), config.to_json_value());
        map.insert("scenario_spec".into(), spec_json);
    }
    out.json("summary.json", summary)?;
    for g in study.groups() {
        let s = study.u_star_summary(&g);
        println!("{g}: mean u* = {:.1}, sd = {:.1}, none = {}", s.mean, s.sd, s.none);
    }
    Ok(())
}

/// Saved model: a single mixture, a posterior over candidates, or one posterior per group.
enum SavedModel {
    Single(MixtureModel),
    Posterior(Posterior),
    Grouped(BTreeMap<String, Posterior>),
}

struct Posterior {
    split_u: f64,
    w: Vec<f64>,
    w_star: Vec<f64>,
    models: Vec<MixtureModel>,
}

fn schema(msg: &str) -> CliError {
    CliError::Input(format!("model JSON: {msg}"))
}

fn f64_array(v: &Value, key: &str) -> CliResult<Vec<f64>> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| schema(&format!("missing array `{key}`")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| schema(&format!("non-numeric entry in `{key}`"))))
        .collect()
}

fn parse_posterior(v: &Value) -> CliResult<Posterior> {
    let split_u = v.get("split_u").and_then(Value::as_f64).ok_or_else(|| schema("missing number `split_u`"))?;
    let models = v
        .get("models")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("missing array `models`"))?
        .iter()
        .map(|m| MixtureModel::from_json_value(m).map_err(|e| schema(&e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let (w, w_star) = (f64_array(v, "w")?, f64_array(v, "w_star")?);
    if w.len() != models.len() || w_star.len() != models.len() {
        return Err(schema("weights and models differ in length"));
    }
    Ok(Posterior { split_u, w, w_star, models })
}

fn parse_model(text: &str) -> CliResult<SavedModel> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema(&e.to_string()))?;
    match v.get("kind").and_then(Value::as_str) {
        Some("posterior") => Ok(SavedModel::Posterior(parse_posterior(v.get("posterior").ok_or_else(|| schema("missing `posterior`"))?)?)),
        Some("grouped_posterior") => {
            let groups = v.get("groups").and_then(Value::as_object).ok_or_else(|| schema("missing object `groups`"))?;
            let parsed = groups
                .iter()
                .map(|(g, p)| Ok((g.clone(), parse_posterior(p)?)))
                .collect::<CliResult<BTreeMap<_, _>>>()?;
            Ok(SavedModel::Grouped(parsed))
        }
        Some(other) => Err(schema(&format!("unknown kind `{other}`"))),
        None => Ok(SavedModel::Single(MixtureModel::from_json_value(&v).map_err(|e| schema(&e.to_string()))?)),
    }
}

fn evaluate_posterior(test: &[f64], p: &Posterior, methods: [&str; 2]) -> CliResult<EvalReport<f64>> {
    let mut report = EvalReport::default();
    for (name, w) in methods.iter().zip([&p.w, &p.w_star]) {
        let post = PosteriorMixture::new(p.models.clone(), w.clone())?;
        report.extend(bulk_tail_report(test, &post, p.split_u, name)?);
    }
    Ok(report)
}

fn cmd_evaluate(config: &RunConfig) -> CliResult<()> {
    let path = config.model.as_ref().expect("validated");
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let model = parse_model(&text)?;
    let grouped = matches!(model, SavedModel::Grouped(_));
    if grouped && config.group_column.is_none() {
        return Err(CliError::Input("grouped model needs --group-column on the test data".into()));
    }
    let test = load(config, grouped)?;
    let mut rows: Vec<(Option<String>, EvalReport<f64>)> = Vec::new();
    let mut metrics = serde_json::Map::new();
    match &model {
        SavedModel::Single(m) => {
            let r = bulk_tail_report(test.values(), m, m.threshold(), "single")?;
            metrics.insert("all".into(), json!(metric_rows(&r, m.threshold())));
            rows.push((None, r));
        }
        SavedModel::Posterior(p) => {
            let r = evaluate_posterior(test.values(), p, ["hom-EI", "w-hom-EI"])?;
            metrics.insert("all".into(), json!(metric_rows(&r, p.split_u)));
            rows.push((None, r));
        }
        SavedModel::Grouped(groups) => {
            let by_group = test.groups();
            for (g, p) in groups {
                let t = by_group.get(g).ok_or_else(|| CliError::Input(format!("no test observations for group `{g}`")))?;
                let r = evaluate_posterior(t.values(), p, ["het-EI", "w-het-EI"])
                    .map_err(|e| CliError::Degenerate(format!("group `{g}`: {e}")))?;
                metrics.insert(g.clone(), json!(metric_rows(&r, p.split_u)));
                rows.push((Some(g.clone()), r));
            }
        }
    }
    let out = OutputDir::create(&config.out, provenance(config))?;
    out.csv("eval.csv", &eval_csv(&rows))?;
    out.json(
        "report.json",
        json!({"mode": "evaluate", "config": config.to_json_value(), "n": test.len(), "metrics": metrics}),
    )
}
