//! Run configuration: an optional JSON/TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tailweight::bma::PredictionMode;
use tailweight::mixture::BulkFit;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TAILWEIGHT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Tail-weighted averaging on homogeneous data.
    Hom,
    /// Grouped averaging; needs a group column.
    Het,
    /// Replicated study on a synthetic scenario.
    Simulate,
    /// Bulk/tail metrics of a saved model on test data.
    Evaluate,
    /// Mean-residual-life curve.
    Mrl,
    /// ForwardStop threshold from Anderson-Darling p-values.
    Forwardstop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hom => "hom",
            Mode::Het => "het",
            Mode::Simulate => "simulate",
            Mode::Evaluate => "evaluate",
            Mode::Mrl => "mrl",
            Mode::Forwardstop => "forwardstop",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Mode::Hom | Mode::Het | Mode::Simulate | Mode::Forwardstop)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tailweight", version, about = "Threshold selection for bulk+GPD severity mixtures")]
pub struct Args {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// JSON or TOML file with any of the options below; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss CSV (hom, het, mrl, forwardstop) or test CSV (evaluate).
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    /// Saved model JSON for evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Scenario file, or `homogeneous` / `heterogeneous` for the bundled ones.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Column holding the positive losses.
    #[arg(long)]
    pub loss_column: Option<String>,
    /// Column holding the group label (het, evaluate on grouped models).
    #[arg(long)]
    pub group_column: Option<String>,
    /// Field delimiter; defaults to `,`.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Explicit candidate thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Threshold grid as data quantiles `lo,hi`, stepped by --quantile-step.
    #[arg(long, value_delimiter = ',')]
    pub quantile_range: Option<Vec<f64>>,
    /// Step of the quantile grid; defaults to 0.01.
    #[arg(long)]
    pub quantile_step: Option<f64>,
    /// Bootstrap resamples (B).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Error draws per observation (S).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Quantile grid size (Q).
    #[arg(long)]
    pub quantiles: Option<usize>,
    /// Replications (R).
    #[arg(long)]
    pub replications: Option<usize>,
    /// ForwardStop false discovery level; defaults to 0.05.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// RNG seed; required for hom, het and forwardstop.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $TAILWEIGHT_OUT, then `tailweight-out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train, calibration and test fractions; calibration 0 reuses the training part.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
    /// `refit` or `fixed`.
    #[arg(long, value_parser = parse_prediction)]
    pub prediction: Option<PredictionMode>,
    /// `truncated` or `naive`.
    #[arg(long, value_parser = parse_bulk_fit)]
    pub bulk_fit: Option<BulkFit>,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_prediction(s: &str) -> Result<PredictionMode, String> {
    parse_enum(s)
}

fn parse_bulk_fit(s: &str) -> Result<BulkFit, String> {
    parse_enum(s)
}

/// Options as read from a config file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    #[serde(default)]
    pub input: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    pub scenario: Option<String>,
    pub loss_column: Option<String>,
    pub group_column: Option<String>,
    pub delimiter: Option<char>,
    pub thresholds: Option<Vec<f64>>,
    pub quantile_range: Option<[f64; 2]>,
    pub quantile_step: Option<f64>,
    pub bootstrap: Option<usize>,
    pub draws: Option<usize>,
    pub quantiles: Option<usize>,
    pub replications: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub split: Option<[f64; 3]>,
    pub prediction: Option<PredictionMode>,
    pub bulk_fit: Option<BulkFit>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
        }
    }
}

/// Candidate threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Explicit(Vec<f64>),
    Quantiles { lo: f64, hi: f64, step: f64 },
}

/// Fully resolved configuration, echoed into reports and hashed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    pub scenario: Option<String>,
    pub loss_column: Option<String>,
    pub group_column: Option<String>,
    pub delimiter: char,
    pub grid: Option<GridSpec>,
    pub bootstrap: Option<usize>,
    pub draws: Option<usize>,
    pub quantiles: Option<usize>,
    pub replications: Option<usize>,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub split: Option<[f64; 3]>,
    pub prediction: Option<PredictionMode>,
    pub bulk_fit: Option<BulkFit>,
    /// Not part of the echo or hash, so reruns into another directory match byte for byte.
    #[serde(skip)]
    pub out: PathBuf,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.5, 0.0, 0.5];
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_QUANTILE_STEP: f64 = 0.01;

fn fixed<const N: usize>(flag: &str, v: Option<Vec<f64>>) -> CliResult<Option<[f64; N]>> {
    v.map(|v| {
        <[f64; N]>::try_from(v.as_slice())
            .map_err(|_| CliError::Input(format!("--{flag} takes {N} comma-separated values, got {}", v.len())))
    })
    .transpose()
}

impl RunConfig {
    /// Overlays flags on the config file and checks the mode's requirements.
    pub fn resolve(args: Args, env_out: Option<PathBuf>) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mode = args
            .mode
            .or(file.mode)
            .ok_or_else(|| CliError::Input("no mode given; use --mode or `mode` in the config".into()))?;
        let input = if args.input.is_empty() { file.input } else { args.input };
        let thresholds = args.thresholds.or(file.thresholds);
        let range = fixed("quantile-range", args.quantile_range)?.or(file.quantile_range);
        let step = args.quantile_step.or(file.quantile_step).unwrap_or(DEFAULT_QUANTILE_STEP);
        let grid = match (thresholds, range) {
            (Some(_), Some(_)) => {
                return Err(CliError::Input("give either explicit thresholds or a quantile range, not both".into()))
            }
            (Some(t), None) => Some(GridSpec::Explicit(t)),
            (None, Some([lo, hi])) => Some(GridSpec::Quantiles { lo, hi, step }),
            (None, None) if mode == Mode::Mrl => Some(GridSpec::Quantiles { lo: 0.0, hi: 0.99, step }),
            (None, None) => None,
        };
        let out = args.out.or(file.out).or(env_out).unwrap_or_else(|| PathBuf::from("tailweight-out"));
        let config = RunConfig {
            mode,
            input,
            model: args.model.or(file.model),
            scenario: args.scenario.or(file.scenario),
            loss_column: args.loss_column.or(file.loss_column),
            group_column: args.group_column.or(file.group_column),
            delimiter: args.delimiter.or(file.delimiter).unwrap_or(','),
            grid,
            bootstrap: args.bootstrap.or(file.bootstrap),
            draws: args.draws.or(file.draws),
            quantiles: args.quantiles.or(file.quantiles),
            replications: args.replications.or(file.replications),
            alpha: args.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            seed: args.seed.or(file.seed),
            split: fixed("split", args.split)?.or(file.split),
            prediction: args.prediction.or(file.prediction),
            bulk_fit: args.bulk_fit.or(file.bulk_fit),
            out,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> CliResult<()> {
        let input_err = |m: String| Err(CliError::Input(m));
        let mode = self.mode.as_str();
        if self.mode.is_stochastic() && self.mode != Mode::Simulate && self.seed.is_none() {
            return input_err(format!("mode {mode} is stochastic and needs --seed"));
        }
        let needs_data = matches!(self.mode, Mode::Hom | Mode::Het | Mode::Mrl | Mode::Forwardstop | Mode::Evaluate);
        if needs_data {
            if self.input.len() != 1 {
                return input_err(format!("mode {mode} needs exactly one --input file"));
            }
            if self.loss_column.is_none() {
                return input_err(format!("mode {mode} needs --loss-column"));
            }
        }
        if matches!(self.mode, Mode::Hom | Mode::Het | Mode::Forwardstop) && self.grid.is_none() {
            return input_err(format!("mode {mode} needs --thresholds or --quantile-range"));
        }
        match &self.grid {
            Some(GridSpec::Explicit(t)) if t.is_empty() || t.iter().any(|v| !v.is_finite()) => {
                return input_err("threshold list is empty or not finite".into())
            }
            Some(GridSpec::Quantiles { lo, hi, step }) if !(0.0 <= *lo && lo <= hi && *hi < 1.0 && *step > 0.0) => {
                return input_err(format!("quantile range needs 0 <= lo <= hi < 1 and step > 0, got {lo}, {hi}, {step}"))
            }
            _ => {}
        }
        if self.mode == Mode::Het && self.group_column.is_none() {
            return input_err("mode het needs --group-column".into());
        }
        if self.mode == Mode::Evaluate && self.model.is_none() {
            return input_err("mode evaluate needs --model".into());
        }
        if self.mode == Mode::Simulate && self.scenario.is_none() {
            return input_err("mode simulate needs --scenario".into());
        }
        let [a, b, c] = self.split_fractions();
        if !(a > 0.0 && b >= 0.0 && c > 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
            return input_err(format!("split fractions must be train > 0, calibration >= 0, test > 0 summing to 1, got {a},{b},{c}"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return input_err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        Ok(())
    }

    pub fn split_fractions(&self) -> [f64; 3] {
        self.split.unwrap_or(DEFAULT_SPLIT)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON echo.
    pub fn hash(&self) -> String {
        hash_value(&self.to_json_value())
    }
}

pub fn hash_value(v: &serde_json::Value) -> String {
    let text = serde_json::to_string(v).expect("JSON serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
