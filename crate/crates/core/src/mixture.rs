//! Lognormal bulk spliced with a GPD tail at a fixed threshold, and its
//! per-group generalization.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dist::{
    fit_gpd_mle, fit_lognormal_from_moments, Continuous, GpdParams, LogMoments, LognormalParams,
};
use crate::error::{Error, Result};
use crate::sample::{sorted, LossSample};
use crate::scalar::Scalar;

/// Minimum number of observations required on each side of the threshold.
pub const MIN_PER_SIDE: usize = 30;

/// Spliced density: `(1 - phi_u) h(y)/H(u)` for `y <= u`, `phi_u g(y)` above.
///
/// No continuity is imposed at `u`; the two branches carry mass `1 - phi_u` and `phi_u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureModel<T> {
    threshold: T,
    phi_u: T,
    bulk: LognormalParams<T>,
    tail: GpdParams<T>,
    // cached: ln H(u), ln(1 - phi_u), ln phi_u
    ln_bulk_norm: T,
    ln_below: T,
    ln_above: T,
}

/// How the bulk is estimated from the values at or below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BulkFit {
    /// Right-truncated likelihood `h/H(u)`.
    #[default]
    Truncated,
    /// Plain lognormal MLE on the sub-threshold values (biased low in `mu`).
    Naive,
}

impl<T: Scalar> MixtureModel<T> {
    pub fn new(threshold: T, phi_u: T, bulk: LognormalParams<T>, tail: GpdParams<T>) -> Result<Self> {
        if !(phi_u > T::zero() && phi_u < T::one()) {
            return Err(Error::Domain(format!("phi_u must lie in (0, 1), got {phi_u}")));
        }
        if tail.location != threshold {
            return Err(Error::Domain(format!(
                "tail location {} differs from threshold {threshold}",
                tail.location
            )));
        }
        if !(threshold > T::zero()) || !threshold.is_finite() {
            return Err(Error::Domain(format!("threshold must be positive and finite, got {threshold}")));
        }
        let ln_bulk_norm = bulk.ln_cdf(threshold);
        if !ln_bulk_norm.is_finite() {
            return Err(Error::Domain(format!("bulk law puts no mass below threshold {threshold}")));
        }
        Ok(Self {
            threshold,
            phi_u,
            bulk,
            tail,
            ln_bulk_norm,
            ln_below: (-phi_u).ln_1p(),
            ln_above: phi_u.ln(),
        })
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// Fraction of the fitting sample strictly above the threshold.
    pub fn phi_u(&self) -> T {
        self.phi_u
    }

    pub fn bulk(&self) -> &LognormalParams<T> {
        &self.bulk
    }

    pub fn tail(&self) -> &GpdParams<T> {
        &self.tail
    }

    /// CDF that rejects non-positive arguments.
    pub fn cdf_checked(&self, x: T) -> Result<T> {
        if !(x > T::zero()) {
            return Err(Error::Domain(format!("mixture CDF needs x > 0, got {x}")));
        }
        Ok(self.cdf(x))
    }

    /// Document `{u, phi_u, bulk: {mu, sigma_log}, tail: {sigma, xi}}`.
    pub fn to_json_value(&self) -> Value {
        json!({
            "u": sig17(self.threshold),
            "phi_u": sig17(self.phi_u),
            "bulk": { "mu": sig17(self.bulk.mu), "sigma_log": sig17(self.bulk.sigma_log) },
            "tail": { "sigma": sig17(self.tail.scale), "xi": sig17(self.tail.shape) },
        })
    }

    /// Serializes with every float written to 17 significant digits.
    pub fn to_json(&self) -> String {
        render_sig17(&self.to_json_value())
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let num = |path: &[&str]| -> Result<T> {
            let mut cur = v;
            for p in path {
                cur = cur
                    .get(p)
                    .ok_or_else(|| Error::InvalidInput(format!("model JSON missing `{}`", path.join("."))))?;
            }
            let x = cur
                .as_f64()
                .ok_or_else(|| Error::InvalidInput(format!("model JSON field `{}` is not a number", path.join("."))))?;
            Ok(T::lit(x))
        };
        let u = num(&["u"])?;
        Self::new(
            u,
            num(&["phi_u"])?,
            LognormalParams::new(num(&["bulk", "mu"])?, num(&["bulk", "sigma_log"])?)?,
            GpdParams::new(u, num(&["tail", "sigma"])?, num(&["tail", "xi"])?)?,
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_value(&serde_json::from_str(s)?)
    }
}

impl<T: Scalar> Continuous<T> for MixtureModel<T> {
    fn pdf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        if x <= self.threshold {
            (self.ln_below + self.bulk.ln_pdf(x) - self.ln_bulk_norm).exp()
        } else {
            self.phi_u * self.tail.pdf(x)
        }
    }

    fn ln_pdf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::neg_infinity();
        }
        if x <= self.threshold {
            self.ln_below + self.bulk.ln_pdf(x) - self.ln_bulk_norm
        } else {
            self.ln_above + self.tail.ln_pdf(x)
        }
    }

    fn cdf(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        if x <= self.threshold {
            (T::one() - self.phi_u) * (self.bulk.ln_cdf(x) - self.ln_bulk_norm).exp()
        } else {
            T::one() - self.phi_u + self.phi_u * self.tail.cdf(x)
        }
    }

    fn quantile(&self, q: T) -> Result<T> {
        if !(q >= T::zero() && q < T::one()) {
            return Err(Error::Domain(format!("mixture quantile needs 0 <= q < 1, got {q}")));
        }
        let split = T::one() - self.phi_u;
        if q == split {
            return Ok(self.threshold);
        }
        if q < split {
            let target = q / split * self.bulk.cdf(self.threshold);
            Ok(self.bulk.quantile(target)?.min(self.threshold))
        } else {
            self.tail.quantile(((q - split) / self.phi_u).min(T::one() - T::epsilon()))
        }
    }
}

/// Sorted sample with log prefix sums, so fits at many thresholds share one pass.
#[derive(Debug, Clone)]
pub struct MixtureFitter<T> {
    sorted: Vec<T>,
    log_prefix: Vec<T>,
    log_sq_prefix: Vec<T>,
    bulk_fit: BulkFit,
}

impl<T: Scalar> MixtureFitter<T> {
    pub fn new(values: &[T]) -> Self {
        Self::from_sorted(sorted(values))
    }

    /// `values` must already be ascending.
    pub fn from_sorted(sorted: Vec<T>) -> Self {
        let mut log_prefix = Vec::with_capacity(sorted.len() + 1);
        let mut log_sq_prefix = Vec::with_capacity(sorted.len() + 1);
        let (mut s1, mut s2) = (T::zero(), T::zero());
        log_prefix.push(s1);
        log_sq_prefix.push(s2);
        for &v in &sorted {
            let l = v.ln();
            s1 = s1 + l;
            s2 = s2 + l * l;
            log_prefix.push(s1);
            log_sq_prefix.push(s2);
        }
        Self { sorted, log_prefix, log_sq_prefix, bulk_fit: BulkFit::default() }
    }

    pub fn with_bulk_fit(mut self, bulk_fit: BulkFit) -> Self {
        self.bulk_fit = bulk_fit;
        self
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted_values(&self) -> &[T] {
        &self.sorted
    }

    /// Number of observations strictly above `u`.
    pub fn exceedances(&self, u: T) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&v| v <= u)
    }

    pub fn fit(&self, u: T) -> Result<MixtureModel<T>> {
        let n = self.sorted.len();
        let below = self.sorted.partition_point(|&v| v <= u);
        let above = n - below;
        if above < MIN_PER_SIDE {
            return Err(Error::fit(format!(
                "threshold {u} leaves {above} exceedances; at least {MIN_PER_SIDE} required"
            )));
        }
        if below < MIN_PER_SIDE {
            return Err(Error::fit(format!(
                "threshold {u} leaves {below} bulk points; at least {MIN_PER_SIDE} required"
            )));
        }
        let moments = LogMoments { n: below, sum: self.log_prefix[below], sum_sq: self.log_sq_prefix[below] };
        let trunc = match self.bulk_fit {
            BulkFit::Truncated => u,
            BulkFit::Naive => T::infinity(),
        };
        let bulk = fit_lognormal_from_moments(&moments, trunc)
            .map_err(|e| Error::fit(format!("bulk fit at threshold {u}: {e}")))?
            .params;
        let excesses: Vec<T> = self.sorted[below..].iter().map(|&v| v - u).collect();
        let tail = fit_gpd_mle(u, &excesses)
            .map_err(|e| Error::fit(format!("tail fit at threshold {u}: {e}")))?
            .params;
        let phi_u = T::from_usize_lossy(above) / T::from_usize_lossy(n);
        MixtureModel::new(u, phi_u, bulk, tail)
    }
}

/// Fits the spliced model at threshold `u`; `phi_u` is the exact exceedance fraction.
pub fn fit_mixture<T: Scalar>(data: &LossSample<T>, u: T) -> Result<MixtureModel<T>> {
    MixtureFitter::new(data.values()).fit(u)
}

/// Independent per-group spliced models keyed by group label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedMixture<T> {
    pub models: BTreeMap<String, MixtureModel<T>>,
}

impl<T: Scalar> GroupedMixture<T> {
    pub fn get(&self, group: &str) -> Option<&MixtureModel<T>> {
        self.models.get(group)
    }

    pub fn to_json(&self) -> String {
        let obj: serde_json::Map<String, Value> =
            self.models.iter().map(|(k, m)| (k.clone(), m.to_json_value())).collect();
        render_sig17(&Value::Object(obj))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidInput("grouped model JSON must be an object".into()))?;
        let models = obj
            .iter()
            .map(|(k, m)| Ok((k.clone(), MixtureModel::from_json_value(m).map_err(|e| e.in_group(k))?)))
            .collect::<Result<_>>()?;
        Ok(Self { models })
    }
}

/// Fits one model per group label at that group's threshold.
pub fn fit_grouped<T: Scalar>(data: &LossSample<T>, u_per_group: &BTreeMap<String, T>) -> Result<GroupedMixture<T>> {
    let groups: Vec<(String, LossSample<T>)> = data.groups().into_iter().collect();
    let fitted: Vec<Result<(String, MixtureModel<T>)>> = groups
        .par_iter()
        .map(|(label, sample)| {
            let u = u_per_group
                .get(label)
                .ok_or_else(|| Error::InvalidInput(format!("no threshold supplied for group `{label}`")))?;
            let m = fit_mixture(sample, *u).map_err(|e| e.in_group(label))?;
            Ok((label.clone(), m))
        })
        .collect();
    let models = fitted.into_iter().collect::<Result<BTreeMap<_, _>>>()?;
    Ok(GroupedMixture { models })
}

fn sig17<T: Scalar>(x: T) -> Value {
    json!(x.as_f64())
}

/// Renders JSON with every non-integer number written to 17 significant digits.
pub fn render_sig17(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            out.push_str(&format!("{x:.16e}"));
        }
        Value::Array(items) if !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}
