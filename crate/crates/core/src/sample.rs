//! Loss samples, optionally tagged with a categorical group label.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Positive, finite losses in input order, with optional per-observation group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSample<T> {
    values: Vec<T>,
    labels: Option<Vec<String>>,
}

impl<T: Scalar> LossSample<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("loss #{i} = {v} is not a positive finite value")));
        }
        Ok(Self { values, labels: None })
    }

    pub fn with_labels(values: Vec<T>, labels: Vec<String>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} losses but {} group labels",
                values.len(),
                labels.len()
            )));
        }
        let mut s = Self::new(values)?;
        s.labels = Some(labels);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Ascending copy of the values.
    pub fn sorted(&self) -> Vec<T> {
        sorted(&self.values)
    }

    pub fn min(&self) -> Option<T> {
        self.values.iter().copied().reduce(T::min)
    }

    pub fn max(&self) -> Option<T> {
        self.values.iter().copied().reduce(T::max)
    }

    /// Splits by label, keyed in sorted label order. Unlabeled samples form the single group `"all"`.
    pub fn groups(&self) -> BTreeMap<String, LossSample<T>> {
        let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
        match &self.labels {
            None => {
                out.insert("all".to_string(), self.values.clone());
            }
            Some(labels) => {
                for (v, l) in self.values.iter().zip(labels) {
                    out.entry(l.clone()).or_default().push(*v);
                }
            }
        }
        out.into_iter()
            .map(|(k, v)| (k, LossSample { values: v, labels: None }))
            .collect()
    }
}

pub(crate) fn sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive() {
        assert!(LossSample::new(vec![1.0, 0.0]).is_err());
        assert!(LossSample::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn groups_sorted_by_label() {
        let s = LossSample::with_labels(vec![1.0, 2.0, 3.0], vec!["b".into(), "a".into(), "b".into()]).unwrap();
        let g = s.groups();
        assert_eq!(g.keys().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(g["b"].values(), &[1.0, 3.0]);
    }
}
