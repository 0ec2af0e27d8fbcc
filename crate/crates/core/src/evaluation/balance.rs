use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights applied to the ascending-sorted scores of the five variants.
pub const BALANCE_WEIGHTS: [f64; 5] = [10.0, 25.0, 50.0, 25.0, 10.0];

/// Sorts five scores and returns them with their weighted mean.
pub fn weighted_mean(values: &[f64]) -> Result<([f64; 5], f64)> {
    let mut sorted: [f64; 5] = values.try_into().map_err(|_| Error::WrongCount {
        expected: 5,
        got: values.len(),
    })?;
    sorted.sort_by(f64::total_cmp);
    let total: f64 = BALANCE_WEIGHTS.iter().sum();
    let w_avg = sorted.iter().zip(BALANCE_WEIGHTS).map(|(x, w)| x * w).sum::<f64>() / total;
    Ok((sorted, w_avg))
}

/// Squared distance of one score from the weighted mean.
pub fn balance_error(w_avg: f64, x: f64) -> f64 {
    (w_avg - x) * (w_avg - x)
}

/// One metric family (e.g. content PSNR) across the five variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSet {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    pub sorted: [f64; 5],
    pub w_avg: f64,
    /// Per-variant error, in `labels` order.
    pub errors: Vec<f64>,
}

impl AblationSet {
    pub fn new(entries: &[(String, f64)]) -> Result<Self> {
        let values: Vec<f64> = entries.iter().map(|(_, v)| *v).collect();
        let (sorted, w_avg) = weighted_mean(&values)?;
        Ok(Self {
            labels: entries.iter().map(|(l, _)| l.clone()).collect(),
            errors: values.iter().map(|&x| balance_error(w_avg, x)).collect(),
            values,
            sorted,
            w_avg,
        })
    }

    pub fn error_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.errors[i])
    }
}

/// Content and style sets of one metric plus their summed per-variant error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    pub content: AblationSet,
    pub style: AblationSet,
    pub total: Vec<f64>,
}

impl BalanceTable {
    pub fn new(content: &[(String, f64)], style: &[(String, f64)]) -> Result<Self> {
        let content = AblationSet::new(content)?;
        let style = AblationSet::new(style)?;
        if content.labels != style.labels {
            return Err(Error::Config("content and style sets list different variants".into()));
        }
        let total = content.errors.iter().zip(&style.errors).map(|(a, b)| a + b).collect();
        Ok(Self { content, style, total })
    }

    pub fn total_of(&self, label: &str) -> Option<f64> {
        self.content.labels.iter().position(|l| l == label).map(|i| self.total[i])
    }
}
