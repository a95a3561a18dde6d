use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FrameError;
use crate::stats::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Poststratification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumWeight {
    pub stratum: String,
    pub frame_count: u64,
    pub respondents: u64,
    /// `frame_count / respondents`; `None` for uncovered strata.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub method: WeightMethod,
    pub strata: Vec<StratumWeight>,
    /// Frame strata without respondents. Their population is excluded from
    /// the calibration total.
    pub uncovered: Vec<String>,
}

impl WeightSet {
    pub fn weight_for(&self, stratum: &str) -> Option<f64> {
        self.strata
            .iter()
            .find(|s| s.stratum == stratum)
            .and_then(|s| s.weight)
    }

    /// Sum of all respondent weights.
    pub fn total(&self) -> f64 {
        compensated_sum(
            self.strata
                .iter()
                .filter_map(|s| s.weight.map(|w| w * s.respondents as f64)),
        )
    }

    /// Frame population of strata that have respondents.
    pub fn covered_population(&self) -> u64 {
        self.strata
            .iter()
            .filter(|s| s.weight.is_some())
            .map(|s| s.frame_count)
            .sum()
    }

    /// Weights add up to the covered frame population within `1e-9` relative.
    pub fn is_calibrated(&self) -> bool {
        let target = self.covered_population() as f64;
        (self.total() - target).abs() <= 1e-9 * target.max(1.0)
    }

    /// Expands stratum weights to one weight per respondent.
    pub fn unit_weights<S: AsRef<str>>(
        &self,
        respondent_strata: &[S],
    ) -> Result<Vec<f64>, FrameError> {
        respondent_strata
            .iter()
            .map(|s| {
                self.weight_for(s.as_ref())
                    .ok_or_else(|| FrameError::FrameMismatch(s.as_ref().to_string()))
            })
            .collect()
    }
}

/// Post-stratification weights `N_h / n_h`.
pub fn poststrat_weights(
    respondents: &BTreeMap<String, u64>,
    frame: &BTreeMap<String, u64>,
) -> Result<WeightSet, FrameError> {
    for (stratum, n) in respondents {
        if *n > 0 && frame.get(stratum).copied().unwrap_or(0) == 0 {
            return Err(FrameError::FrameMismatch(stratum.clone()));
        }
    }
    let mut strata = Vec::with_capacity(frame.len());
    let mut uncovered = Vec::new();
    for (stratum, &big_n) in frame {
        let n = respondents.get(stratum).copied().unwrap_or(0);
        let weight = if n == 0 {
            uncovered.push(stratum.clone());
            None
        } else {
            Some(big_n as f64 / n as f64)
        };
        strata.push(StratumWeight {
            stratum: stratum.clone(),
            frame_count: big_n,
            respondents: n,
            weight,
        });
    }
    Ok(WeightSet {
        method: WeightMethod::Poststratification,
        strata,
        uncovered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Linearised standard error; `None` with a single unit.
    pub se: Option<f64>,
    pub n: usize,
    pub weight_sum: f64,
}

/// Weighted mean `Σ w·y / Σ w` with its linearised standard error.
pub fn weighted_estimate(y: &[f64], w: &[f64]) -> Result<Estimate, FrameError> {
    if y.is_empty() {
        return Err(FrameError::Estimation("no observations".into()));
    }
    if y.len() != w.len() {
        return Err(FrameError::Estimation(format!(
            "{} observations but {} weights",
            y.len(),
            w.len()
        )));
    }
    if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(FrameError::Estimation(format!(
            "weight {bad} is not positive"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FrameError::Estimation("non-finite observation".into()));
    }
    let weight_sum = compensated_sum(w.iter().copied());
    let value = compensated_sum(y.iter().zip(w).map(|(y, w)| y * w)) / weight_sum;
    let n = y.len();
    let se = (n > 1).then(|| {
        let ss = compensated_sum(y.iter().zip(w).map(|(y, w)| {
            let z = w * (y - value) / weight_sum;
            z * z
        }));
        (ss * n as f64 / (n - 1) as f64).sqrt()
    });
    Ok(Estimate {
        value,
        se,
        n,
        weight_sum,
    })
}
