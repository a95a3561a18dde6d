use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FrameError;
use crate::stats::{compensated_sum, mean, sample_variance};

/// Two measurements of the same construct for the same units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum Measurements {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Measurements {
    pub fn len(&self) -> usize {
        match self {
            Measurements::Numeric(v) => v.len(),
            Measurements::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericAgreement {
    pub n: usize,
    /// Pearson correlation; `None` when either side has zero variance.
    pub correlation: Option<f64>,
    /// Mean of `a - b`.
    pub mean_difference: f64,
    pub sd_difference: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoricalAgreement {
    pub n: usize,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// Cohen's kappa; `None` when chance agreement is already perfect.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    pub correlation: Option<f64>,
    pub kappa: Option<f64>,
    pub observed_agreement: f64,
    pub mean_difference: Option<f64>,
    pub limits_of_agreement: Option<(f64, f64)>,
}

fn check_lengths(a: usize, b: usize) -> Result<(), FrameError> {
    if a != b {
        return Err(FrameError::Agreement(format!(
            "length mismatch: {a} vs {b}"
        )));
    }
    if a < 2 {
        return Err(FrameError::Agreement(format!(
            "need at least 2 paired values, got {a}"
        )));
    }
    Ok(())
}

/// Pearson correlation plus mean difference with 95% limits of agreement.
pub fn numeric_agreement(a: &[f64], b: &[f64]) -> Result<NumericAgreement, FrameError> {
    check_lengths(a.len(), b.len())?;
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(FrameError::Agreement("non-finite value".into()));
    }
    let (ma, mb) = (mean(a).unwrap_or(0.0), mean(b).unwrap_or(0.0));
    let sxy = compensated_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)));
    let sxx = compensated_sum(a.iter().map(|x| (x - ma) * (x - ma)));
    let syy = compensated_sum(b.iter().map(|y| (y - mb) * (y - mb)));
    let correlation = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_difference = mean(&diffs).unwrap_or(0.0);
    let sd_difference = sample_variance(&diffs).unwrap_or(0.0).sqrt();
    Ok(NumericAgreement {
        n: a.len(),
        correlation,
        mean_difference,
        sd_difference,
        lower_limit: mean_difference - 1.96 * sd_difference,
        upper_limit: mean_difference + 1.96 * sd_difference,
    })
}

/// Cohen's kappa over arbitrary ordered labels.
pub fn categorical_agreement<T: Ord>(a: &[T], b: &[T]) -> Result<CategoricalAgreement, FrameError> {
    check_lengths(a.len(), b.len())?;
    let n = a.len() as f64;
    let mut margins: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        margins.entry(x).or_default().0 += 1;
        margins.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let observed = agree as f64 / n;
    let expected = compensated_sum(
        margins
            .values()
            .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n)),
    );
    let kappa = (expected < 1.0).then(|| (observed - expected) / (1.0 - expected));
    Ok(CategoricalAgreement {
        n: a.len(),
        observed_agreement: observed,
        expected_agreement: expected,
        kappa,
    })
}

/// Agreement between two measurements of the same kind.
///
/// Numeric values also get a kappa with each distinct value as its own
/// category, which is what coded scales want.
pub fn agreement_stats(a: &Measurements, b: &Measurements) -> Result<AgreementStats, FrameError> {
    match (a, b) {
        (Measurements::Numeric(x), Measurements::Numeric(y)) => {
            let num = numeric_agreement(x, y)?;
            let codes = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            let cat = categorical_agreement(&codes(x), &codes(y))?;
            Ok(AgreementStats {
                n: num.n,
                correlation: num.correlation,
                kappa: cat.kappa,
                observed_agreement: cat.observed_agreement,
                mean_difference: Some(num.mean_difference),
                limits_of_agreement: Some((num.lower_limit, num.upper_limit)),
            })
        }
        (Measurements::Categorical(x), Measurements::Categorical(y)) => {
            let cat = categorical_agreement(x, y)?;
            Ok(AgreementStats {
                n: cat.n,
                correlation: None,
                kappa: cat.kappa,
                observed_agreement: cat.observed_agreement,
                mean_difference: None,
                limits_of_agreement: None,
            })
        }
        _ => Err(FrameError::Agreement(
            "cannot compare numeric with categorical values".into(),
        )),
    }
}
