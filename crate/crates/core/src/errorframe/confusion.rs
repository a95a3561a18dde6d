use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::FrameError;

const COLUMN_SUM_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-12;

/// Classifier error rates. Entry `(i, j)` is the probability of predicting
/// class `i` when the true class is `j`, so every column sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConfusionMatrix {
    k: usize,
    rates: Vec<f64>,
}

impl ConfusionMatrix {
    /// Builds a matrix from its rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FrameError> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(FrameError::InvalidMatrix(
                "matrix must be square and non-empty".into(),
            ));
        }
        let rates: Vec<f64> = rows.iter().flatten().copied().collect();
        if let Some(x) = rates
            .iter()
            .find(|x| !(x.is_finite() && (0.0..=1.0).contains(*x)))
        {
            return Err(FrameError::InvalidMatrix(format!(
                "rate {x} outside [0, 1]"
            )));
        }
        let cm = ConfusionMatrix { k, rates };
        for j in 0..k {
            let s: f64 = (0..k).map(|i| cm.get(i, j)).sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(FrameError::InvalidMatrix(format!(
                    "column {j} sums to {s}, not 1"
                )));
            }
        }
        Ok(cm)
    }

    /// Two-class matrix with classes ordered (positive, negative).
    pub fn binary(sensitivity: f64, specificity: f64) -> Result<Self, FrameError> {
        Self::from_rows(&[
            vec![sensitivity, 1.0 - specificity],
            vec![1.0 - sensitivity, specificity],
        ])
    }

    pub fn identity(k: usize) -> Self {
        let mut rates = vec![0.0; k * k];
        for i in 0..k {
            rates[i * k + i] = 1.0;
        }
        ConfusionMatrix { k, rates }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, predicted: usize, truth: usize) -> f64 {
        self.rates[predicted * self.k + truth]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn sensitivity(&self) -> Option<f64> {
        (self.k == 2).then(|| self.get(0, 0))
    }

    pub fn specificity(&self) -> Option<f64> {
        (self.k == 2).then(|| self.get(1, 1))
    }

    /// `self · v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Row-major inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Vec<f64>, FrameError> {
        let k = self.k;
        let mut a = self.rates.clone();
        let mut inv = ConfusionMatrix::identity(k).rates;
        for col in 0..k {
            let pivot_row = (col..k)
                .max_by(|&r1, &r2| a[r1 * k + col].abs().total_cmp(&a[r2 * k + col].abs()))
                .unwrap_or(col);
            if a[pivot_row * k + col].abs() < PIVOT_TOL {
                return Err(FrameError::Singular);
            }
            if pivot_row != col {
                for c in 0..k {
                    a.swap(pivot_row * k + c, col * k + c);
                    inv.swap(pivot_row * k + c, col * k + c);
                }
            }
            let p = a[col * k + col];
            for c in 0..k {
                a[col * k + c] /= p;
                inv[col * k + c] /= p;
            }
            for r in 0..k {
                if r == col {
                    continue;
                }
                let f = a[r * k + col];
                if f == 0.0 {
                    continue;
                }
                for c in 0..k {
                    a[r * k + c] -= f * a[col * k + c];
                    inv[r * k + c] -= f * inv[col * k + c];
                }
            }
        }
        Ok(inv)
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConfusionMatrix {
    type Error = FrameError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        ConfusionMatrix::from_rows(&rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<f64>> {
    fn from(cm: ConfusionMatrix) -> Self {
        cm.rows()
    }
}

/// Per-class counts; expected (fractional) counts are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountVector(Vec<f64>);

impl CountVector {
    pub fn new(counts: Vec<f64>) -> Result<Self, FrameError> {
        if counts.is_empty() {
            return Err(FrameError::InvalidCounts("empty count vector".into()));
        }
        if let Some(x) = counts.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(FrameError::InvalidCounts(format!(
                "count {x} is not a finite non-negative number"
            )));
        }
        Ok(CountVector(counts))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Counts after inverting the misclassification process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    /// May hold negative components; see `infeasible`.
    pub counts: Vec<f64>,
    /// Classes whose corrected count came out negative, signalling rates that
    /// are inconsistent with the observed table.
    pub infeasible: Vec<usize>,
}

impl Correction {
    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_empty()
    }
}

/// Corrects predicted counts by the inverse of the confusion matrix.
///
/// Negative results are reported, not truncated. Components above
/// `-1e-9 · max(1, total)` count as rounding noise around zero.
pub fn correct_counts(
    observed: &CountVector,
    cm: &ConfusionMatrix,
) -> Result<Correction, FrameError> {
    if observed.len() != cm.k() {
        return Err(FrameError::DimensionMismatch {
            expected: cm.k(),
            found: observed.len(),
        });
    }
    let inv = cm.inverse()?;
    let k = cm.k();
    let v = observed.as_slice();
    let counts: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| inv[i * k + j] * v[j]).sum())
        .collect();
    let noise = 1e-9 * observed.total().max(1.0);
    let infeasible = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c < -noise)
        .map(|(i, _)| i)
        .collect();
    Ok(Correction { counts, infeasible })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    Expectation,
    /// One multinomial draw per true class; true counts are rounded to integers.
    Sample {
        seed: u64,
    },
}

/// Forward model: how true counts turn into predicted counts.
pub fn misclassify_simulate(
    truth: &CountVector,
    cm: &ConfusionMatrix,
    mode: SimulationMode,
) -> Result<Vec<f64>, FrameError> {
    if truth.len() != cm.k() {
        return Err(FrameError::DimensionMismatch {
            expected: cm.k(),
            found: truth.len(),
        });
    }
    match mode {
        SimulationMode::Expectation => Ok(cm.apply(truth.as_slice())),
        SimulationMode::Sample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = cm.k();
            let mut out = vec![0u64; k];
            for (j, &n) in truth.as_slice().iter().enumerate() {
                let mut remaining = n.round() as u64;
                let mut mass_left = 1.0;
                for (i, slot) in out.iter_mut().enumerate().take(k - 1) {
                    if remaining == 0 {
                        break;
                    }
                    let p = if mass_left > 0.0 {
                        (cm.get(i, j) / mass_left).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let x = Binomial::new(remaining, p)
                        .map_err(|e| FrameError::InvalidMatrix(e.to_string()))?
                        .sample(&mut rng);
                    *slot += x;
                    remaining -= x;
                    mass_left -= cm.get(i, j);
                }
                out[k - 1] += remaining;
            }
            Ok(out.into_iter().map(|c| c as f64).collect())
        }
    }
}
