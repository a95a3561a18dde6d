use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DerivedRecord, TransformError};
use crate::types::Pseudonym;

/// At least `min_records` records in every `period_ms` window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensenessRequirement {
    pub period_ms: i64,
    pub min_records: usize,
}

/// Half-open `[start_ms, end_ms)` stretch of consecutive under-filled periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapInterval {
    pub start_ms: i64,
    pub end_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesDenseness {
    pub owner: Pseudonym,
    pub variable: String,
    pub periods_checked: usize,
    pub gaps: Vec<GapInterval>,
}

impl SeriesDenseness {
    pub fn passed(&self) -> bool {
        self.gaps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensenessReport {
    pub requirement: DensenessRequirement,
    pub series: Vec<SeriesDenseness>,
}

impl DensenessReport {
    /// True when every (owner, variable) series passes; an empty report fails.
    pub fn passed(&self) -> bool {
        !self.series.is_empty() && self.series.iter().all(SeriesDenseness::passed)
    }

    pub fn owner_passed(&self, owner: &Pseudonym) -> bool {
        self.series
            .iter()
            .filter(|s| &s.owner == owner)
            .all(SeriesDenseness::passed)
    }
}

/// Checks each (owner, variable) series between its first and last record.
///
/// Periods are aligned to multiples of `period_ms` since the epoch; runs of
/// periods holding fewer than `min_records` records become one gap each.
pub fn denseness_check(
    records: &[DerivedRecord],
    requirement: DensenessRequirement,
) -> Result<DensenessReport, TransformError> {
    if requirement.period_ms <= 0 || requirement.min_records == 0 {
        return Err(TransformError::InvalidConfig(format!(
            "denseness requirement must be positive, got {} records per {} ms",
            requirement.min_records, requirement.period_ms
        )));
    }
    let p = requirement.period_ms;
    let mut per_series: BTreeMap<(Pseudonym, String), BTreeMap<i64, usize>> = BTreeMap::new();
    for r in records {
        *per_series
            .entry((r.owner.clone(), r.variable.clone()))
            .or_default()
            .entry(r.at.epoch_ms.div_euclid(p))
            .or_default() += 1;
    }

    let mut series = Vec::with_capacity(per_series.len());
    for ((owner, variable), counts) in per_series {
        let first = *counts.keys().next().expect("series has records");
        let last = *counts.keys().next_back().expect("series has records");
        let mut gaps = Vec::new();
        let mut open: Option<i64> = None;
        for period in first..=last {
            let short = counts.get(&period).copied().unwrap_or(0) < requirement.min_records;
            match (short, open) {
                (true, None) => open = Some(period),
                (false, Some(s)) => {
                    gaps.push(GapInterval {
                        start_ms: s * p,
                        end_ms: period * p,
                    });
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            gaps.push(GapInterval {
                start_ms: s * p,
                end_ms: (last + 1) * p,
            });
        }
        series.push(SeriesDenseness {
            owner,
            variable,
            periods_checked: (last - first + 1) as usize,
            gaps,
        });
    }
    Ok(DensenessReport {
        requirement,
        series,
    })
}
