//! Researcher-side linkage of donated records on person and time level.
//!
//! [`link`] puts every record into a `(pseudonym, time bin)` row. A record
//! lying just past a bin edge joins the earlier bin when another source has a
//! record for the same person within `tolerance_ms` before it, so that events
//! stamped a few seconds apart by different platforms still meet. [`validate`]
//! then runs the plausibility guards (study window, MAD outliers, duplicate
//! keys) without touching the data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{compensated_sum, mad, median};
use crate::timestamp::{render_iso, Timestamp};
use crate::transform::{DerivedRecord, Value};
use crate::types::{ProviderId, Pseudonym};

pub const MAD_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub tolerance_ms: i64,
    pub bin_ms: i64,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    /// Summarise several records of one variable in a bin (numeric mean,
    /// modal label) instead of treating differing values as collisions.
    #[serde(default)]
    pub aggregate: bool,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.bin_ms <= 0 {
            return Err(LinkError::InvalidSpec(format!(
                "bin width must be positive, got {}",
                self.bin_ms
            )));
        }
        if self.tolerance_ms < 0 || self.tolerance_ms > self.bin_ms {
            return Err(LinkError::InvalidSpec(format!(
                "tolerance {} ms must lie in [0, bin width {} ms]",
                self.tolerance_ms, self.bin_ms
            )));
        }
        if self.window_start >= self.window_end {
            return Err(LinkError::InvalidSpec(
                "study window start must precede its end".into(),
            ));
        }
        Ok(())
    }

    pub fn bin_of(&self, epoch_ms: i64) -> i64 {
        epoch_ms.div_euclid(self.bin_ms) * self.bin_ms
    }

    pub fn in_window(&self, at: &Timestamp) -> bool {
        *at >= self.window_start && *at <= self.window_end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCell {
    pub owner: Pseudonym,
    pub bin_start: i64,
    pub variable: String,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("invalid link spec: {0}")]
    InvalidSpec(String),
    #[error("source name `{0}` is used twice")]
    DuplicateSource(String),
    #[error("{} colliding cell(s), first: {} at {} / {} from {:?}",
        .0.len(), .0[0].owner, render_iso(.0[0].bin_start), .0[0].variable, .0[0].sources)]
    Duplicate(Vec<DuplicateCell>),
    #[error("csv: {0}")]
    Csv(String),
}

/// One input record set, typically one donation package or a survey file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSource {
    pub name: String,
    pub records: Vec<DerivedRecord>,
}

impl RecordSource {
    pub fn new(name: impl Into<String>, records: Vec<DerivedRecord>) -> Self {
        RecordSource {
            name: name.into(),
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub source: String,
    pub provider: ProviderId,
    pub transformer_id: String,
    pub transformer_version: String,
    /// Mean confidence of the contributing records.
    pub confidence: f64,
    pub records: usize,
    pub first_at: Timestamp,
    pub last_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Value,
    pub provenance: CellProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedRow {
    pub owner: Pseudonym,
    pub bin_start: i64,
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkedDataset {
    pub variables: Vec<String>,
    pub rows: Vec<LinkedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatch {
    pub a: String,
    pub b: String,
    /// Rows holding cells from both sources.
    pub both: usize,
    /// Rows holding a cell from at least one of them.
    pub either: usize,
}

impl PairMatch {
    pub fn rate(&self) -> Option<f64> {
        (self.either > 0).then(|| self.both as f64 / self.either as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkReport {
    pub sources: Vec<(String, usize)>,
    pub rows: usize,
    pub pairs: Vec<PairMatch>,
    /// Records placed in the earlier bin by the tolerance rule.
    pub moved_across_edge: usize,
    /// Cells built from more than one record.
    pub aggregated_cells: usize,
}

impl LinkReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairMatch> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    pub fn render(&self) -> String {
        let mut out = format!("linked rows: {}\n", self.rows);
        for (name, n) in &self.sources {
            let _ = writeln!(out, "source {name}: {n} records");
        }
        for p in &self.pairs {
            let rate = p
                .rate()
                .map_or("n/a".to_string(), |r| format!("{:.1}%", r * 100.0));
            let _ = writeln!(
                out,
                "match {} ~ {}: {}/{} rows ({rate})",
                p.a, p.b, p.both, p.either
            );
        }
        let _ = writeln!(out, "moved across bin edge: {}", self.moved_across_edge);
        let _ = writeln!(out, "aggregated cells: {}", self.aggregated_cells);
        out
    }
}

struct Placed<'a> {
    source: usize,
    bin: i64,
    record: &'a DerivedRecord,
}

/// Links all sources on pseudonym and time bin.
pub fn link(
    sources: &[RecordSource],
    spec: &LinkSpec,
) -> Result<(LinkedDataset, LinkReport), LinkError> {
    spec.validate()?;
    let mut names = BTreeSet::new();
    for s in sources {
        if !names.insert(s.name.as_str()) {
            return Err(LinkError::DuplicateSource(s.name.clone()));
        }
    }

    let mut by_owner: BTreeMap<&Pseudonym, Vec<(usize, &DerivedRecord)>> = BTreeMap::new();
    for (si, s) in sources.iter().enumerate() {
        for r in &s.records {
            by_owner.entry(&r.owner).or_default().push((si, r));
        }
    }
    let parts: Vec<(Vec<LinkedRow>, Vec<DuplicateCell>, usize, usize)> = by_owner
        .into_par_iter()
        .map(|(owner, recs)| link_owner(owner, recs, sources, spec))
        .collect();

    let mut rows = Vec::new();
    let mut duplicates = Vec::new();
    let mut moved = 0;
    let mut aggregated = 0;
    for (r, d, m, a) in parts {
        rows.extend(r);
        duplicates.extend(d);
        moved += m;
        aggregated += a;
    }
    if !duplicates.is_empty() {
        return Err(LinkError::Duplicate(duplicates));
    }

    let variables: Vec<String> = rows
        .iter()
        .flat_map(|r| r.cells.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut pairs = Vec::new();
    for i in 0..sources.len() {
        for j in i + 1..sources.len() {
            let (a, b) = (&sources[i].name, &sources[j].name);
            let mut both = 0;
            let mut either = 0;
            for row in &rows {
                let has = |n: &str| row.cells.values().any(|c| c.provenance.source == n);
                match (has(a), has(b)) {
                    (true, true) => {
                        both += 1;
                        either += 1;
                    }
                    (true, false) | (false, true) => either += 1,
                    _ => {}
                }
            }
            pairs.push(PairMatch {
                a: a.clone(),
                b: b.clone(),
                both,
                either,
            });
        }
    }
    let report = LinkReport {
        sources: sources
            .iter()
            .map(|s| (s.name.clone(), s.records.len()))
            .collect(),
        rows: rows.len(),
        pairs,
        moved_across_edge: moved,
        aggregated_cells: aggregated,
    };
    Ok((LinkedDataset { variables, rows }, report))
}

fn link_owner(
    owner: &Pseudonym,
    mut recs: Vec<(usize, &DerivedRecord)>,
    sources: &[RecordSource],
    spec: &LinkSpec,
) -> (Vec<LinkedRow>, Vec<DuplicateCell>, usize, usize) {
    recs.sort_by_key(|&(s, r)| (r.at.epoch_ms, s));
    let mut moved = 0;
    let placed: Vec<Placed> = recs
        .iter()
        .map(|&(source, record)| {
            let t = record.at.epoch_ms;
            let own = spec.bin_of(t);
            let lo = t.saturating_sub(spec.tolerance_ms).max(own - spec.bin_ms);
            // Partners from another source in [t - tolerance, bin start).
            let from = recs.partition_point(|&(_, r)| r.at.epoch_ms < lo);
            let partner = recs[from..]
                .iter()
                .take_while(|&&(_, r)| r.at.epoch_ms < own)
                .any(|&(s, _)| s != source);
            let bin = if partner {
                moved += 1;
                own - spec.bin_ms
            } else {
                own
            };
            Placed {
                source,
                bin,
                record,
            }
        })
        .collect();

    let mut groups: BTreeMap<(i64, &str), BTreeMap<usize, Vec<&DerivedRecord>>> = BTreeMap::new();
    for p in &placed {
        groups
            .entry((p.bin, p.record.variable.as_str()))
            .or_default()
            .entry(p.source)
            .or_default()
            .push(p.record);
    }

    let mut rows: BTreeMap<i64, LinkedRow> = BTreeMap::new();
    let mut duplicates = Vec::new();
    let mut aggregated = 0;
    for ((bin, variable), per_source) in groups {
        let colliding = |srcs: Vec<usize>| DuplicateCell {
            owner: owner.clone(),
            bin_start: bin,
            variable: variable.to_string(),
            sources: srcs.into_iter().map(|s| sources[s].name.clone()).collect(),
        };
        if per_source.len() > 1 {
            duplicates.push(colliding(per_source.keys().copied().collect()));
            continue;
        }
        let (source, group) = per_source.into_iter().next().expect("non-empty group");
        let value = if group.len() == 1 {
            group[0].value.clone()
        } else if spec.aggregate {
            aggregated += 1;
            summarize(&group)
        } else if group.iter().all(|r| r.value == group[0].value) {
            group[0].value.clone()
        } else {
            duplicates.push(colliding(vec![source]));
            continue;
        };
        let first = group[0];
        let provenance = CellProvenance {
            source: sources[source].name.clone(),
            provider: first.provenance.provider,
            transformer_id: first.provenance.transformer_id.clone(),
            transformer_version: first.provenance.transformer_version.clone(),
            confidence: compensated_sum(group.iter().map(|r| r.provenance.confidence))
                / group.len() as f64,
            records: group.len(),
            first_at: group.iter().map(|r| r.at).min().expect("non-empty group"),
            last_at: group.iter().map(|r| r.at).max().expect("non-empty group"),
        };
        rows.entry(bin)
            .or_insert_with(|| LinkedRow {
                owner: owner.clone(),
                bin_start: bin,
                cells: BTreeMap::new(),
            })
            .cells
            .insert(variable.to_string(), Cell { value, provenance });
    }
    (rows.into_values().collect(), duplicates, moved, aggregated)
}

/// Numeric mean when every value is numeric, otherwise the most frequent
/// label (ties go to the smallest label).
fn summarize(group: &[&DerivedRecord]) -> Value {
    let numbers: Option<Vec<f64>> = group.iter().map(|r| r.value.as_number()).collect();
    if let Some(xs) = numbers {
        return Value::Number(compensated_sum(xs.iter().copied()) / xs.len() as f64);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in group {
        *counts.entry(r.value.to_string()).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    let label = counts
        .into_iter()
        .find(|&(_, n)| n == best)
        .map(|(l, _)| l)
        .unwrap_or_default();
    Value::Label(label)
}

impl LinkedDataset {
    pub fn owners(&self) -> BTreeSet<&Pseudonym> {
        self.rows.iter().map(|r| &r.owner).collect()
    }

    pub fn row(&self, owner: &Pseudonym, bin_start: i64) -> Option<&LinkedRow> {
        self.rows
            .iter()
            .find(|r| &r.owner == owner && r.bin_start == bin_start)
    }

    /// Wide CSV: `pseudonym,bin_start_iso` then one column per variable,
    /// empty where a row has no cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LinkError> {
        let err = |e: csv::Error| LinkError::Csv(e.to_string());
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["pseudonym".to_string(), "bin_start_iso".to_string()];
        header.extend(self.variables.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for row in &self.rows {
            let mut fields = vec![row.owner.as_str().to_string(), render_iso(row.bin_start)];
            fields.extend(self.variables.iter().map(|v| {
                row.cells
                    .get(v)
                    .map(|c| c.value.to_string())
                    .unwrap_or_default()
            }));
            w.write_record(&fields).map_err(err)?;
        }
        w.flush().map_err(|e| LinkError::Csv(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfWindow {
    pub owner: Pseudonym,
    pub variable: String,
    pub source: String,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub variable: String,
    pub owner: Pseudonym,
    pub bin_start: i64,
    pub value: f64,
    /// `|value - median| / MAD` over the variable's cells.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub out_of_window: Vec<OutOfWindow>,
    pub outliers: Vec<Outlier>,
    pub duplicate_keys: usize,
    /// Variables whose MAD is zero, so the outlier rule was skipped.
    pub no_spread: Vec<String>,
}

impl ValidationReport {
    pub fn window_passed(&self) -> bool {
        self.out_of_window.is_empty()
    }

    pub fn outliers_passed(&self) -> bool {
        self.outliers.is_empty()
    }

    pub fn keys_passed(&self) -> bool {
        self.duplicate_keys == 0
    }

    pub fn is_clean(&self) -> bool {
        self.findings() == 0
    }

    pub fn findings(&self) -> usize {
        self.out_of_window.len() + self.outliers.len() + self.duplicate_keys
    }

    pub fn render(&self) -> String {
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "study window: {} ({} out of window)",
            verdict(self.window_passed()),
            self.out_of_window.len()
        );
        for o in &self.out_of_window {
            let _ = writeln!(
                out,
                "  {} {} {} from {}",
                o.owner,
                o.variable,
                o.at.to_iso(),
                o.source
            );
        }
        let _ = writeln!(
            out,
            "outliers (MAD score > {MAD_THRESHOLD}): {} ({} flagged)",
            verdict(self.outliers_passed()),
            self.outliers.len()
        );
        for o in &self.outliers {
            let _ = writeln!(
                out,
                "  {} {} {} value {} score {:.2}",
                o.variable,
                o.owner,
                render_iso(o.bin_start),
                o.value,
                o.score
            );
        }
        for v in &self.no_spread {
            let _ = writeln!(out, "  {v}: no spread, outlier rule skipped");
        }
        let _ = writeln!(
            out,
            "unique keys: {} ({} duplicate)",
            verdict(self.keys_passed()),
            self.duplicate_keys
        );
        out
    }
}

/// Plausibility guards on a linked dataset.
pub fn validate(ds: &LinkedDataset, spec: &LinkSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for row in &ds.rows {
        if !seen.insert((&row.owner, row.bin_start)) {
            report.duplicate_keys += 1;
        }
        for (variable, cell) in &row.cells {
            let p = &cell.provenance;
            for at in [p.first_at, p.last_at] {
                if !spec.in_window(&at) {
                    report.out_of_window.push(OutOfWindow {
                        owner: row.owner.clone(),
                        variable: variable.clone(),
                        source: p.source.clone(),
                        at,
                    });
                    break;
                }
            }
        }
    }

    let mut numeric: BTreeMap<&str, Vec<(&LinkedRow, f64)>> = BTreeMap::new();
    for row in &ds.rows {
        for (variable, cell) in &row.cells {
            if let Some(x) = cell.value.as_number() {
                numeric.entry(variable).or_default().push((row, x));
            }
        }
    }
    for (variable, cells) in numeric {
        let values: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let (Some(med), Some(spread)) = (median(&values), mad(&values)) else {
            continue;
        };
        if spread == 0.0 {
            report.no_spread.push(variable.to_string());
            continue;
        }
        for (row, x) in cells {
            let score = (x - med).abs() / spread;
            if score > MAD_THRESHOLD {
                report.outliers.push(Outlier {
                    variable: variable.to_string(),
                    owner: row.owner.clone(),
                    bin_start: row.bin_start,
                    value: x,
                    score,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Provenance;

    const HOUR: i64 = 3_600_000;

    fn rec(owner: &str, at: i64, variable: &str, value: Value) -> DerivedRecord {
        DerivedRecord {
            owner: Pseudonym::new(owner).unwrap(),
            at: Timestamp::from_epoch_ms(at),
            variable: variable.into(),
            value,
            provenance: Provenance {
                provider: ProviderId::GoogleTakeout,
                transformer_id: "t".into(),
                transformer_version: "1".into(),
                confidence: 1.0,
            },
        }
    }

    fn spec(tolerance_ms: i64) -> LinkSpec {
        LinkSpec {
            tolerance_ms,
            bin_ms: HOUR,
            window_start: Timestamp::from_epoch_ms(0),
            window_end: Timestamp::from_epoch_ms(1000 * HOUR),
            aggregate: false,
        }
    }

    fn yes() -> Value {
        Value::Label("true".into())
    }

    #[test]
    fn thirty_seconds_apart_inside_tolerance() {
        // Emotion right before the edge, location 30 s later in the next bin.
        let t = 10 * HOUR - 10_000;
        let a = RecordSource::new("affect", vec![rec("p1", t, "affect", Value::Number(0.5))]);
        let b = RecordSource::new("loc", vec![rec("p1", t + 30_000, "at_home", yes())]);
        let (ds, report) = link(&[a, b], &spec(60_000)).unwrap();
        assert_eq!(ds.rows.len(), 1);
        assert_eq!(ds.rows[0].bin_start, 9 * HOUR);
        assert_eq!(report.moved_across_edge, 1);
        assert_eq!(report.pair("affect", "loc").unwrap().rate(), Some(1.0));
    }

    #[test]
    fn outside_tolerance_stays_apart() {
        let t = 10 * HOUR - 10_000;
        let a = RecordSource::new("affect", vec![rec("p1", t, "affect", Value::Number(0.5))]);
        let b = RecordSource::new("loc", vec![rec("p1", t + 30_000, "at_home", yes())]);
        let (ds, report) = link(&[a, b], &spec(10_000)).unwrap();
        assert_eq!(ds.rows.len(), 2);
        assert_eq!(report.pair("affect", "loc").unwrap().rate(), Some(0.0));
    }

    #[test]
    fn link_is_symmetric() {
        let a = RecordSource::new(
            "a",
            vec![
                rec("p1", 5, "x", Value::Number(1.0)),
                rec("p2", HOUR, "x", Value::Number(2.0)),
            ],
        );
        let b = RecordSource::new("b", vec![rec("p1", 50, "y", yes())]);
        let (ab, _) = link(&[a.clone(), b.clone()], &spec(0)).unwrap();
        let (ba, _) = link(&[b, a.clone()], &spec(0)).unwrap();
        assert_eq!(ab, ba);
        let (alone, _) = link(std::slice::from_ref(&a), &spec(0)).unwrap();
        let (with_empty, _) = link(&[a, RecordSource::new("empty", vec![])], &spec(0)).unwrap();
        assert_eq!(alone, with_empty);
    }

    #[test]
    fn colliding_values_are_reported() {
        let a = RecordSource::new(
            "a",
            vec![
                rec("p1", 5, "x", Value::Number(1.0)),
                rec("p1", 10, "x", Value::Number(2.0)),
            ],
        );
        match link(std::slice::from_ref(&a), &spec(0)) {
            Err(LinkError::Duplicate(d)) => {
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].variable, "x");
            }
            other => panic!("{other:?}"),
        }
        let mut agg = spec(0);
        agg.aggregate = true;
        let (ds, report) = link(&[a], &agg).unwrap();
        assert_eq!(ds.rows[0].cells["x"].value, Value::Number(1.5));
        assert_eq!(report.aggregated_cells, 1);
    }

    #[test]
    fn same_variable_from_two_sources_collides() {
        let a = RecordSource::new("a", vec![rec("p1", 5, "x", Value::Number(1.0))]);
        let b = RecordSource::new("b", vec![rec("p1", 6, "x", Value::Number(1.0))]);
        assert!(matches!(
            link(&[a, b], &spec(0)),
            Err(LinkError::Duplicate(_))
        ));
    }

    #[test]
    fn bad_specs() {
        let mut s = spec(0);
        s.tolerance_ms = 2 * HOUR;
        assert!(s.validate().is_err());
        let mut s = spec(0);
        s.window_end = s.window_start;
        assert!(s.validate().is_err());
    }

    #[test]
    fn validation_flags_window_and_outlier() {
        let mut recs: Vec<DerivedRecord> = (0..20)
            .map(|h| rec("p1", h * HOUR, "x", Value::Number(1.0 + (h % 3) as f64)))
            .collect();
        recs.push(rec("p2", 3 * HOUR, "x", Value::Number(200.0)));
        recs.push(rec("p3", 2000 * HOUR, "x", Value::Number(2.0)));
        let (ds, _) = link(&[RecordSource::new("a", recs)], &spec(0)).unwrap();
        let report = validate(&ds, &spec(0));
        assert_eq!(report.out_of_window.len(), 1);
        assert_eq!(report.outliers.len(), 1);
        assert_eq!(report.outliers[0].value, 200.0);
        assert_eq!(report.findings(), 2);
    }

    #[test]
    fn identical_values_have_no_outliers() {
        let recs: Vec<DerivedRecord> = (0..10)
            .map(|h| rec("p1", h * HOUR, "x", Value::Number(4.0)))
            .collect();
        let (ds, _) = link(&[RecordSource::new("a", recs)], &spec(0)).unwrap();
        let report = validate(&ds, &spec(0));
        assert!(report.is_clean());
        assert_eq!(report.no_spread, vec!["x".to_string()]);
    }

    #[test]
    fn wide_csv() {
        let a = RecordSource::new("a", vec![rec("p1", 0, "x", Value::Number(1.0))]);
        let b = RecordSource::new("b", vec![rec("p1", HOUR, "y", yes())]);
        let (ds, _) = link(&[a, b], &spec(0)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "pseudonym,bin_start_iso,x,y\np1,1970-01-01T00:00:00.000Z,1,\np1,1970-01-01T01:00:00.000Z,,true\n"
        );
    }
}
