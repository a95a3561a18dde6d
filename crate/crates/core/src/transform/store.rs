use std::io::{Read, Write};

use super::{DerivedRecord, Provenance, TransformError, Value};
use crate::timestamp::{parse_timestamp, SourceFormat};
use crate::types::{ProviderId, Pseudonym};

pub const RECORDS_CSV_HEADER: [&str; 8] = [
    "pseudonym",
    "timestamp_iso",
    "variable",
    "value",
    "provider",
    "transformer_id",
    "transformer_version",
    "confidence",
];

/// Canonical store order: owner, time, variable, transformer.
pub fn sort_store(records: &mut [DerivedRecord]) {
    records.sort_by(|a, b| {
        a.owner
            .cmp(&b.owner)
            .then(a.at.epoch_ms.cmp(&b.at.epoch_ms))
            .then_with(|| a.variable.cmp(&b.variable))
            .then_with(|| {
                a.provenance
                    .transformer_id
                    .cmp(&b.provenance.transformer_id)
            })
    });
}

fn csv_err(e: impl std::fmt::Display) -> TransformError {
    TransformError::Csv(e.to_string())
}

pub fn write_records_csv<W: Write>(
    records: &[DerivedRecord],
    out: W,
) -> Result<(), TransformError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RECORDS_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.owner.as_str(),
            &r.at.to_iso(),
            &r.variable,
            &r.value.to_string(),
            r.provenance.provider.as_str(),
            &r.provenance.transformer_id,
            &r.provenance.transformer_version,
            &r.provenance.confidence.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

fn parse_value(raw: &str) -> Value {
    match raw.parse::<f64>() {
        Ok(x) if x.is_finite() && raw.bytes().any(|b| b.is_ascii_digit()) => Value::Number(x),
        _ => Value::Label(raw.to_string()),
    }
}

/// Reads records written by [`write_records_csv`]. Values that parse as finite
/// numbers come back as [`Value::Number`].
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<DerivedRecord>, TransformError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RECORDS_CSV_HEADER.iter().copied()) {
        return Err(TransformError::Csv(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let at_line = |msg: String| TransformError::Csv(format!("row {}: {msg}", line + 1));
        let owner = Pseudonym::new(field(0)).map_err(|e| at_line(e.to_string()))?;
        let at = parse_timestamp(field(1), Some(SourceFormat::Iso8601))
            .map_err(|e| at_line(e.to_string()))?;
        let provider: ProviderId = field(4).parse().map_err(at_line)?;
        let confidence: f64 = field(7)
            .parse()
            .map_err(|_| at_line(format!("bad confidence `{}`", field(7))))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(at_line(format!("confidence {confidence} outside [0, 1]")));
        }
        out.push(DerivedRecord {
            owner,
            at,
            variable: field(2).to_string(),
            value: parse_value(field(3)),
            provenance: Provenance {
                provider,
                transformer_id: field(5).to_string(),
                transformer_version: field(6).to_string(),
                confidence,
            },
        });
    }
    Ok(out)
}
