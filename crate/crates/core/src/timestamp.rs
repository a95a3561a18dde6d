//! Normalisation of the many timestamp spellings found in provider packages.
//!
//! Everything becomes integer milliseconds since the Unix epoch in UTC. The
//! original spelling is kept as a [`SourceFormat`] tag so later analyses can
//! re-interpret zoneless values once a study-level zone rule exists.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integers strictly below this magnitude are read as epoch seconds.
pub const SECONDS_CUTOFF: i64 = 100_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// ISO-8601 with an explicit zone designator or offset.
    Iso8601,
    EpochS,
    EpochMs,
    /// Zoneless ISO-8601 (provider-local clock); interpreted as UTC.
    ProviderLocal,
}

impl SourceFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceFormat::Iso8601 => "iso8601",
            SourceFormat::EpochS => "epoch_s",
            SourceFormat::EpochMs => "epoch_ms",
            SourceFormat::ProviderLocal => "provider_local",
        }
    }
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iso8601" => Ok(SourceFormat::Iso8601),
            "epoch_s" => Ok(SourceFormat::EpochS),
            "epoch_ms" => Ok(SourceFormat::EpochMs),
            "provider_local" => Ok(SourceFormat::ProviderLocal),
            other => Err(format!("unknown timestamp format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TimestampError {
    #[error("empty timestamp")]
    Empty,
    #[error("unparseable timestamp `{raw}`")]
    Unparseable { raw: String },
    #[error("timestamp `{raw}` is outside the representable range")]
    OutOfRange { raw: String },
}

/// A UTC instant with millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub epoch_ms: i64,
    pub source_format: SourceFormat,
}

impl Timestamp {
    pub fn from_epoch_ms(epoch_ms: i64) -> Self {
        Timestamp {
            epoch_ms,
            source_format: SourceFormat::EpochMs,
        }
    }

    /// `YYYY-MM-DDTHH:MM:SS.sssZ`.
    pub fn to_iso(&self) -> String {
        render_iso(self.epoch_ms)
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.epoch_ms.cmp(&other.epoch_ms).then_with(|| {
            self.source_format
                .as_str()
                .cmp(other.source_format.as_str())
        })
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

pub fn render_iso(epoch_ms: i64) -> String {
    match DateTime::<Utc>::from_timestamp_millis(epoch_ms) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Millis, true),
        None => format!("@{epoch_ms}ms"),
    }
}

/// Parses `raw` into a [`Timestamp`].
///
/// Without a hint, bare integers below [`SECONDS_CUTOFF`] are epoch seconds and
/// larger ones epoch milliseconds; decimal numbers are fractional seconds.
/// Zoneless ISO strings are read as UTC and tagged `provider_local`.
pub fn parse_timestamp(raw: &str, hint: Option<SourceFormat>) -> Result<Timestamp, TimestampError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(TimestampError::Empty);
    }
    let unparseable = || TimestampError::Unparseable {
        raw: raw.to_string(),
    };
    let out_of_range = || TimestampError::OutOfRange {
        raw: raw.to_string(),
    };

    match hint {
        Some(SourceFormat::EpochS) => {
            let ms = parse_seconds(trimmed).ok_or_else(unparseable)?;
            return checked(ms, SourceFormat::EpochS).ok_or_else(out_of_range);
        }
        Some(SourceFormat::EpochMs) => {
            let ms: i64 = trimmed.parse().map_err(|_| unparseable())?;
            return checked(ms, SourceFormat::EpochMs).ok_or_else(out_of_range);
        }
        Some(SourceFormat::Iso8601) | Some(SourceFormat::ProviderLocal) => {
            return parse_iso(trimmed).ok_or_else(unparseable);
        }
        None => {}
    }

    if let Ok(n) = trimmed.parse::<i64>() {
        let (ms, format) = if n.unsigned_abs() < SECONDS_CUTOFF as u64 {
            (n.checked_mul(1000), SourceFormat::EpochS)
        } else {
            (Some(n), SourceFormat::EpochMs)
        };
        return ms
            .and_then(|ms| checked(ms, format))
            .ok_or_else(out_of_range);
    }
    if looks_decimal(trimmed) {
        let ms = parse_seconds(trimmed).ok_or_else(unparseable)?;
        return checked(ms, SourceFormat::EpochS).ok_or_else(out_of_range);
    }
    parse_iso(trimmed).ok_or_else(unparseable)
}

fn checked(epoch_ms: i64, source_format: SourceFormat) -> Option<Timestamp> {
    DateTime::<Utc>::from_timestamp_millis(epoch_ms)?;
    Some(Timestamp {
        epoch_ms,
        source_format,
    })
}

fn looks_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    matches!(frac, Some(f) if !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
        && !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
}

/// Epoch seconds (integer or decimal) to milliseconds, rounding to nearest.
fn parse_seconds(s: &str) -> Option<i64> {
    if let Ok(n) = s.parse::<i64>() {
        return n.checked_mul(1000);
    }
    if !looks_decimal(s) {
        return None;
    }
    let secs: f64 = s.parse().ok()?;
    let ms = (secs * 1000.0).round();
    if ms.is_finite() && ms.abs() < 9.0e15 {
        Some(ms as i64)
    } else {
        None
    }
}

const ZONED_FORMATS: &[&str] = &["%Y-%m-%dT%H:%M:%S%.f%z", "%Y-%m-%d %H:%M:%S%.f%z"];
const NAIVE_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

fn parse_iso(s: &str) -> Option<Timestamp> {
    let zoned = DateTime::parse_from_rfc3339(s).ok().or_else(|| {
        ZONED_FORMATS
            .iter()
            .find_map(|f| DateTime::parse_from_str(s, f).ok())
    });
    if let Some(dt) = zoned {
        return Some(Timestamp {
            epoch_ms: dt.timestamp_millis(),
            source_format: SourceFormat::Iso8601,
        });
    }
    let naive = NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })?;
    Some(Timestamp {
        epoch_ms: naive.and_utc().timestamp_millis(),
        source_format: SourceFormat::ProviderLocal,
    })
}
