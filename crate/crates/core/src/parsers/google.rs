use serde::{Deserialize, Serialize};

use super::{ParseError, ParseReport};
use crate::archive::{read_member, DdpArchive, GOOGLE_LOCATION_FILE, GOOGLE_TAKEOUT_SCHEMA_V1};
use crate::timestamp::{parse_timestamp, SourceFormat, Timestamp};
use crate::types::{ProviderId, Pseudonym};

pub const MAX_LAT_E7: i64 = 900_000_000;
pub const MAX_LON_E7: i64 = 1_800_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCandidate {
    pub place_id: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub owner: Pseudonym,
    pub at: Timestamp,
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub accuracy_m: Option<u32>,
    pub semantic_candidates: Vec<SemanticCandidate>,
}

impl LocationRecord {
    pub fn lat_deg(&self) -> f64 {
        self.lat_e7 as f64 / 1e7
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_e7 as f64 / 1e7
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LocationFile {
    Bare(Vec<RawPing>),
    Wrapped { locations: Vec<RawPing> },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPing {
    #[serde(default)]
    timestamp_ms: Option<serde_json::Value>,
    #[serde(default)]
    timestamp: Option<String>,
    latitude_e7: i64,
    longitude_e7: i64,
    #[serde(default)]
    accuracy: Option<i64>,
    #[serde(default)]
    semantic_candidates: Vec<RawCandidate>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawCandidate {
    place_id: String,
    probability: f64,
}

fn ping_time(p: &RawPing) -> Result<Timestamp, String> {
    if let Some(v) = &p.timestamp_ms {
        let text = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(format!("timestampMs has unexpected type: {other}")),
        };
        return parse_timestamp(&text, Some(SourceFormat::EpochMs)).map_err(|e| e.to_string());
    }
    if let Some(s) = &p.timestamp {
        return parse_timestamp(s, None).map_err(|e| e.to_string());
    }
    Err("ping has no timestamp".to_string())
}

fn validate(index: usize, p: RawPing, owner: &Pseudonym) -> Result<LocationRecord, String> {
    let at = ping_time(&p).map_err(|e| format!("ping {index}: {e}"))?;
    if p.latitude_e7.abs() > MAX_LAT_E7 || p.longitude_e7.abs() > MAX_LON_E7 {
        return Err(format!(
            "ping {index}: coordinate out of range ({}, {})",
            p.latitude_e7, p.longitude_e7
        ));
    }
    let accuracy_m = match p.accuracy {
        None => None,
        Some(a) if (0..=u32::MAX as i64).contains(&a) => Some(a as u32),
        Some(a) => return Err(format!("ping {index}: invalid accuracy {a}")),
    };
    let mut semantic_candidates = Vec::with_capacity(p.semantic_candidates.len());
    for c in p.semantic_candidates {
        if !(0.0..=1.0).contains(&c.probability) {
            return Err(format!(
                "ping {index}: candidate `{}` has probability {} outside [0, 1]",
                c.place_id, c.probability
            ));
        }
        semantic_candidates.push(SemanticCandidate {
            place_id: c.place_id,
            probability: c.probability,
        });
    }
    Ok(LocationRecord {
        owner: owner.clone(),
        at,
        lat_e7: p.latitude_e7 as i32,
        lon_e7: p.longitude_e7 as i32,
        accuracy_m,
        semantic_candidates,
    })
}

/// Parses a google_takeout fixture archive into location pings.
///
/// Output is sorted by time. Pings sharing an instant keep the one with the
/// best (smallest) accuracy; a missing accuracy ranks worst and equal
/// accuracies keep the earlier entry in file order.
pub fn parse_google_location(
    archive: &DdpArchive,
    owner: &Pseudonym,
) -> Result<(Vec<LocationRecord>, ParseReport), ParseError> {
    if archive.provider != ProviderId::GoogleTakeout {
        return Err(ParseError::WrongProvider {
            path: archive.path.clone(),
            expected: ProviderId::GoogleTakeout,
            found: archive.provider,
        });
    }
    if archive.schema_version.as_deref() != Some(GOOGLE_TAKEOUT_SCHEMA_V1) {
        return Err(ParseError::UnsupportedSchema {
            provider: ProviderId::GoogleTakeout,
            found: archive.schema_version.clone(),
        });
    }
    let file = format!("{}{}", archive.root, GOOGLE_LOCATION_FILE);
    let raw = read_member(&mut archive.zip()?, &archive.path, &file).map_err(|_| {
        ParseError::MissingFile {
            path: archive.path.clone(),
            expected: file.clone(),
        }
    })?;
    let pings = match serde_json::from_slice::<LocationFile>(&raw) {
        Ok(LocationFile::Bare(v)) | Ok(LocationFile::Wrapped { locations: v }) => v,
        Err(e) => {
            return Err(ParseError::Malformed {
                path: archive.path.clone(),
                file,
                message: e.to_string(),
            })
        }
    };
    let mut report = ParseReport::new(archive.path.clone(), ProviderId::GoogleTakeout);
    let records = normalise(pings, owner, &mut report);
    Ok((records, report))
}

fn normalise(
    pings: Vec<RawPing>,
    owner: &Pseudonym,
    report: &mut ParseReport,
) -> Vec<LocationRecord> {
    let mut records = Vec::with_capacity(pings.len());
    for (i, p) in pings.into_iter().enumerate() {
        match validate(i, p, owner) {
            Ok(r) => records.push(r),
            Err(w) => report.drop_with(w),
        }
    }
    // Stable: equal instants stay in file order.
    records.sort_by_key(|r| r.at.epoch_ms);

    let mut out: Vec<LocationRecord> = Vec::with_capacity(records.len());
    for r in records {
        match out.last_mut() {
            Some(last) if last.at.epoch_ms == r.at.epoch_ms && last.owner == r.owner => {
                report.deduplicated += 1;
                let rank = |a: Option<u32>| a.unwrap_or(u32::MAX);
                if rank(r.accuracy_m) < rank(last.accuracy_m) {
                    report.warnings.push(format!(
                        "duplicate ping at {}: kept accuracy {:?} over {:?}",
                        r.at, r.accuracy_m, last.accuracy_m
                    ));
                    *last = r;
                } else {
                    report.warnings.push(format!(
                        "duplicate ping at {}: kept accuracy {:?} over {:?}",
                        last.at, last.accuracy_m, r.accuracy_m
                    ));
                }
            }
            _ => out.push(r),
        }
    }
    report.emitted = out.len();
    out
}
