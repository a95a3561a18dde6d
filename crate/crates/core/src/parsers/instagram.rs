use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{ParseError, ParseReport};
use crate::archive::{
    member_mtime_of, read_member, DdpArchive, INSTAGRAM_INDEX, INSTAGRAM_SCHEMA_V1,
};
use crate::timestamp::{parse_timestamp, Timestamp};
use crate::types::{FileEntry, MediaKind, ProviderId, Pseudonym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaType {
    Photo,
    Video,
    TextPost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    /// Found in the archive but missing from the media index.
    Unindexed,
    /// The index timestamp could not be parsed; `taken_at` is empty.
    TimestampUnparsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRecord {
    pub owner: Pseudonym,
    pub taken_at: Option<Timestamp>,
    pub file: FileEntry,
    pub caption: Option<String>,
    pub kind: MediaType,
    pub flags: Vec<RecordFlag>,
}

impl MediaRecord {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    path: String,
    #[serde(default)]
    taken_at: Option<serde_json::Value>,
    #[serde(default)]
    caption: Option<String>,
    kind: MediaType,
}

fn timestamp_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses an instagram fixture archive.
///
/// Indexed entries come first in index order. Image and video members anywhere
/// in the archive that the index does not mention follow in path order,
/// flagged [`RecordFlag::Unindexed`] and dated by their archive mtime.
pub fn parse_instagram(
    archive: &DdpArchive,
    owner: &Pseudonym,
) -> Result<(Vec<MediaRecord>, ParseReport), ParseError> {
    if archive.provider != ProviderId::Instagram {
        return Err(ParseError::WrongProvider {
            path: archive.path.clone(),
            expected: ProviderId::Instagram,
            found: archive.provider,
        });
    }
    if archive.schema_version.as_deref() != Some(INSTAGRAM_SCHEMA_V1) {
        return Err(ParseError::UnsupportedSchema {
            provider: ProviderId::Instagram,
            found: archive.schema_version.clone(),
        });
    }

    let index_path = format!("{}{}", archive.root, INSTAGRAM_INDEX);
    let mut zip = archive.zip()?;
    let raw =
        read_member(&mut zip, &archive.path, &index_path).map_err(|_| ParseError::MissingFile {
            path: archive.path.clone(),
            expected: index_path.clone(),
        })?;
    let index: Vec<IndexEntry> =
        serde_json::from_slice(&raw).map_err(|e| ParseError::Malformed {
            path: archive.path.clone(),
            file: index_path.clone(),
            message: e.to_string(),
        })?;

    let mut report = ParseReport::new(archive.path.clone(), ProviderId::Instagram);
    let mut records = Vec::with_capacity(index.len());
    let mut indexed = BTreeSet::new();

    for entry in index {
        let full = format!("{}{}", archive.root, entry.path.trim_start_matches('/'));
        indexed.insert(full.clone());
        let Some(file) = archive.manifest.get(&full) else {
            report.drop_with(format!("indexed file `{full}` is not in the archive"));
            continue;
        };
        let mut flags = Vec::new();
        let taken_at = match entry.taken_at.as_ref().and_then(timestamp_text) {
            Some(text) => match parse_timestamp(&text, None) {
                Ok(t) => Some(t),
                Err(e) => {
                    report.warnings.push(format!("{full}: {e}"));
                    flags.push(RecordFlag::TimestampUnparsed);
                    None
                }
            },
            None => {
                report.warnings.push(format!("{full}: missing taken_at"));
                flags.push(RecordFlag::TimestampUnparsed);
                None
            }
        };
        records.push(MediaRecord {
            owner: owner.clone(),
            taken_at,
            file: file.clone(),
            caption: entry.caption,
            kind: entry.kind,
            flags,
        });
    }

    for file in &archive.manifest.entries {
        if !file.media_kind.is_media() || indexed.contains(&file.relative_path) {
            continue;
        }
        let taken_at = zip
            .by_name(&file.relative_path)
            .ok()
            .and_then(|f| f.last_modified())
            .and_then(member_mtime_of);
        report.warnings.push(format!(
            "{}: media file absent from the index",
            file.relative_path
        ));
        records.push(MediaRecord {
            owner: owner.clone(),
            taken_at,
            file: file.clone(),
            caption: None,
            kind: if file.media_kind == MediaKind::Video {
                MediaType::Video
            } else {
                MediaType::Photo
            },
            flags: vec![RecordFlag::Unindexed],
        });
    }

    report.emitted = records.len();
    report.flagged = records.iter().filter(|r| r.is_flagged()).count();
    Ok((records, report))
}
