//! Archive manifests and provider detection.
//!
//! A manifest lists every file member of a zip archive exactly once, sorted by
//! path, with its kind decided from content bytes. Directory entries carry no
//! content and are not listed. Members that cannot be read are kept as
//! `other` with a warning so a single damaged file never voids a package.

mod sniff;

use std::fs::File;
use std::io::{Read, Seek};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zip::ZipArchive;

use crate::timestamp::{SourceFormat, Timestamp};
use crate::types::{DetectedFormat, FileEntry, MediaKind, ProviderId};

pub use sniff::{image_dimensions, sniff};

pub const INSTAGRAM_SCHEMA_V1: &str = "instagram-fixture/1";
pub const GOOGLE_TAKEOUT_SCHEMA_V1: &str = "google-takeout-fixture/1";

pub const INSTAGRAM_INDEX: &str = "media.json";
pub const INSTAGRAM_MEDIA_DIR: &str = "media/";
pub const GOOGLE_LOCATION_FILE: &str = "Location History.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("cannot open archive {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unreadable zip archive {path}: {source}")]
    Zip {
        path: PathBuf,
        #[source]
        source: zip::result::ZipError,
    },
    #[error("archive {path} matches several provider signatures ({found:?}); refusing to guess")]
    Ambiguous {
        path: PathBuf,
        found: Vec<ProviderId>,
    },
    #[error("member `{member}` not found in {path}")]
    MissingMember { path: PathBuf, member: String },
    #[error("cannot read member `{member}` of {path}: {message}")]
    Member {
        path: PathBuf,
        member: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestWarning {
    pub relative_path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<FileEntry>,
    pub warnings: Vec<ManifestWarning>,
}

impl Manifest {
    pub fn get(&self, relative_path: &str) -> Option<&FileEntry> {
        self.entries
            .binary_search_by(|e| e.relative_path.as_str().cmp(relative_path))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn count(&self, kind: MediaKind) -> usize {
        self.entries.iter().filter(|e| e.media_kind == kind).count()
    }

    /// Newline-delimited `relative_path,media_kind,byte_size,hex_hash` lines.
    pub fn to_export(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&export_field(&e.relative_path));
            out.push(',');
            out.push_str(e.media_kind.as_str());
            out.push(',');
            out.push_str(&e.byte_size.to_string());
            out.push(',');
            out.push_str(&e.hex_hash());
            out.push('\n');
        }
        out
    }
}

// Paths with separators or quotes are CSV-quoted.
fn export_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Result of matching provider signature files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub provider: ProviderId,
    pub schema_version: Option<String>,
    /// Directory prefix (possibly empty, otherwise ending in `/`) holding the signature files.
    pub root: String,
}

/// A provider package on disk together with its manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdpArchive {
    pub path: PathBuf,
    pub provider: ProviderId,
    pub schema_version: Option<String>,
    pub root: String,
    pub manifest: Manifest,
}

impl DdpArchive {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let path = path.as_ref();
        let mut zip = open_zip(path)?;
        let detection = detect_in(&mut zip, path)?;
        let manifest = manifest_of(&mut zip);
        Ok(DdpArchive {
            path: path.to_path_buf(),
            provider: detection.provider,
            schema_version: detection.schema_version,
            root: detection.root,
            manifest,
        })
    }

    pub fn zip(&self) -> Result<ZipArchive<File>, ArchiveError> {
        open_zip(&self.path)
    }

    pub fn read_member(&self, relative_path: &str) -> Result<Vec<u8>, ArchiveError> {
        read_member(&mut self.zip()?, &self.path, relative_path)
    }

    /// Modification time recorded for a member, read as UTC.
    pub fn member_mtime(&self, relative_path: &str) -> Result<Option<Timestamp>, ArchiveError> {
        let mut zip = self.zip()?;
        let file = zip
            .by_name(relative_path)
            .map_err(|e| member_error(&self.path, relative_path, e))?;
        Ok(file.last_modified().and_then(member_mtime_of))
    }
}

pub(crate) fn open_zip(path: &Path) -> Result<ZipArchive<File>, ArchiveError> {
    let file = File::open(path).map_err(|source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ZipArchive::new(file).map_err(|source| ArchiveError::Zip {
        path: path.to_path_buf(),
        source,
    })
}

fn member_error(path: &Path, member: &str, e: zip::result::ZipError) -> ArchiveError {
    match e {
        zip::result::ZipError::FileNotFound => ArchiveError::MissingMember {
            path: path.to_path_buf(),
            member: member.to_string(),
        },
        other => ArchiveError::Member {
            path: path.to_path_buf(),
            member: member.to_string(),
            message: other.to_string(),
        },
    }
}

pub(crate) fn read_member<R: Read + Seek>(
    zip: &mut ZipArchive<R>,
    path: &Path,
    member: &str,
) -> Result<Vec<u8>, ArchiveError> {
    let mut file = zip
        .by_name(member)
        .map_err(|e| member_error(path, member, e))?;
    let mut buf = Vec::with_capacity(file.size() as usize);
    file.read_to_end(&mut buf)
        .map_err(|e| ArchiveError::Member {
            path: path.to_path_buf(),
            member: member.to_string(),
            message: e.to_string(),
        })?;
    Ok(buf)
}

pub(crate) fn member_mtime_of(dt: zip::DateTime) -> Option<Timestamp> {
    let naive = NaiveDate::from_ymd_opt(dt.year() as i32, dt.month() as u32, dt.day() as u32)?
        .and_hms_opt(dt.hour() as u32, dt.minute() as u32, dt.second() as u32)?;
    Some(Timestamp {
        epoch_ms: naive.and_utc().timestamp_millis(),
        source_format: SourceFormat::ProviderLocal,
    })
}

/// Builds the manifest of the archive at `path`.
pub fn build_manifest(path: impl AsRef<Path>) -> Result<Manifest, ArchiveError> {
    let mut zip = open_zip(path.as_ref())?;
    Ok(manifest_of(&mut zip))
}

pub fn manifest_of<R: Read + Seek>(zip: &mut ZipArchive<R>) -> Manifest {
    let mut entries = Vec::with_capacity(zip.len());
    let mut warnings = Vec::new();
    for index in 0..zip.len() {
        let name = zip.name_for_index(index).unwrap_or_default().to_string();
        let mut file = match zip.by_index(index) {
            Ok(f) => f,
            Err(e) => {
                if name.ends_with('/') {
                    continue;
                }
                warnings.push(ManifestWarning {
                    relative_path: name.clone(),
                    message: e.to_string(),
                });
                entries.push(damaged_entry(name, 0));
                continue;
            }
        };
        if file.is_dir() {
            continue;
        }
        let declared = file.size();
        let mut bytes = Vec::with_capacity(declared.min(1 << 26) as usize);
        if let Err(e) = file.read_to_end(&mut bytes) {
            warnings.push(ManifestWarning {
                relative_path: name.clone(),
                message: e.to_string(),
            });
            entries.push(damaged_entry(name, declared));
            continue;
        }
        let format = sniff(&bytes);
        entries.push(FileEntry {
            relative_path: name,
            media_kind: format.media_kind(),
            format,
            byte_size: bytes.len() as u64,
            content_hash: Sha256::digest(&bytes).into(),
        });
    }
    entries.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Manifest { entries, warnings }
}

fn damaged_entry(relative_path: String, byte_size: u64) -> FileEntry {
    FileEntry {
        relative_path,
        media_kind: MediaKind::Other,
        format: DetectedFormat::Unknown,
        byte_size,
        content_hash: Sha256::digest([]).into(),
    }
}

/// Detects the provider of the archive at `path` from its signature files.
pub fn detect_provider(path: impl AsRef<Path>) -> Result<Detection, ArchiveError> {
    let path = path.as_ref();
    let mut zip = open_zip(path)?;
    detect_in(&mut zip, path)
}

fn detect_in<R: Read + Seek>(
    zip: &mut ZipArchive<R>,
    path: &Path,
) -> Result<Detection, ArchiveError> {
    let mut names: Vec<&str> = zip.file_names().collect();
    names.sort_unstable();
    let instagram = instagram_root(&names);
    let google = google_root(&names);
    match (instagram, google) {
        (Some(_), Some(_)) => Err(ArchiveError::Ambiguous {
            path: path.to_path_buf(),
            found: vec![ProviderId::Instagram, ProviderId::GoogleTakeout],
        }),
        (Some(root), None) => Ok(Detection {
            provider: ProviderId::Instagram,
            schema_version: Some(INSTAGRAM_SCHEMA_V1.to_string()),
            root,
        }),
        (None, Some(root)) => Ok(Detection {
            provider: ProviderId::GoogleTakeout,
            schema_version: Some(GOOGLE_TAKEOUT_SCHEMA_V1.to_string()),
            root,
        }),
        (None, None) => Ok(Detection {
            provider: ProviderId::Unknown,
            schema_version: None,
            root: String::new(),
        }),
    }
}

fn split_parent(name: &str) -> (&str, &str) {
    match name.rfind('/') {
        Some(i) => (&name[..=i], &name[i + 1..]),
        None => ("", name),
    }
}

// Shallowest `media.json` whose sibling `media/` directory exists.
fn instagram_root(sorted_names: &[&str]) -> Option<String> {
    sorted_names
        .iter()
        .filter_map(|n| {
            let (parent, file) = split_parent(n);
            (file == INSTAGRAM_INDEX).then_some(parent)
        })
        .filter(|parent| {
            let media_dir = format!("{parent}{INSTAGRAM_MEDIA_DIR}");
            sorted_names.iter().any(|n| n.starts_with(&media_dir))
        })
        .min_by_key(|parent| (parent.matches('/').count(), *parent))
        .map(str::to_string)
}

fn google_root(sorted_names: &[&str]) -> Option<String> {
    sorted_names
        .iter()
        .filter_map(|n| {
            let (parent, file) = split_parent(n);
            (file == GOOGLE_LOCATION_FILE).then_some(parent)
        })
        .min_by_key(|parent| (parent.matches('/').count(), *parent))
        .map(str::to_string)
}
