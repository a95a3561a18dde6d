use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Platform that produced a data download package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderId {
    Instagram,
    GoogleTakeout,
    Unknown,
}

impl ProviderId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderId::Instagram => "instagram",
            ProviderId::GoogleTakeout => "google_takeout",
            ProviderId::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "instagram" => Ok(ProviderId::Instagram),
            "google_takeout" => Ok(ProviderId::GoogleTakeout),
            "unknown" => Ok(ProviderId::Unknown),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

/// Coarse content class of an archive member, decided from its bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
    StructuredText,
    Other,
}

impl MediaKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
            MediaKind::StructuredText => "structured_text",
            MediaKind::Other => "other",
        }
    }

    pub fn is_media(&self) -> bool {
        matches!(self, MediaKind::Image | MediaKind::Video)
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MediaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(MediaKind::Image),
            "video" => Ok(MediaKind::Video),
            "structured_text" => Ok(MediaKind::StructuredText),
            "other" => Ok(MediaKind::Other),
            other => Err(format!("unknown media kind `{other}`")),
        }
    }
}

/// Concrete format recognised by the magic-byte sniffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectedFormat {
    Jpeg,
    Png,
    Gif,
    Webp,
    Heic,
    Bmp,
    Mp4,
    QuickTime,
    Webm,
    Avi,
    Json,
    Text,
    Unknown,
}

impl DetectedFormat {
    pub fn media_kind(&self) -> MediaKind {
        use DetectedFormat::*;
        match self {
            Jpeg | Png | Gif | Webp | Heic | Bmp => MediaKind::Image,
            Mp4 | QuickTime | Webm | Avi => MediaKind::Video,
            Json | Text => MediaKind::StructuredText,
            Unknown => MediaKind::Other,
        }
    }
}

/// One member of an archive, classified by content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub relative_path: String,
    pub media_kind: MediaKind,
    pub format: DetectedFormat,
    pub byte_size: u64,
    /// SHA-256 of the member's uncompressed bytes.
    pub content_hash: [u8; 32],
}

impl FileEntry {
    pub fn hex_hash(&self) -> String {
        hex::encode(self.content_hash)
    }

    /// Final path component.
    pub fn file_name(&self) -> &str {
        self.relative_path
            .rsplit('/')
            .next()
            .unwrap_or(&self.relative_path)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PseudonymError {
    #[error("pseudonym must be 1..=64 characters of [A-Za-z0-9_-], got `{0}`")]
    Malformed(String),
    #[error("pseudonym `{0}` equals a platform username found in the archive")]
    CollidesWithUsername(String),
}

/// Study-scoped identifier that replaces platform usernames.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pseudonym(String);

impl Pseudonym {
    pub fn new(value: impl Into<String>) -> Result<Self, PseudonymError> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.len() <= 64
            && value
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if ok {
            Ok(Pseudonym(value))
        } else {
            Err(PseudonymError::Malformed(value))
        }
    }

    /// Stable pseudonym for a respondent key within one study.
    pub fn derive(study_id: &str, respondent_key: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(study_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(respondent_key.as_bytes());
        let digest = hasher.finalize();
        Pseudonym(format!("p{}", &hex::encode(digest)[..16]))
    }

    /// Rejects the pseudonym if it coincides with any raw username.
    pub fn ensure_distinct_from<'a, I>(&self, usernames: I) -> Result<(), PseudonymError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if usernames.into_iter().any(|u| u == self.0) {
            return Err(PseudonymError::CollidesWithUsername(self.0.clone()));
        }
        Ok(())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Pseudonym {
    type Error = PseudonymError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Pseudonym::new(value)
    }
}

impl From<Pseudonym> for String {
    fn from(p: Pseudonym) -> Self {
        p.0
    }
}
