//! Schema-versioned parsers for provider fixture archives.
//!
//! Supported layouts are documented in `docs/fixture-schemas.md`. Every parser
//! returns its records together with a [`ParseReport`] so that
//! `emitted + dropped + deduplicated` always accounts for every input item.

mod google;
mod instagram;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::ArchiveError;
use crate::types::ProviderId;

pub use google::{
    parse_google_location, LocationRecord, SemanticCandidate, MAX_LAT_E7, MAX_LON_E7,
};
pub use instagram::{parse_instagram, MediaRecord, MediaType, RecordFlag};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("archive {path} is from provider {found}, expected {expected}")]
    WrongProvider {
        path: PathBuf,
        expected: ProviderId,
        found: ProviderId,
    },
    #[error("unsupported schema version {found:?} for {provider}")]
    UnsupportedSchema {
        provider: ProviderId,
        found: Option<String>,
    },
    #[error("archive {path} lacks the expected file `{expected}`")]
    MissingFile { path: PathBuf, expected: String },
    #[error("malformed `{file}` in {path}: {message}")]
    Malformed {
        path: PathBuf,
        file: String,
        message: String,
    },
    #[error("no semantic location candidates")]
    NoCandidates,
}

/// Per-archive bookkeeping of what a parser emitted, flagged and dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub archive: PathBuf,
    pub provider: Option<ProviderId>,
    pub emitted: usize,
    pub flagged: usize,
    pub dropped: usize,
    pub deduplicated: usize,
    pub warnings: Vec<String>,
}

impl ParseReport {
    fn new(archive: PathBuf, provider: ProviderId) -> Self {
        ParseReport {
            archive,
            provider: Some(provider),
            ..Default::default()
        }
    }

    fn drop_with(&mut self, warning: String) {
        self.dropped += 1;
        self.warnings.push(warning);
    }
}

/// Picks the candidate with the highest probability; ties go to the
/// lexicographically smallest place id.
pub fn select_semantic_location(candidates: &[SemanticCandidate]) -> Result<&str, ParseError> {
    let mut best: Option<&SemanticCandidate> = None;
    for c in candidates {
        best = match best {
            None => Some(c),
            Some(b) => {
                let better = c.probability > b.probability
                    || (c.probability == b.probability && c.place_id < b.place_id);
                Some(if better { c } else { b })
            }
        };
    }
    best.map(|c| c.place_id.as_str())
        .ok_or(ParseError::NoCandidates)
}
