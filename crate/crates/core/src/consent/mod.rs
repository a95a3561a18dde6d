//! Per-variable informed consent on the respondent's device.
//!
//! A [`ConsentSession`] shows the respondent every derived variable, lets
//! them approve or reject each one, and on [`ConsentSession::finalize`] builds
//! a [`DonationPackage`] holding only the approved variables. Afterwards
//! [`ConsentSession::purge_local`] removes the local copies. The session moves
//! strictly forward: open, finalized, purged.

mod package;
mod server;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::timestamp::Timestamp;
use crate::transform::{DerivedRecord, VariableRegistry, FACE_AFFECT, HOME_GEOFENCE};
use crate::types::Pseudonym;

pub use package::{
    verify_package_bytes, DonationPackage, PackageError, CHECKSUM_MEMBER, MANIFEST_MEMBER,
    RECORDS_MEMBER,
};
pub use server::{ConsentServer, ServerHandle};

pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Finalized,
    Purged,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConsentError {
    #[error("variable `{0}` is not part of this session")]
    NotFound(String),
    #[error("the session is {0:?}; decisions can no longer change")]
    Immutable(SessionState),
    #[error("decisions still pending for: {}", .0.join(", "))]
    Incomplete(Vec<String>),
    #[error("cannot {action} while the session is {state:?}")]
    WrongState {
        action: &'static str,
        state: SessionState,
    },
    #[error("record for variable `{0}` which the study does not register")]
    UnregisteredVariable(String),
    #[error("the store mixes pseudonyms `{0}` and `{1}`")]
    MixedOwners(String, String),
    #[error("path {0} lies outside the session working directory")]
    OutsideWorkdir(PathBuf),
    #[error("working directory {path}: {message}")]
    Workdir { path: PathBuf, message: String },
    #[error("no package: nothing was consented")]
    NothingConsented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub name: String,
    pub description: String,
    pub transformer: String,
    pub records: usize,
    pub decision: Decision,
    /// Whether the respondent opened at least one preview page.
    pub previewed: bool,
}

/// Canned example of what a transformer takes in and what it gives out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Illustration {
    pub transformer: String,
    pub input: String,
    pub output: Vec<String>,
}

pub fn illustration_for(transformer: &str) -> Illustration {
    let (input, output): (&str, &[&str]) = match transformer {
        FACE_AFFECT => (
            "photo media/2020/03/beach.jpg with two faces",
            &[
                "face 1 (left): positive, confidence 0.97",
                "face 2 (right): neutral, confidence 0.64",
                "affect_positive_share for 2020-03-01 = 0.5",
                "the photo itself is not shared",
            ],
        ),
        HOME_GEOFENCE => (
            "location ping 2020-03-01T21:14:05Z at 52.0907 N, 5.1214 E, accuracy 20 m",
            &[
                "at_home = true (within 100 m of the place you usually spend the night)",
                "coordinates are not shared",
            ],
        ),
        _ => (
            "one item of your download package",
            &["the derived values listed below"],
        ),
    };
    Illustration {
        transformer: transformer.to_string(),
        input: input.to_string(),
        output: output.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRow {
    pub timestamp_iso: String,
    pub value: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewPage {
    pub variable: String,
    /// Zero-based.
    pub page: usize,
    pub page_size: usize,
    pub total_rows: usize,
    pub total_pages: usize,
    pub rows: Vec<PreviewRow>,
    pub illustration: Illustration,
}

/// Local paths the session may delete on purge. All of them must lie inside
/// `workdir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalArtifacts {
    pub workdir: PathBuf,
    /// Derived store files and extraction directories.
    pub derived: Vec<PathBuf>,
    /// The original download packages.
    pub archives: Vec<PathBuf>,
}

impl LocalArtifacts {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        LocalArtifacts {
            workdir: workdir.into(),
            ..Default::default()
        }
    }

    fn check(&self) -> Result<(), ConsentError> {
        let root = self
            .workdir
            .canonicalize()
            .map_err(|e| ConsentError::Workdir {
                path: self.workdir.clone(),
                message: e.to_string(),
            })?;
        for p in self.derived.iter().chain(&self.archives) {
            let abs = if p.is_absolute() {
                p.clone()
            } else {
                self.workdir.join(p)
            };
            let resolved = match abs.canonicalize() {
                Ok(c) => c,
                Err(_) => match (
                    abs.parent().and_then(|d| d.canonicalize().ok()),
                    abs.file_name(),
                ) {
                    (Some(d), Some(f)) => d.join(f),
                    _ => return Err(ConsentError::OutsideWorkdir(p.clone())),
                },
            };
            if !resolved.starts_with(&root) || resolved == root {
                return Err(ConsentError::OutsideWorkdir(p.clone()));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PurgeReport {
    pub deleted: Vec<PathBuf>,
    pub kept: Vec<PathBuf>,
    /// Paths that could not be deleted, with the reason.
    pub survivors: Vec<(PathBuf, String)>,
}

impl PurgeReport {
    pub fn nothing_to_delete(&self) -> bool {
        self.deleted.is_empty() && self.survivors.is_empty()
    }

    pub fn complete(&self) -> bool {
        self.survivors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Package {
        checksum: String,
        variables: Vec<(String, usize)>,
    },
    NothingConsented,
}

#[derive(Debug, Clone)]
pub struct ConsentSession {
    id: String,
    study_id: String,
    owner: Option<Pseudonym>,
    state: SessionState,
    variables: Vec<VariableEntry>,
    records: Vec<DerivedRecord>,
    artifacts: LocalArtifacts,
    package: Option<DonationPackage>,
    outcome: Option<Outcome>,
}

/// Serializable view of a session for the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub study_id: String,
    pub pseudonym: Option<String>,
    pub state: SessionState,
    pub nothing_to_share: bool,
    pub pending: Vec<String>,
    pub outcome: Option<Outcome>,
}

impl ConsentSession {
    /// Opens a session over a respondent's derived store.
    ///
    /// Every variable present in the store gets one pending entry. An empty
    /// store opens a session in the nothing-to-share state.
    pub fn start(
        study_id: &str,
        records: Vec<DerivedRecord>,
        registry: &VariableRegistry,
        artifacts: LocalArtifacts,
    ) -> Result<ConsentSession, ConsentError> {
        artifacts.check()?;
        let mut owner: Option<Pseudonym> = None;
        let mut names = BTreeSet::new();
        for r in &records {
            match &owner {
                None => owner = Some(r.owner.clone()),
                Some(o) if *o != r.owner => {
                    return Err(ConsentError::MixedOwners(
                        o.to_string(),
                        r.owner.to_string(),
                    ))
                }
                _ => {}
            }
            if registry.get(&r.variable).is_none() {
                return Err(ConsentError::UnregisteredVariable(r.variable.clone()));
            }
            names.insert(r.variable.as_str());
        }
        let variables = names
            .into_iter()
            .map(|name| {
                let def = registry.get(name).expect("checked above");
                VariableEntry {
                    name: name.to_string(),
                    description: def.description.clone(),
                    transformer: def.transformer.clone(),
                    records: records.iter().filter(|r| r.variable == name).count(),
                    decision: Decision::Pending,
                    previewed: false,
                }
            })
            .collect();

        let mut h = Sha256::new();
        h.update(study_id.as_bytes());
        h.update([0]);
        h.update(owner.as_ref().map(|o| o.as_str()).unwrap_or("").as_bytes());
        h.update([0]);
        h.update(records.len().to_le_bytes());
        let id = hex::encode(&h.finalize()[..8]);

        Ok(ConsentSession {
            id,
            study_id: study_id.to_string(),
            owner,
            state: SessionState::Open,
            variables,
            records,
            artifacts,
            package: None,
            outcome: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn owner(&self) -> Option<&Pseudonym> {
        self.owner.as_ref()
    }

    pub fn variables(&self) -> &[VariableEntry] {
        &self.variables
    }

    pub fn nothing_to_share(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn decision(&self, variable: &str) -> Option<Decision> {
        self.variables
            .iter()
            .find(|v| v.name == variable)
            .map(|v| v.decision)
    }

    pub fn pending(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| v.decision == Decision::Pending)
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn package(&self) -> Option<&DonationPackage> {
        self.package.as_ref()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            study_id: self.study_id.clone(),
            pseudonym: self.owner.as_ref().map(|o| o.to_string()),
            state: self.state,
            nothing_to_share: self.nothing_to_share(),
            pending: self.pending(),
            outcome: self.outcome.clone(),
        }
    }

    /// One page of the variable's derived rows, oldest first.
    pub fn preview(
        &mut self,
        variable: &str,
        page: usize,
        page_size: usize,
    ) -> Result<PreviewPage, ConsentError> {
        let entry = self
            .variables
            .iter_mut()
            .find(|v| v.name == variable)
            .ok_or_else(|| ConsentError::NotFound(variable.to_string()))?;
        if self.state == SessionState::Purged {
            return Err(ConsentError::WrongState {
                action: "preview",
                state: self.state,
            });
        }
        entry.previewed = true;
        let transformer = entry.transformer.clone();
        let page_size = page_size.max(1);
        let mut rows: Vec<&DerivedRecord> = self
            .records
            .iter()
            .filter(|r| r.variable == variable)
            .collect();
        rows.sort_by_key(|r| r.at.epoch_ms);
        let total_rows = rows.len();
        Ok(PreviewPage {
            variable: variable.to_string(),
            page,
            page_size,
            total_rows,
            total_pages: total_rows.div_ceil(page_size),
            rows: rows
                .into_iter()
                .skip(page.saturating_mul(page_size))
                .take(page_size)
                .map(|r| PreviewRow {
                    timestamp_iso: r.at.to_iso(),
                    value: r.value.to_string(),
                    confidence: r.provenance.confidence,
                })
                .collect(),
            illustration: illustration_for(&transformer),
        })
    }

    /// Stores a decision; deciding again before finalizing overwrites.
    pub fn record_decision(
        &mut self,
        variable: &str,
        decision: Decision,
    ) -> Result<&VariableEntry, ConsentError> {
        if self.state != SessionState::Open {
            return Err(ConsentError::Immutable(self.state));
        }
        let entry = self
            .variables
            .iter_mut()
            .find(|v| v.name == variable)
            .ok_or_else(|| ConsentError::NotFound(variable.to_string()))?;
        entry.decision = decision;
        Ok(entry)
    }

    /// Closes the decisions and builds the package from approved variables.
    ///
    /// Returns `Ok(None)` when nothing was approved: no package exists and
    /// the outcome says so.
    pub fn finalize(
        &mut self,
        created: Timestamp,
    ) -> Result<Option<&DonationPackage>, ConsentError> {
        if self.state != SessionState::Open {
            return Err(ConsentError::WrongState {
                action: "finalize",
                state: self.state,
            });
        }
        let pending = self.pending();
        if !pending.is_empty() {
            return Err(ConsentError::Incomplete(pending));
        }
        let approved: BTreeSet<&str> = self
            .variables
            .iter()
            .filter(|v| v.decision == Decision::Approved)
            .map(|v| v.name.as_str())
            .collect();
        self.state = SessionState::Finalized;
        match (&self.owner, approved.is_empty()) {
            (Some(owner), false) => {
                let records = self
                    .records
                    .iter()
                    .filter(|r| approved.contains(r.variable.as_str()))
                    .cloned()
                    .collect();
                let pkg = DonationPackage::new(&self.study_id, owner.clone(), created, records);
                self.outcome = Some(Outcome::Package {
                    checksum: pkg.checksum(),
                    variables: pkg.variables.clone(),
                });
                self.package = Some(pkg);
                Ok(self.package.as_ref())
            }
            _ => {
                self.outcome = Some(Outcome::NothingConsented);
                Ok(None)
            }
        }
    }

    /// Deletes local derived data and, unless `keep_archives`, the original
    /// archives. Allowed on finalized sessions and on open ones (abandoned);
    /// running it again only reports what is left.
    pub fn purge_local(&mut self, keep_archives: bool) -> PurgeReport {
        let mut report = PurgeReport::default();
        let mut targets: Vec<PathBuf> = self.artifacts.derived.clone();
        if keep_archives {
            report.kept = self
                .artifacts
                .archives
                .iter()
                .map(|p| self.artifacts.resolve(p))
                .collect();
        } else {
            targets.extend(self.artifacts.archives.iter().cloned());
        }
        for p in targets {
            let path = self.artifacts.resolve(&p);
            let result = match std::fs::symlink_metadata(&path) {
                Err(_) => continue,
                Ok(m) if m.is_dir() => std::fs::remove_dir_all(&path),
                Ok(_) => std::fs::remove_file(&path),
            };
            match result {
                Ok(()) => report.deleted.push(path),
                Err(e) => report.survivors.push((path, e.to_string())),
            }
        }
        self.records.clear();
        self.state = SessionState::Purged;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{Provenance, Value, AFFECT_POSITIVE_SHARE, AT_HOME};
    use crate::types::ProviderId;

    const STUDY_VARIABLES: [&str; 2] = [AT_HOME, AFFECT_POSITIVE_SHARE];

    fn rec(at: i64, variable: &str) -> DerivedRecord {
        let value = if variable == AT_HOME {
            Value::Label("true".into())
        } else {
            Value::Number(0.5)
        };
        DerivedRecord {
            owner: Pseudonym::new("p1").unwrap(),
            at: Timestamp::from_epoch_ms(at),
            variable: variable.into(),
            value,
            provenance: Provenance {
                provider: ProviderId::GoogleTakeout,
                transformer_id: "x".into(),
                transformer_version: "1".into(),
                confidence: 1.0,
            },
        }
    }

    fn store() -> Vec<DerivedRecord> {
        let mut v: Vec<_> = (0..500).map(|i| rec(i * 1000, AT_HOME)).collect();
        v.extend((0..30).map(|i| rec(i * 86_400_000, AFFECT_POSITIVE_SHARE)));
        v
    }

    fn session(records: Vec<DerivedRecord>) -> (tempfile::TempDir, ConsentSession) {
        let dir = tempfile::tempdir().unwrap();
        let s = ConsentSession::start(
            "s1",
            records,
            &VariableRegistry::builtin(),
            LocalArtifacts::new(dir.path()),
        )
        .unwrap();
        (dir, s)
    }

    #[test]
    fn start_lists_variables_pending() {
        let (_d, s) = session(store());
        let vars = s.variables();
        assert_eq!(vars.len(), 2);
        assert_eq!(
            vars.iter().find(|v| v.name == AT_HOME).unwrap().records,
            500
        );
        assert_eq!(
            vars.iter()
                .find(|v| v.name == AFFECT_POSITIVE_SHARE)
                .unwrap()
                .records,
            30
        );
        assert!(vars.iter().all(|v| v.decision == Decision::Pending));
    }

    #[test]
    fn empty_store_has_nothing_to_share() {
        let (_d, mut s) = session(vec![]);
        assert!(s.nothing_to_share());
        assert_eq!(s.finalize(Timestamp::from_epoch_ms(0)).unwrap(), None);
        assert_eq!(s.outcome(), Some(&Outcome::NothingConsented));
    }

    #[test]
    fn preview_pages_and_illustration() {
        let (_d, mut s) = session(store());
        assert!(s.variables().iter().all(|v| !v.previewed));
        let p = s.preview(AT_HOME, 1, 200).unwrap();
        assert_eq!(p.rows.len(), 200);
        assert_eq!(p.total_pages, 3);
        assert_eq!(p.rows[0].timestamp_iso, "1970-01-01T00:03:20.000Z");
        assert_eq!(
            s.preview("nope", 0, 10),
            Err(ConsentError::NotFound("nope".into()))
        );
        assert!(
            s.variables()
                .iter()
                .find(|v| v.name == AT_HOME)
                .unwrap()
                .previewed
        );
    }

    #[test]
    fn overwrite_then_finalize_then_immutable() {
        let (_d, mut s) = session(store());
        s.record_decision(AT_HOME, Decision::Rejected).unwrap();
        s.record_decision(AT_HOME, Decision::Approved).unwrap();
        assert!(matches!(
            s.finalize(Timestamp::from_epoch_ms(0)),
            Err(ConsentError::Incomplete(_))
        ));
        s.record_decision(AFFECT_POSITIVE_SHARE, Decision::Rejected)
            .unwrap();
        let pkg = s.finalize(Timestamp::from_epoch_ms(0)).unwrap().unwrap();
        assert_eq!(pkg.variables, vec![(AT_HOME.to_string(), 500)]);
        assert_eq!(
            s.record_decision(AT_HOME, Decision::Rejected).unwrap_err(),
            ConsentError::Immutable(SessionState::Finalized)
        );
    }

    #[test]
    fn all_approved_keeps_every_record() {
        let (_d, mut s) = session(store());
        for v in STUDY_VARIABLES {
            s.record_decision(v, Decision::Approved).unwrap();
        }
        assert_eq!(
            s.finalize(Timestamp::from_epoch_ms(0))
                .unwrap()
                .unwrap()
                .records
                .len(),
            530
        );
    }

    #[test]
    fn purge_respects_keep_archives_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("store.csv"), "x").unwrap();
        std::fs::create_dir(dir.path().join("extracted")).unwrap();
        std::fs::write(dir.path().join("extracted/a.json"), "{}").unwrap();
        std::fs::write(dir.path().join("ddp.zip"), "zip").unwrap();
        let artifacts = LocalArtifacts {
            workdir: dir.path().to_path_buf(),
            derived: vec!["store.csv".into(), "extracted".into()],
            archives: vec!["ddp.zip".into()],
        };
        let mut s =
            ConsentSession::start("s1", store(), &VariableRegistry::builtin(), artifacts).unwrap();
        let r = s.purge_local(true);
        assert_eq!(r.deleted.len(), 2);
        assert!(!dir.path().join("store.csv").exists());
        assert!(dir.path().join("ddp.zip").exists());
        assert_eq!(s.state(), SessionState::Purged);
        let again = s.purge_local(true);
        assert!(again.nothing_to_delete());
    }

    #[test]
    fn paths_outside_workdir_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let artifacts = LocalArtifacts {
            workdir: dir.path().to_path_buf(),
            derived: vec!["../elsewhere.csv".into()],
            archives: vec![],
        };
        assert!(matches!(
            ConsentSession::start("s1", vec![], &VariableRegistry::builtin(), artifacts),
            Err(ConsentError::OutsideWorkdir(_))
        ));
    }
}
