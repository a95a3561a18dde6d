use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::timestamp::Timestamp;
use crate::transform::{read_records_csv, write_records_csv, DerivedRecord};
use crate::types::Pseudonym;

pub const RECORDS_MEMBER: &str = "records.csv";
pub const MANIFEST_MEMBER: &str = "manifest.txt";
pub const CHECKSUM_MEMBER: &str = "checksum.txt";

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("package {name} failed verification: {reason}")]
    Tampered { name: String, reason: String },
    #[error("cannot read package {name}: {message}")]
    Io { name: String, message: String },
    #[error("cannot build package: {0}")]
    Build(String),
}

/// Consented derived records of one respondent, ready to leave the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonationPackage {
    pub study_id: String,
    pub owner: Pseudonym,
    /// When the package was built. Not part of the serialized bytes.
    pub created: Timestamp,
    /// Included variables with record counts, sorted by name.
    pub variables: Vec<(String, usize)>,
    /// Sorted by (variable, time).
    pub records: Vec<DerivedRecord>,
}

fn canonical_order(records: &mut [DerivedRecord]) {
    records.sort_by(|a, b| {
        a.variable
            .cmp(&b.variable)
            .then(a.at.epoch_ms.cmp(&b.at.epoch_ms))
            .then_with(|| {
                a.provenance
                    .transformer_id
                    .cmp(&b.provenance.transformer_id)
            })
    });
}

impl DonationPackage {
    pub fn new(
        study_id: &str,
        owner: Pseudonym,
        created: Timestamp,
        mut records: Vec<DerivedRecord>,
    ) -> Self {
        canonical_order(&mut records);
        let mut variables: Vec<(String, usize)> = Vec::new();
        for r in &records {
            match variables.last_mut() {
                Some((v, n)) if *v == r.variable => *n += 1,
                _ => variables.push((r.variable.clone(), 1)),
            }
        }
        DonationPackage {
            study_id: study_id.to_string(),
            owner,
            created,
            variables,
            records,
        }
    }

    pub fn records_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records_csv(&self.records, &mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn manifest_text(&self) -> String {
        let mut out = format!("study_id={}\npseudonym={}\n", self.study_id, self.owner);
        for (v, n) in &self.variables {
            out.push_str(&format!("variable={v},{n}\n"));
        }
        out
    }

    /// Hex SHA-256 over `records.csv` followed by `manifest.txt`.
    pub fn checksum(&self) -> String {
        digest(&self.records_csv(), self.manifest_text().as_bytes())
    }

    /// Deterministic zip: stored members, fixed timestamps, fixed order.
    pub fn to_zip_bytes(&self) -> Vec<u8> {
        let records = self.records_csv();
        let manifest = self.manifest_text();
        let checksum = format!("{}\n", digest(&records, manifest.as_bytes()));
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Stored)
            .last_modified_time(DateTime::default())
            .unix_permissions(0o644);
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        for (name, bytes) in [
            (RECORDS_MEMBER, records.as_slice()),
            (MANIFEST_MEMBER, manifest.as_bytes()),
            (CHECKSUM_MEMBER, checksum.as_bytes()),
        ] {
            zip.start_file(name, opts).expect("in-memory zip");
            zip.write_all(bytes).expect("in-memory zip");
        }
        zip.finish().expect("in-memory zip").into_inner()
    }

    pub fn write_to(&self, path: &Path) -> Result<(), PackageError> {
        std::fs::write(path, self.to_zip_bytes()).map_err(|e| PackageError::Io {
            name: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Reads and verifies a package file.
    pub fn read(path: &Path) -> Result<DonationPackage, PackageError> {
        let name = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|e| PackageError::Io {
            name: name.clone(),
            message: e.to_string(),
        })?;
        verify_package_bytes(&name, &bytes)
    }
}

fn digest(records: &[u8], manifest: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(records);
    h.update(manifest);
    hex::encode(h.finalize())
}

/// Checks a package archive and returns its content.
///
/// Any damage, whether to the zip structure, the checksum or the agreement
/// between manifest and records, is reported as tampering.
pub fn verify_package_bytes(name: &str, bytes: &[u8]) -> Result<DonationPackage, PackageError> {
    let tampered = |reason: String| PackageError::Tampered {
        name: name.to_string(),
        reason,
    };
    let mut zip = ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| tampered(format!("not a readable zip: {e}")))?;
    let mut member = |m: &str| -> Result<Vec<u8>, PackageError> {
        let mut f = zip.by_name(m).map_err(|e| tampered(format!("{m}: {e}")))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)
            .map_err(|e| tampered(format!("{m}: {e}")))?;
        Ok(buf)
    };
    let records = member(RECORDS_MEMBER)?;
    let manifest = member(MANIFEST_MEMBER)?;
    let stated = member(CHECKSUM_MEMBER)?;
    let stated = String::from_utf8_lossy(&stated).trim().to_string();
    let actual = digest(&records, &manifest);
    if stated != actual {
        return Err(tampered(format!(
            "checksum mismatch: stated {stated}, computed {actual}"
        )));
    }

    let manifest =
        String::from_utf8(manifest).map_err(|_| tampered("manifest is not UTF-8".into()))?;
    let mut study_id = None;
    let mut owner = None;
    let mut variables = Vec::new();
    for line in manifest.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| tampered(format!("manifest line `{line}`")))?;
        match key {
            "study_id" => study_id = Some(value.to_string()),
            "pseudonym" => {
                owner = Some(Pseudonym::new(value).map_err(|e| tampered(e.to_string()))?)
            }
            "variable" => {
                let (v, n) = value
                    .rsplit_once(',')
                    .and_then(|(v, n)| Some((v.to_string(), n.parse::<usize>().ok()?)))
                    .ok_or_else(|| tampered(format!("manifest line `{line}`")))?;
                variables.push((v, n));
            }
            _ => return Err(tampered(format!("unknown manifest key `{key}`"))),
        }
    }
    let (Some(study_id), Some(owner)) = (study_id, owner) else {
        return Err(tampered("manifest lacks study_id or pseudonym".into()));
    };
    let records = read_records_csv(records.as_slice()).map_err(|e| tampered(e.to_string()))?;
    if records.iter().any(|r| r.owner != owner) {
        return Err(tampered("records belong to another pseudonym".into()));
    }
    let created = records
        .iter()
        .map(|r| r.at)
        .max()
        .unwrap_or(Timestamp::from_epoch_ms(0));
    let pkg = DonationPackage::new(&study_id, owner, created, records);
    if pkg.variables != variables {
        return Err(tampered("manifest does not match records".into()));
    }
    Ok(pkg)
}
