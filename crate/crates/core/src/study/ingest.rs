use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ConfigError, StudyConfig};
use crate::consent::{DonationPackage, PackageError};
use crate::integrate::{
    link, validate, LinkError, LinkReport, LinkedDataset, RecordSource, ValidationReport,
};
use crate::transform::DerivedRecord;
use crate::types::Pseudonym;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Package(#[from] PackageError),
    #[error("package {package} belongs to study `{found}`, expected `{expected}`")]
    WrongStudy {
        package: String,
        found: String,
        expected: String,
    },
    #[error("pseudonym {pseudonym} appears in packages {first} and {second}")]
    DuplicatePseudonym {
        pseudonym: Pseudonym,
        first: String,
        second: String,
    },
    #[error("{source_name} carries variable `{variable}`, which the study does not register")]
    UnregisteredVariable {
        source_name: String,
        variable: String,
    },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageSummary {
    pub path: String,
    pub pseudonym: Pseudonym,
    pub checksum: String,
    pub records: usize,
    pub variables: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub packages: Vec<PackageSummary>,
    pub link: LinkReport,
    pub validation: ValidationReport,
    /// Variables with at least one cell in the dataset.
    pub variables: Vec<String>,
    pub pseudonyms: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub dataset: LinkedDataset,
    pub report: IngestReport,
}

/// Verifies every package, then links and validates their records.
///
/// Records are regrouped into one source per platform so that the pairwise
/// match rates describe how well the platforms line up per person.
pub fn ingest(paths: &[PathBuf], config: &StudyConfig) -> Result<IngestOutput, IngestError> {
    let mut packages = Vec::with_capacity(paths.len());
    let mut seen: BTreeMap<Pseudonym, String> = BTreeMap::new();
    let mut by_provider: BTreeMap<&'static str, Vec<DerivedRecord>> = BTreeMap::new();
    for path in paths {
        let pkg = DonationPackage::read(path)?;
        let name = path.display().to_string();
        if pkg.study_id != config.study_id {
            return Err(IngestError::WrongStudy {
                package: name,
                found: pkg.study_id,
                expected: config.study_id.clone(),
            });
        }
        if let Some(first) = seen.insert(pkg.owner.clone(), name.clone()) {
            return Err(IngestError::DuplicatePseudonym {
                pseudonym: pkg.owner,
                first,
                second: name,
            });
        }
        packages.push(PackageSummary {
            path: name,
            pseudonym: pkg.owner.clone(),
            checksum: pkg.checksum(),
            records: pkg.records.len(),
            variables: pkg.variables.clone(),
        });
        for r in pkg.records {
            by_provider
                .entry(r.provenance.provider.as_str())
                .or_default()
                .push(r);
        }
    }
    let sources: Vec<RecordSource> = by_provider
        .into_iter()
        .map(|(name, records)| RecordSource::new(name, records))
        .collect();
    let mut out = link_stores(&sources, config)?;
    if paths.is_empty() {
        out.report
            .notes
            .push("no packages were supplied; the dataset is empty".into());
    }
    out.report.packages = packages;
    Ok(out)
}

/// Links already trusted record sources (derived stores, survey files).
pub fn link_stores(
    sources: &[RecordSource],
    config: &StudyConfig,
) -> Result<IngestOutput, IngestError> {
    let registry = config.registry();
    for s in sources {
        if let Some(r) = s
            .records
            .iter()
            .find(|r| registry.get(&r.variable).is_none())
        {
            return Err(IngestError::UnregisteredVariable {
                source_name: s.name.clone(),
                variable: r.variable.clone(),
            });
        }
    }
    let spec = config.link_spec()?;
    let (dataset, link_report) = link(sources, &spec)?;
    let validation = validate(&dataset, &spec);
    let pseudonyms = dataset.owners().len();
    Ok(IngestOutput {
        report: IngestReport {
            packages: Vec::new(),
            link: link_report,
            validation,
            variables: dataset.variables.clone(),
            pseudonyms,
            notes: Vec::new(),
        },
        dataset,
    })
}
