use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClassifierConfig, StudyConfig};
use crate::archive::{detect_provider, open_zip, read_member, DdpArchive};
use crate::parsers::{
    parse_google_location, parse_instagram, LocationRecord, MediaRecord, MediaType, ParseReport,
};
use crate::transform::{
    aggregate_affect, classify_at_home, classify_emotion, denseness_check, infer_home, sort_store,
    ClassifiedMedia, DensenessReport, DerivedRecord, EmotionClassifier, HomeLocation,
    MockClassifier, NoisyClassifier, TransformReport, AFFECT_POSITIVE_SHARE, AT_HOME, FACE_AFFECT,
    HOME_GEOFENCE,
};
use crate::types::{ProviderId, Pseudonym};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Detect,
    Manifest,
    Parse,
    Transform,
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStage::Detect => "detect",
            PipelineStage::Manifest => "manifest",
            PipelineStage::Parse => "parse",
            PipelineStage::Transform => "transform",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed for {archive}: {message}")]
pub struct StageError {
    pub stage: PipelineStage,
    pub archive: String,
    pub message: String,
}

fn stage_err(stage: PipelineStage, archive: &Path, message: impl ToString) -> StageError {
    StageError {
        stage,
        archive: archive.display().to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Refuse archives whose detected schema differs.
    pub expected_schema: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub path: String,
    pub provider: ProviderId,
    pub schema_version: Option<String>,
    pub root: String,
    pub entries: usize,
    /// Image and video members found by content sniffing.
    pub media_entries: usize,
    /// Photo and video records the parser emitted.
    pub media_parsed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedArchives {
    pub owner: Pseudonym,
    pub archives: Vec<ArchiveSummary>,
    pub reports: Vec<ParseReport>,
    /// With the index of the archive each record came from.
    pub media: Vec<(usize, MediaRecord)>,
    pub pings: Vec<LocationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub owner: Pseudonym,
    pub archives: Vec<ArchiveSummary>,
    pub parse: Vec<ParseReport>,
    pub transform: TransformReport,
    pub home: Option<HomeLocation>,
    pub denseness: Option<DensenessReport>,
    pub records_by_variable: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub records: Vec<DerivedRecord>,
}

fn profile_username(archive: &DdpArchive) -> Option<String> {
    let bytes = archive
        .read_member(&format!("{}profile.json", archive.root))
        .ok()?;
    let v: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    v.get("username")?.as_str().map(str::to_string)
}

/// Detect, manifest and parse every archive, in the given order.
pub fn parse_archives(
    paths: &[PathBuf],
    owner: &Pseudonym,
    options: &PipelineOptions,
) -> Result<ParsedArchives, StageError> {
    let mut out = ParsedArchives {
        owner: owner.clone(),
        archives: Vec::new(),
        reports: Vec::new(),
        media: Vec::new(),
        pings: Vec::new(),
    };
    for (i, path) in paths.iter().enumerate() {
        let detection =
            detect_provider(path).map_err(|e| stage_err(PipelineStage::Detect, path, e))?;
        if detection.provider == ProviderId::Unknown {
            return Err(stage_err(
                PipelineStage::Detect,
                path,
                "no supported provider signature found",
            ));
        }
        if let Some(expected) = &options.expected_schema {
            if detection.schema_version.as_deref() != Some(expected.as_str()) {
                return Err(stage_err(
                    PipelineStage::Detect,
                    path,
                    format!(
                        "schema {:?} does not match requested {expected}",
                        detection.schema_version
                    ),
                ));
            }
        }
        let archive =
            DdpArchive::open(path).map_err(|e| stage_err(PipelineStage::Manifest, path, e))?;
        let media_entries = archive
            .manifest
            .entries
            .iter()
            .filter(|e| e.media_kind.is_media())
            .count();
        let mut media_parsed = 0;
        let report = match archive.provider {
            ProviderId::Instagram => {
                if let Some(user) = profile_username(&archive) {
                    owner
                        .ensure_distinct_from([user.as_str()])
                        .map_err(|e| stage_err(PipelineStage::Parse, path, e))?;
                }
                let (records, report) = parse_instagram(&archive, owner)
                    .map_err(|e| stage_err(PipelineStage::Parse, path, e))?;
                for r in records {
                    if r.kind != MediaType::TextPost {
                        media_parsed += 1;
                    }
                    out.media.push((i, r));
                }
                report
            }
            ProviderId::GoogleTakeout => {
                let (pings, report) = parse_google_location(&archive, owner)
                    .map_err(|e| stage_err(PipelineStage::Parse, path, e))?;
                out.pings.extend(pings);
                report
            }
            ProviderId::Unknown => unreachable!("rejected at detection"),
        };
        out.reports.push(report);
        out.archives.push(ArchiveSummary {
            path: path.display().to_string(),
            provider: archive.provider,
            schema_version: archive.schema_version.clone(),
            root: archive.root.clone(),
            entries: archive.manifest.entries.len(),
            media_entries,
            media_parsed,
        });
    }
    Ok(out)
}

fn classifier(config: &StudyConfig) -> Box<dyn EmotionClassifier> {
    match (&config.affect.classifier, config.classifier_matrix()) {
        (ClassifierConfig::Noisy { seed, .. }, Ok(Some(m))) => {
            Box::new(NoisyClassifier::new(MockClassifier, m, *seed).expect("validated 3x3 matrix"))
        }
        _ => Box::new(MockClassifier),
    }
}

/// Runs the transformers bound to registered variables over parsed data.
pub fn transform_parsed(
    parsed: &ParsedArchives,
    paths: &[PathBuf],
    config: &StudyConfig,
) -> Result<PipelineOutput, StageError> {
    let registry = config.registry();
    let bound = |variable: &str, transformer: &str| {
        registry
            .get(variable)
            .is_some_and(|d| d.transformer == transformer)
    };
    let mut report = TransformReport::default();
    let mut records = Vec::new();
    let mut home = None;

    if bound(AT_HOME, HOME_GEOFENCE) && !parsed.pings.is_empty() {
        let counts = report.counts_mut(HOME_GEOFENCE);
        match infer_home(&parsed.pings, &config.home) {
            Ok(h) => {
                for p in &parsed.pings {
                    let r = classify_at_home(p, &h, &registry).map_err(|e| StageError {
                        stage: PipelineStage::Transform,
                        archive: "location pings".into(),
                        message: e.to_string(),
                    })?;
                    records.push(r);
                }
                counts.processed += parsed.pings.len();
                if h.low_confidence {
                    counts.flagged += parsed.pings.len();
                }
                home = Some(h);
            }
            Err(e) => {
                counts.failed += parsed.pings.len();
                report
                    .algorithmic_errors
                    .push(format!("{HOME_GEOFENCE}: {e}"));
            }
        }
    }

    let photos: Vec<&(usize, MediaRecord)> = parsed
        .media
        .iter()
        .filter(|(_, m)| m.kind != MediaType::TextPost)
        .collect();
    if bound(AFFECT_POSITIVE_SHARE, FACE_AFFECT) && !photos.is_empty() {
        let model = classifier(config);
        let mut classified = Vec::with_capacity(photos.len());
        let mut zips = BTreeMap::new();
        for (archive, m) in photos {
            let path = &paths[*archive];
            if !zips.contains_key(archive) {
                let z = open_zip(path).map_err(|e| stage_err(PipelineStage::Transform, path, e))?;
                zips.insert(*archive, z);
            }
            let zip = zips.get_mut(archive).expect("inserted above");
            let bytes = read_member(zip, path, &m.file.relative_path)
                .map_err(|e| stage_err(PipelineStage::Transform, path, e))?;
            let counts = report.counts_mut(FACE_AFFECT);
            if m.is_flagged() {
                counts.flagged += 1;
            }
            match classify_emotion(m, &bytes, model.as_ref()) {
                Ok(faces) => {
                    counts.processed += 1;
                    classified.push(ClassifiedMedia {
                        owner: m.owner.clone(),
                        at: m.taken_at,
                        faces,
                    });
                }
                Err(e) => {
                    counts.failed += 1;
                    report.algorithmic_errors.push(e.to_string());
                }
            }
        }
        let affect =
            aggregate_affect(&classified, config.affect.bin_ms, &registry).map_err(|e| {
                StageError {
                    stage: PipelineStage::Transform,
                    archive: "media".into(),
                    message: e.to_string(),
                }
            })?;
        records.extend(affect);
    }

    sort_store(&mut records);
    let denseness = match config.denseness {
        Some(req) => Some(denseness_check(&records, req).map_err(|e| StageError {
            stage: PipelineStage::Transform,
            archive: "derived store".into(),
            message: e.to_string(),
        })?),
        None => None,
    };
    let mut records_by_variable = BTreeMap::new();
    for r in &records {
        *records_by_variable.entry(r.variable.clone()).or_insert(0) += 1;
    }
    Ok(PipelineOutput {
        report: PipelineReport {
            owner: parsed.owner.clone(),
            archives: parsed.archives.clone(),
            parse: parsed.reports.clone(),
            transform: report,
            home,
            denseness,
            records_by_variable,
        },
        records,
    })
}

/// Detect, manifest, parse and transform, stopping at the first hard failure.
pub fn run_pipeline(
    paths: &[PathBuf],
    config: &StudyConfig,
    owner: &Pseudonym,
    options: &PipelineOptions,
) -> Result<PipelineOutput, StageError> {
    let parsed = parse_archives(paths, owner, options)?;
    transform_parsed(&parsed, paths, config)
}
