//! Study-level orchestration: configuration, the respondent-side pipeline,
//! researcher-side ingestion and the quality checklist.

mod checklist;
mod ingest;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::errorframe::{ConfusionMatrix, FunnelConfig};
use crate::fixture::FixtureSpec;
use crate::integrate::LinkSpec;
use crate::timestamp::parse_timestamp;
use crate::transform::{
    builtin_variable, transformer_provider, DensenessRequirement, HomeConfig, VariableDef,
    VariableRegistry, DAY_MS,
};
use crate::types::ProviderId;

pub use checklist::{
    report_checklist, ChecklistItem, ChecklistReport, ConsentEvidence, Evidence, EvidenceFile,
    FunnelEvidence, ItemMode, ItemStatus, Side, CHECKLIST_ITEMS,
};
pub use ingest::{ingest, link_stores, IngestError, IngestOutput, IngestReport, PackageSummary};
pub use pipeline::{
    parse_archives, run_pipeline, transform_parsed, ArchiveSummary, ParsedArchives,
    PipelineOptions, PipelineOutput, PipelineReport, PipelineStage, StageError,
};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read study config {path}: {message}")]
    Io { path: String, message: String },
    #[error("study config: {0}")]
    Invalid(String),
}

/// A registered variable: a shipped one by name, or a full definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariableBinding {
    Builtin(String),
    Defined(VariableDef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub window_start: String,
    pub window_end: String,
    /// No default: the right width depends on the research question.
    pub bin_ms: i64,
    #[serde(default)]
    pub tolerance_ms: i64,
    #[serde(default = "yes")]
    pub aggregate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    Mock,
    /// Mock wrapped in a 3x3 confusion matrix (rows predicted, columns true;
    /// order positive, negative, neutral).
    Noisy {
        rows: Vec<Vec<f64>>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffectConfig {
    pub bin_ms: i64,
    pub classifier: ClassifierConfig,
}

impl Default for AffectConfig {
    fn default() -> Self {
        AffectConfig {
            bin_ms: DAY_MS,
            classifier: ClassifierConfig::Mock,
        }
    }
}

/// Accuracy of a transformer as measured on some labelled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracyDeclaration {
    pub accuracy: f64,
    pub evaluated_on: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub spec: FixtureSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecklistMeta {
    pub constructs: Vec<String>,
    pub target_population: String,
    pub frame_description: String,
    /// Platforms the study collects packages from.
    pub data_controllers: Vec<ProviderId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study_id: String,
    pub variables: Vec<VariableBinding>,
    pub link: LinkConfig,
    #[serde(default)]
    pub home: HomeConfig,
    #[serde(default)]
    pub affect: AffectConfig,
    #[serde(default)]
    pub denseness: Option<DensenessRequirement>,
    /// Keyed by transformer id.
    #[serde(default)]
    pub accuracy: BTreeMap<String, AccuracyDeclaration>,
    #[serde(default)]
    pub funnel: Option<FunnelConfig>,
    #[serde(default)]
    pub fixtures: Vec<FixtureEntry>,
    #[serde(default)]
    pub checklist: ChecklistMeta,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<StudyConfig, ConfigError> {
        let config: StudyConfig =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<StudyConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        StudyConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.study_id.is_empty() || self.study_id.chars().any(char::is_whitespace) {
            return invalid(format!(
                "study_id `{}` must be non-empty without whitespace",
                self.study_id
            ));
        }
        if self.variables.is_empty() {
            return invalid("no variables registered".into());
        }
        let mut names = BTreeSet::new();
        for def in self.variable_defs()? {
            if !names.insert(def.name.clone()) {
                return invalid(format!("variable `{}` registered twice", def.name));
            }
            if def.transformer.is_empty() {
                return invalid(format!("variable `{}` has no transformer", def.name));
            }
            // Shipped transformers emit a fixed variable name and value type.
            if transformer_provider(&def.transformer).is_some() {
                let shipped =
                    builtin_variable(&def.name).filter(|b| b.transformer == def.transformer);
                match shipped {
                    Some(b) if b.kind == def.kind => {}
                    _ => {
                        return invalid(format!(
                            "transformer `{}` cannot produce variable `{}` as declared",
                            def.transformer, def.name
                        ))
                    }
                }
            }
        }
        for (t, a) in &self.accuracy {
            if !(0.0..=1.0).contains(&a.accuracy) {
                return invalid(format!(
                    "accuracy of `{t}` is {} (outside [0, 1])",
                    a.accuracy
                ));
            }
        }
        self.link_spec()?;
        if self.affect.bin_ms <= 0 {
            return invalid("affect.bin_ms must be positive".into());
        }
        self.classifier_matrix()?;
        if let Some(d) = &self.denseness {
            if d.period_ms <= 0 || d.min_records == 0 {
                return invalid("denseness requirement must be positive".into());
            }
        }
        if let Some(f) = &self.funnel {
            f.validate()
                .map_err(|e| ConfigError::Invalid(format!("funnel: {e}")))?;
        }
        let mut fixture_names = BTreeSet::new();
        for f in &self.fixtures {
            if !fixture_names.insert(f.name.as_str()) {
                return invalid(format!("fixture `{}` declared twice", f.name));
            }
        }
        Ok(())
    }

    pub fn variable_defs(&self) -> Result<Vec<VariableDef>, ConfigError> {
        self.variables
            .iter()
            .map(|b| match b {
                VariableBinding::Builtin(name) => builtin_variable(name).ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "`{name}` is not a shipped variable; define it in full"
                    ))
                }),
                VariableBinding::Defined(def) => Ok(def.clone()),
            })
            .collect()
    }

    pub fn registry(&self) -> VariableRegistry {
        VariableRegistry::new(self.variable_defs().expect("validated config"))
    }

    pub fn link_spec(&self) -> Result<LinkSpec, ConfigError> {
        let ts = |field: &str, raw: &str| {
            parse_timestamp(raw, None)
                .map_err(|e| ConfigError::Invalid(format!("link.{field}: {e}")))
        };
        let spec = LinkSpec {
            tolerance_ms: self.link.tolerance_ms,
            bin_ms: self.link.bin_ms,
            window_start: ts("window_start", &self.link.window_start)?,
            window_end: ts("window_end", &self.link.window_end)?,
            aggregate: self.link.aggregate,
        };
        spec.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn classifier_matrix(&self) -> Result<Option<ConfusionMatrix>, ConfigError> {
        match &self.affect.classifier {
            ClassifierConfig::Mock => Ok(None),
            ClassifierConfig::Noisy { rows, .. } => {
                let m = ConfusionMatrix::from_rows(rows)
                    .map_err(|e| ConfigError::Invalid(format!("affect.classifier: {e}")))?;
                if m.k() != 3 {
                    return Err(ConfigError::Invalid(
                        "affect.classifier: noisy matrix must be 3x3".into(),
                    ));
                }
                Ok(Some(m))
            }
        }
    }

    /// Transformers bound to registered variables.
    pub fn transformers(&self) -> BTreeSet<String> {
        self.registry()
            .iter()
            .map(|d| d.transformer.clone())
            .collect()
    }
}
