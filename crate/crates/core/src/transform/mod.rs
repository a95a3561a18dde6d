//! Local transformation of raw records into derived research variables.
//!
//! A [`DerivedRecord`] can only be built through a [`VariableRegistry`], which
//! restricts categorical values to declared levels and numeric values to a
//! declared range. That is what keeps raw captions, coordinates and media
//! bytes out of anything that leaves the device.

mod affect;
mod denseness;
mod emotion;
mod home;
mod store;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timestamp::Timestamp;
use crate::types::{ProviderId, Pseudonym};

pub use affect::{aggregate_affect, ClassifiedMedia, DAY_MS};
pub use denseness::{
    denseness_check, DensenessReport, DensenessRequirement, GapInterval, SeriesDenseness,
};
pub use emotion::{
    classify_emotion, BoundingBox, ClassifierError, EmotionClassifier, EmotionLabel, FaceEmotion,
    MockClassifier, NoisyClassifier,
};
pub use home::{classify_at_home, haversine_m, infer_home, HomeConfig, HomeLocation};
pub use store::{read_records_csv, sort_store, write_records_csv, RECORDS_CSV_HEADER};

pub const AT_HOME: &str = "at_home";
pub const AFFECT_POSITIVE_SHARE: &str = "affect_positive_share";

pub const HOME_GEOFENCE: &str = "home-geofence";
pub const FACE_AFFECT: &str = "face-affect";
pub const TRANSFORMER_VERSION: &str = "1";

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("variable `{0}` is not in the study's variable registry")]
    UnknownVariable(String),
    #[error("value `{value}` is not allowed for variable `{variable}`")]
    InvalidValue { variable: String, value: String },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("no night-time pings; home location cannot be inferred")]
    NoHome,
    #[error("empty ping list")]
    NoPings,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("media `{path}` is a {kind:?}, the emotion classifier needs a photo or video")]
    NotClassifiable {
        path: String,
        kind: crate::parsers::MediaType,
    },
    #[error("classifier failed on `{path}`: {source}")]
    Classifier {
        path: String,
        #[source]
        source: ClassifierError,
    },
    #[error("malformed derived-record CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Label(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Label(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: ProviderId,
    pub transformer_id: String,
    pub transformer_version: String,
    pub confidence: f64,
}

/// One derived observation: the unit that flows from the device to the researcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRecord {
    pub owner: Pseudonym,
    pub at: Timestamp,
    pub variable: String,
    pub value: Value,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableKind {
    Categorical { levels: Vec<String> },
    Numeric { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDef {
    pub name: String,
    pub description: String,
    pub kind: VariableKind,
    pub transformer: String,
}

/// The variables a study declares, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableRegistry {
    variables: BTreeMap<String, VariableDef>,
}

impl VariableRegistry {
    pub fn new(defs: impl IntoIterator<Item = VariableDef>) -> Self {
        VariableRegistry {
            variables: defs.into_iter().map(|d| (d.name.clone(), d)).collect(),
        }
    }

    /// `at_home` and `affect_positive_share` bound to the shipped transformers.
    pub fn builtin() -> Self {
        Self::new([
            builtin_variable(AT_HOME).unwrap(),
            builtin_variable(AFFECT_POSITIVE_SHARE).unwrap(),
        ])
    }

    pub fn get(&self, name: &str) -> Option<&VariableDef> {
        self.variables.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariableDef> {
        self.variables.values()
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variable_for_transformer(&self, transformer: &str) -> Option<&VariableDef> {
        self.variables
            .values()
            .find(|d| d.transformer == transformer)
    }

    pub fn check_value(&self, variable: &str, value: &Value) -> Result<(), TransformError> {
        let def = self
            .get(variable)
            .ok_or_else(|| TransformError::UnknownVariable(variable.to_string()))?;
        let ok = match (&def.kind, value) {
            (VariableKind::Categorical { levels }, Value::Label(l)) => {
                levels.iter().any(|x| x == l)
            }
            (VariableKind::Numeric { min, max }, Value::Number(x)) => {
                x.is_finite() && *x >= *min && *x <= *max
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(TransformError::InvalidValue {
                variable: variable.to_string(),
                value: value.to_string(),
            })
        }
    }

    /// Builds a record after checking it against the registry.
    pub fn record(
        &self,
        owner: Pseudonym,
        at: Timestamp,
        variable: &str,
        value: Value,
        provenance: Provenance,
    ) -> Result<DerivedRecord, TransformError> {
        self.check_value(variable, &value)?;
        if !(0.0..=1.0).contains(&provenance.confidence) {
            return Err(TransformError::InvalidConfidence(provenance.confidence));
        }
        Ok(DerivedRecord {
            owner,
            at,
            variable: variable.to_string(),
            value,
            provenance,
        })
    }
}

/// Definition of a variable produced by one of the shipped transformers.
pub fn builtin_variable(name: &str) -> Option<VariableDef> {
    match name {
        AT_HOME => Some(VariableDef {
            name: AT_HOME.to_string(),
            description: "Whether a location ping lies within the inferred home radius".to_string(),
            kind: VariableKind::Categorical {
                levels: vec!["false".to_string(), "true".to_string()],
            },
            transformer: HOME_GEOFENCE.to_string(),
        }),
        AFFECT_POSITIVE_SHARE => Some(VariableDef {
            name: AFFECT_POSITIVE_SHARE.to_string(),
            description: "Share of detected faces classified as positive per time bin".to_string(),
            kind: VariableKind::Numeric { min: 0.0, max: 1.0 },
            transformer: FACE_AFFECT.to_string(),
        }),
        _ => None,
    }
}

/// Provider a shipped transformer reads from.
pub fn transformer_provider(transformer: &str) -> Option<ProviderId> {
    match transformer {
        HOME_GEOFENCE => Some(ProviderId::GoogleTakeout),
        FACE_AFFECT => Some(ProviderId::Instagram),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformCounts {
    pub processed: usize,
    pub failed: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformReport {
    pub transformers: BTreeMap<String, TransformCounts>,
    /// Items a transformer could not process (unreadable media, missing home).
    pub algorithmic_errors: Vec<String>,
}

impl TransformReport {
    pub fn counts_mut(&mut self, transformer: &str) -> &mut TransformCounts {
        self.transformers
            .entry(transformer.to_string())
            .or_default()
    }

    pub fn merge(&mut self, other: TransformReport) {
        for (k, v) in other.transformers {
            let c = self.counts_mut(&k);
            c.processed += v.processed;
            c.failed += v.failed;
            c.flagged += v.flagged;
        }
        self.algorithmic_errors.extend(other.algorithmic_errors);
    }
}
