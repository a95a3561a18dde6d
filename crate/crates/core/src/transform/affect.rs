use std::collections::BTreeMap;

use super::{
    DerivedRecord, EmotionLabel, FaceEmotion, Provenance, TransformError, Value, VariableRegistry,
    AFFECT_POSITIVE_SHARE, FACE_AFFECT, TRANSFORMER_VERSION,
};
use crate::timestamp::{SourceFormat, Timestamp};
use crate::types::{ProviderId, Pseudonym};

pub const DAY_MS: i64 = 86_400_000;

/// Faces found in one media item.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedMedia {
    pub owner: Pseudonym,
    pub at: Option<Timestamp>,
    pub faces: Vec<FaceEmotion>,
}

/// Share of positive faces per (owner, time bin).
///
/// Bins start at multiples of `bin_ms` since the epoch. A bin without any
/// detected face yields no record. Undated media are skipped. Confidence is
/// the mean face confidence in the bin.
pub fn aggregate_affect(
    media: &[ClassifiedMedia],
    bin_ms: i64,
    registry: &VariableRegistry,
) -> Result<Vec<DerivedRecord>, TransformError> {
    if bin_ms <= 0 {
        return Err(TransformError::InvalidConfig(format!(
            "bin width must be positive, got {bin_ms}"
        )));
    }
    #[derive(Default)]
    struct Tally {
        positive: usize,
        total: usize,
        confidence_sum: f64,
    }
    let mut bins: BTreeMap<(Pseudonym, i64), Tally> = BTreeMap::new();
    for m in media {
        let Some(at) = m.at else { continue };
        if m.faces.is_empty() {
            continue;
        }
        let start = at.epoch_ms.div_euclid(bin_ms) * bin_ms;
        let t = bins.entry((m.owner.clone(), start)).or_default();
        for f in &m.faces {
            t.total += 1;
            t.confidence_sum += f.confidence;
            if f.label == EmotionLabel::Positive {
                t.positive += 1;
            }
        }
    }
    bins.into_iter()
        .map(|((owner, start), t)| {
            registry.record(
                owner,
                Timestamp {
                    epoch_ms: start,
                    source_format: SourceFormat::EpochMs,
                },
                AFFECT_POSITIVE_SHARE,
                Value::Number(t.positive as f64 / t.total as f64),
                Provenance {
                    provider: ProviderId::Instagram,
                    transformer_id: FACE_AFFECT.to_string(),
                    transformer_version: TRANSFORMER_VERSION.to_string(),
                    confidence: (t.confidence_sum / t.total as f64).clamp(0.0, 1.0),
                },
            )
        })
        .collect()
}
