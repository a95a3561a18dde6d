use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TransformError;
use crate::archive::{image_dimensions, sniff};
use crate::errorframe::ConfusionMatrix;
use crate::parsers::{MediaRecord, MediaType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionLabel {
    Positive,
    Negative,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 3] = [
        EmotionLabel::Positive,
        EmotionLabel::Negative,
        EmotionLabel::Neutral,
    ];

    /// Row/column of the label in a three-class confusion matrix.
    pub fn index(&self) -> usize {
        match self {
            EmotionLabel::Positive => 0,
            EmotionLabel::Negative => 1,
            EmotionLabel::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EmotionLabel::Positive => "positive",
            EmotionLabel::Negative => "negative",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceEmotion {
    pub label: EmotionLabel,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("media bytes are unreadable")]
    Unreadable,
    #[error("{0}")]
    Model(String),
}

/// Face detection followed by emotion classification, as a black box.
pub trait EmotionClassifier: Send + Sync {
    fn id(&self) -> &str;

    fn classify(&self, file_name: &str, bytes: &[u8]) -> Result<Vec<FaceEmotion>, ClassifierError>;
}

/// Deterministic stand-in for a vision model.
///
/// Looks only at the file name: `happy` gives one positive face (1.0), `sad`
/// one negative face (1.0), `face` one neutral face (0.6), anything else no
/// faces. The face spans the whole image when its size can be read.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClassifier;

impl EmotionClassifier for MockClassifier {
    fn id(&self) -> &str {
        "mock-filename"
    }

    fn classify(&self, file_name: &str, bytes: &[u8]) -> Result<Vec<FaceEmotion>, ClassifierError> {
        if !sniff(bytes).media_kind().is_media() {
            return Err(ClassifierError::Unreadable);
        }
        let name = file_name.to_ascii_lowercase();
        let (label, confidence) = if name.contains("happy") {
            (EmotionLabel::Positive, 1.0)
        } else if name.contains("sad") {
            (EmotionLabel::Negative, 1.0)
        } else if name.contains("face") {
            (EmotionLabel::Neutral, 0.6)
        } else {
            return Ok(Vec::new());
        };
        let (width, height) = image_dimensions(bytes).unwrap_or((0, 0));
        Ok(vec![FaceEmotion {
            label,
            confidence,
            bbox: BoundingBox {
                x: 0,
                y: 0,
                width,
                height,
            },
        }])
    }
}

/// Wraps a classifier and relabels each face by sampling from the column of a
/// three-class confusion matrix that belongs to the wrapped label.
///
/// Draws are keyed on `(seed, file name, face index)`, so results do not
/// depend on the order in which media are processed.
#[derive(Debug, Clone)]
pub struct NoisyClassifier<C> {
    inner: C,
    matrix: ConfusionMatrix,
    seed: u64,
    id: String,
}

impl<C: EmotionClassifier> NoisyClassifier<C> {
    pub fn new(inner: C, matrix: ConfusionMatrix, seed: u64) -> Result<Self, TransformError> {
        if matrix.k() != EmotionLabel::ALL.len() {
            return Err(TransformError::InvalidConfig(format!(
                "noisy classifier needs a 3x3 matrix, got {}x{}",
                matrix.k(),
                matrix.k()
            )));
        }
        let id = format!("noisy({})", inner.id());
        Ok(NoisyClassifier {
            inner,
            matrix,
            seed,
            id,
        })
    }

    fn rng_for(&self, file_name: &str, face: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(file_name.as_bytes());
        h.update((face as u64).to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }
}

impl<C: EmotionClassifier> EmotionClassifier for NoisyClassifier<C> {
    fn id(&self) -> &str {
        &self.id
    }

    fn classify(&self, file_name: &str, bytes: &[u8]) -> Result<Vec<FaceEmotion>, ClassifierError> {
        let mut faces = self.inner.classify(file_name, bytes)?;
        for (n, face) in faces.iter_mut().enumerate() {
            let truth = face.label.index();
            let u: f64 = self.rng_for(file_name, n).gen();
            let mut acc = 0.0;
            let mut predicted = truth;
            for i in 0..self.matrix.k() {
                acc += self.matrix.get(i, truth);
                if u < acc {
                    predicted = i;
                    break;
                }
            }
            face.label = EmotionLabel::from_index(predicted).unwrap_or(face.label);
        }
        Ok(faces)
    }
}

/// Runs `model` on one photo or video.
pub fn classify_emotion(
    media: &MediaRecord,
    bytes: &[u8],
    model: &dyn EmotionClassifier,
) -> Result<Vec<FaceEmotion>, TransformError> {
    if media.kind == MediaType::TextPost {
        return Err(TransformError::NotClassifiable {
            path: media.file.relative_path.clone(),
            kind: media.kind,
        });
    }
    model
        .classify(media.file.file_name(), bytes)
        .map_err(|source| TransformError::Classifier {
            path: media.file.relative_path.clone(),
            source,
        })
}
