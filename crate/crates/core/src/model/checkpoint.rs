//! Versioned JSON checkpoints. Floats are written in shortest round-trip form
//! and parsed back exactly, so a reloaded model predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};
use crate::corpus::BioLabel;
use crate::taxonomy::class_labels;

pub const CHECKPOINT_FORMAT: &str = "compex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    bio_labels: Vec<String>,
    class_labels: Vec<String>,
    model: TrainedModel,
}

fn label_orders() -> (Vec<String>, Vec<String>) {
    (
        BioLabel::ALL.iter().map(|l| l.to_string()).collect(),
        class_labels().iter().map(|c| c.to_string()).collect(),
    )
}

pub fn checkpoint_to_string(model: &TrainedModel) -> String {
    let (bio_labels, class_labels) = label_orders();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        bio_labels,
        class_labels,
        model: model.clone(),
    };
    let mut s = serde_json::to_string(&file).expect("finite parameters serialize");
    s.push('\n');
    s
}

pub fn checkpoint_from_str(text: &str) -> Result<TrainedModel, ModelError> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(ModelError::BadCheckpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {}", file.version)));
    }
    let (bio, classes) = label_orders();
    if file.bio_labels != bio || file.class_labels != classes {
        return Err(ModelError::BadCheckpoint("label order differs from this build".into()));
    }
    let model = file.model;
    model.params.config.validate()?;
    for (name, m) in model.params.tensors() {
        if !m.is_finite() {
            return Err(ModelError::BadCheckpoint(format!("non-finite values in {name}")));
        }
    }
    TrainedModel::new(model.vocab, model.params)
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_string(model))
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, HeadKind, ModelParams, Vocab};

    fn model(head: HeadKind) -> TrainedModel {
        let vocab = Vocab::from_keys(["it", "sikkerhed", "kok"]);
        let cfg = EncoderConfig { vocab_size: vocab.len(), dim: 8, heads: 2, window: 6 };
        TrainedModel::new(vocab, ModelParams::init(cfg, head, 9).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for head in [HeadKind::Joint, HeadKind::AllClass] {
            let m = model(head);
            let text = checkpoint_to_string(&m);
            let back = checkpoint_from_str(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(checkpoint_to_string(&back), text);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(checkpoint_from_str("{}").is_err());
        let text = checkpoint_to_string(&model(HeadKind::Joint)).replace("\"version\":1", "\"version\":9");
        assert!(matches!(checkpoint_from_str(&text), Err(ModelError::BadCheckpoint(_))));
    }
}
