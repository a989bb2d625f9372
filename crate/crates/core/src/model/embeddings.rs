//! Overlay of externally trained word vectors onto the embedding table.
//!
//! The file is the common whitespace-separated text format: one
//! `token v1 v2 ... vd` record per line, with an optional leading
//! `count dim` header line.

use std::path::Path;

use super::{ModelError, TrainedModel, Vocab};

/// Replaces the embedding rows of every vocabulary token found in the file
/// and returns how many rows were replaced. Other encoder tensors are left
/// untouched.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    model: &mut TrainedModel,
) -> Result<usize, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    overlay_embeddings(&text, model)
}

pub(crate) fn overlay_embeddings(text: &str, model: &mut TrainedModel) -> Result<usize, ModelError> {
    let dim = model.params.config.dim;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() {
            let declared: usize = rest[0].parse().map_err(|_| ModelError::MalformedFile {
                line: line_no,
                reason: "bad header".into(),
            })?;
            if declared != dim {
                return Err(ModelError::DimensionMismatch { line: line_no, expected: dim, found: declared });
            }
            continue;
        }
        if rest.len() != dim {
            return Err(ModelError::DimensionMismatch { line: line_no, expected: dim, found: rest.len() });
        }
        let vector = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| ModelError::MalformedFile { line: line_no, reason: e.to_string() })?;
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::MalformedFile { line: line_no, reason: "non-finite value".into() });
        }
        let key = Vocab::key(token);
        let id = model.vocab.id(&key);
        if model.vocab.token(id) == Some(key.as_str()) {
            rows.push((id, vector));
        }
    }
    let table = &mut model.params.encoder.embeddings;
    for (id, vector) in &rows {
        table.row_mut(*id).copy_from_slice(vector);
    }
    Ok(rows.len())
}
