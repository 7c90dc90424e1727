//! Subcommand implementations.

pub mod bench;
pub mod eval;
pub mod fit;
pub mod score;
pub mod sweep;
pub mod synth;

use std::path::Path;

use ndarray::Array2;
use nnk_ood::io::{load_embeddings, load_labels_csv, ArrayFormat};
use nnk_ood::{EmbeddingMatrix, LabelVector, Result};

/// Loads an embedding matrix, picking NPY or CSV from the extension.
pub fn load_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    load_embeddings(path, ArrayFormat::from_path(path))
}

/// Loads a logits matrix (same container formats as embeddings).
pub fn load_logits(path: &Path) -> Result<Array2<f64>> {
    Ok(load_matrix(path)?.data().clone())
}

/// Loads a labels CSV into a label vector with `max + 1` classes.
pub fn load_labels(path: &Path) -> Result<LabelVector> {
    LabelVector::from_raw(load_labels_csv(path)?)
}
