//! Domain types shared across the crate: embedding matrices, labels,
//! kernel specifications, and benchmark datasets.
//!
//! All numeric payloads are 64-bit; narrower inputs are widened on load.
//! Samples are rows.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Similarity kernel used by the dictionary learners and scorers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Dot product over unit-normalized rows. Values lie in [-1, 1].
    Cosine,
    /// `exp(-||a - b||^2 / (2 sigma^2))`. Values lie in (0, 1].
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    /// Gaussian kernel with bandwidth validation.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Precondition(format!(
                "gaussian kernel requires finite sigma > 0, got {sigma}"
            )));
        }
        Ok(KernelSpec::Gaussian { sigma })
    }

    /// True when the kernel operates on unit-normalized rows.
    pub fn requires_unit_norm(&self) -> bool {
        matches!(self, KernelSpec::Cosine)
    }
}

/// N x d matrix of sample embeddings, one sample per row.
///
/// Entries are always finite. `unit_normalized` is set only by
/// [`l2_normalize`] (or by loaders that re-validate it) and certifies that
/// every row has Euclidean norm within 1e-6 of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    unit_normalized: bool,
}

impl EmbeddingMatrix {
    /// Wraps a dense matrix, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "embedding matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        for ((i, j), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value {v} at row {i}, column {j}"
                )));
            }
        }
        Ok(EmbeddingMatrix { data, unit_normalized: false })
    }

    /// Wraps a matrix whose rows are claimed unit-norm, re-validating the claim.
    pub fn new_unit_normalized(data: Array2<f64>) -> Result<Self> {
        let mut m = Self::new(data)?;
        for (i, row) in m.data.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!(
                    "row {i} has norm {norm}, expected 1 within 1e-6"
                )));
            }
        }
        m.unit_normalized = true;
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.unit_normalized
    }

    /// Sub-matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<EmbeddingMatrix> {
        if rows.is_empty() {
            return Err(Error::Shape("row selection must be non-empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(Error::Shape(format!(
                "row index {bad} out of bounds for {} rows",
                self.n_rows()
            )));
        }
        let data = self.data.select(ndarray::Axis(0), rows);
        Ok(EmbeddingMatrix { data, unit_normalized: self.unit_normalized })
    }
}

/// Scales every row of `x` to unit Euclidean norm.
///
/// Idempotent within 1e-15. Fails on all-zero rows, naming the offending row.
pub fn l2_normalize(x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = x.data().clone();
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::Data(format!("cannot normalize all-zero row {i}")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(EmbeddingMatrix { data, unit_normalized: true })
}

/// Per-row class ids in `{0..n_classes-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Data("label vector requires n_classes >= 1".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Data(format!(
                "label {l} at row {i} out of range for {n_classes} classes"
            )));
        }
        Ok(LabelVector { labels, n_classes })
    }

    /// Builds from raw ids, inferring `n_classes` as `max + 1`.
    pub fn from_raw(labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Self::new(labels, n_classes.max(1))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices belonging to each class, in input order.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            rows[l].push(i);
        }
        rows
    }

    /// Training labels must pair with the matrix and cover every class.
    pub fn validate_training(&self, x: &EmbeddingMatrix) -> Result<()> {
        if self.len() != x.n_rows() {
            return Err(Error::Shape(format!(
                "label vector length {} does not match {} rows",
                self.len(),
                x.n_rows()
            )));
        }
        for (c, rows) in self.class_rows().iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::Data(format!("class {c} has no training samples")));
            }
        }
        Ok(())
    }
}

/// A benchmark dataset: ID training embeddings, a mixed ID/OOD test set, and
/// optional labels and classifier logits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_id: EmbeddingMatrix,
    pub train_labels: Option<LabelVector>,
    pub test: EmbeddingMatrix,
    pub test_is_ood: Vec<bool>,
    pub train_logits: Option<Array2<f64>>,
    pub test_logits: Option<Array2<f64>>,
}

impl Dataset {
    /// Validates the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.test_is_ood.len() != self.test.n_rows() {
            return Err(Error::Shape(format!(
                "test_is_ood length {} does not match {} test rows",
                self.test_is_ood.len(),
                self.test.n_rows()
            )));
        }
        if let Some(labels) = &self.train_labels {
            labels.validate_training(&self.train_id)?;
            for (name, logits) in [("train", &self.train_logits), ("test", &self.test_logits)] {
                if let Some(l) = logits {
                    if l.ncols() != labels.n_classes() {
                        return Err(Error::Shape(format!(
                            "{name} logits have {} columns, expected {}",
                            l.ncols(),
                            labels.n_classes()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn l2_normalize_three_four_five() {
        let x = EmbeddingMatrix::new(array![[3.0, 4.0]]).unwrap();
        let n = l2_normalize(&x).unwrap();
        assert_eq!(n.data(), &array![[0.6, 0.8]]);
        assert!(n.is_unit_normalized());
    }

    #[test]
    fn l2_normalize_axis_rows() {
        let x = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let n = l2_normalize(&x).unwrap();
        assert_eq!(n.data(), &array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn l2_normalize_zero_row_is_error() {
        let x = EmbeddingMatrix::new(array![[0.0, 0.0]]).unwrap();
        let err = l2_normalize(&x).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn l2_normalize_idempotent() {
        let x = EmbeddingMatrix::new(array![[1.5, -2.5, 0.25], [9.0, 1.0, -3.0]]).unwrap();
        let once = l2_normalize(&x).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn non_finite_entries_rejected() {
        let err = EmbeddingMatrix::new(array![[1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let err = LabelVector::new(vec![0, 3], 3).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn training_labels_require_all_classes() {
        let x = EmbeddingMatrix::new(array![[1.0], [2.0]]).unwrap();
        let labels = LabelVector::new(vec![0, 0], 2).unwrap();
        assert!(labels.validate_training(&x).is_err());
    }

    #[test]
    fn gaussian_sigma_must_be_positive() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(1.0).is_ok());
    }
}
