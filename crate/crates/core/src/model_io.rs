//! Detector model persistence.
//!
//! Layout: `NNKODM1` magic, format version (u32), method tag (u8), kernel
//! spec, then method-specific sections of little-endian scalars and
//! row-major matrices with explicit dimensions. Floats round-trip
//! bit-exactly, so reloaded models score identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::{EmbeddingMatrix, KernelSpec};
use crate::detectors::{DetectorModel, Method, Payload};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"NNKODM1";
const VERSION: u32 = 1;

const KERNEL_COSINE: u8 = 0;
const KERNEL_GAUSSIAN: u8 = 1;
const KERNEL_NONE: u8 = 2;

/// Serializes a fitted model.
pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let code = Method::ALL
        .iter()
        .position(|m| *m == model.method())
        .expect("method is in ALL") as u8;
    w.write_all(&[code])?;

    match &model.payload {
        Payload::Dict(scorer) => {
            write_kernel(&mut w, Some(scorer.dict.kernel()))?;
            write_dictionary(&mut w, &scorer.dict)?;
        }
        Payload::ClassWise(scorers) => {
            write_kernel(&mut w, Some(scorers[0].dict.kernel()))?;
            write_u32(&mut w, scorers.len() as u32)?;
            for scorer in scorers {
                write_dictionary(&mut w, &scorer.dict)?;
            }
        }
        Payload::Knn { k, train } => {
            write_kernel(&mut w, None)?;
            write_u32(&mut w, *k as u32)?;
            w.write_all(&[u8::from(train.is_unit_normalized())])?;
            write_matrix(&mut w, train.data())?;
        }
        Payload::Mahalanobis { means, chol_lower } => {
            write_kernel(&mut w, None)?;
            write_matrix(&mut w, means)?;
            write_matrix(&mut w, chol_lower)?;
        }
        Payload::Logits { n_classes } => {
            write_kernel(&mut w, None)?;
            write_u32(&mut w, *n_classes as u32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reloads a model saved by [`save_model`]. Derived state (atom Gram
/// matrices) is rebuilt eagerly so scoring cost matches the original.
pub fn load_model(path: &Path) -> Result<DetectorModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "model format version {version}, expected {VERSION}"
        )));
    }
    let code = read_u8(&mut r)? as usize;
    let method = *Method::ALL
        .get(code)
        .ok_or_else(|| Error::Format(format!("unknown method tag {code}")))?;
    let kernel = read_kernel(&mut r)?;

    let payload = match method {
        Method::Nnk | Method::EcNnk | Method::Kmeans => {
            let kernel = kernel.ok_or_else(|| missing_kernel(method))?;
            Payload::Dict(read_dictionary(&mut r, kernel)?)
        }
        Method::CNnk | Method::CEcNnk | Method::CKmeans => {
            let kernel = kernel.ok_or_else(|| missing_kernel(method))?;
            let n = read_u32(&mut r)? as usize;
            if n == 0 {
                return Err(Error::Format("class-wise model with zero classes".into()));
            }
            let mut scorers = Vec::with_capacity(n);
            for _ in 0..n {
                scorers.push(read_dictionary(&mut r, kernel)?);
            }
            Payload::ClassWise(scorers)
        }
        Method::Knn => {
            let k = read_u32(&mut r)? as usize;
            let normalized = read_u8(&mut r)? != 0;
            let data = read_matrix(&mut r)?;
            let train = if normalized {
                EmbeddingMatrix::new_unit_normalized(data)?
            } else {
                EmbeddingMatrix::new(data)?
            };
            Payload::Knn { k, train }
        }
        Method::Mahalanobis => {
            let means = read_matrix(&mut r)?;
            let chol_lower = read_matrix(&mut r)?;
            if chol_lower.nrows() != means.ncols() || chol_lower.ncols() != means.ncols() {
                return Err(Error::Format("covariance factor shape mismatch".into()));
            }
            Payload::Mahalanobis { means, chol_lower }
        }
        Method::Msp | Method::Energy | Method::D2u => {
            Payload::Logits { n_classes: read_u32(&mut r)? as usize }
        }
    };
    Ok(DetectorModel::from_parts(method, payload))
}

fn missing_kernel(method: Method) -> Error {
    Error::Format(format!("method {method} requires a kernel spec"))
}

fn write_kernel<W: Write>(w: &mut W, kernel: Option<KernelSpec>) -> Result<()> {
    match kernel {
        Some(KernelSpec::Cosine) => w.write_all(&[KERNEL_COSINE])?,
        Some(KernelSpec::Gaussian { sigma }) => {
            w.write_all(&[KERNEL_GAUSSIAN])?;
            w.write_all(&sigma.to_le_bytes())?;
        }
        None => w.write_all(&[KERNEL_NONE])?,
    }
    Ok(())
}

fn read_kernel<R: Read>(r: &mut R) -> Result<Option<KernelSpec>> {
    match read_u8(r)? {
        KERNEL_COSINE => Ok(Some(KernelSpec::Cosine)),
        KERNEL_GAUSSIAN => {
            let sigma = read_f64(r)?;
            Ok(Some(KernelSpec::gaussian(sigma)?))
        }
        KERNEL_NONE => Ok(None),
        other => Err(Error::Format(format!("unknown kernel tag {other}"))),
    }
}

fn write_dictionary<W: Write>(w: &mut W, dict: &Dictionary) -> Result<()> {
    write_u32(w, dict.k_sparsity() as u32)?;
    write_u64(w, dict.probs().len() as u64)?;
    for p in dict.probs() {
        w.write_all(&p.to_le_bytes())?;
    }
    write_matrix(w, dict.atoms().data())?;
    Ok(())
}

fn read_dictionary<R: Read>(r: &mut R, kernel: KernelSpec) -> Result<crate::detectors::DictScorer> {
    let k_sparsity = read_u32(r)? as usize;
    let n = read_u64(r)? as usize;
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        probs.push(read_f64(r)?);
    }
    let data = read_matrix(r)?;
    let atoms = if kernel.requires_unit_norm() {
        EmbeddingMatrix::new_unit_normalized(data)?
    } else {
        EmbeddingMatrix::new(data)?
    };
    let dict = Dictionary::new(atoms, probs, kernel, k_sparsity)?;
    crate::detectors::DictScorer::new(dict)
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for row in m.rows() {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= (1 << 33))
        .ok_or_else(|| Error::Format(format!("implausible matrix shape {rows}x{cols}")))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(read_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Format(format!("matrix shape mismatch: {e}")))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, "u8")?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, "f64")?;
    Ok(f64::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated model file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{l2_normalize, LabelVector};
    use crate::detectors::{fit, Method};
    use crate::dictionary::TrainConfig;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn random_matrix(seed: u64, rows: usize, cols: usize) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingMatrix::new(Array2::from_shape_fn((rows, cols), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    #[test]
    fn nnk_round_trip_scores_match() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nnk.model");
        let x = l2_normalize(&random_matrix(1, 60, 6)).unwrap();
        let config = TrainConfig { m_init: 8, k_sparsity: 3, epochs: 3, ..TrainConfig::default() };
        let model = fit(Method::Nnk, &x, None, None, &config).unwrap();
        save_model(&model, &path).unwrap();
        let reloaded = load_model(&path).unwrap();
        assert_eq!(reloaded.method(), Method::Nnk);

        let queries = l2_normalize(&random_matrix(2, 100, 6)).unwrap();
        let a = model.score(&queries).unwrap();
        let b = reloaded.score(&queries).unwrap();
        for (x, y) in a.scores.iter().zip(b.scores.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn knn_round_trip_preserves_nearest_indices() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("knn.model");
        let x = random_matrix(3, 50, 5);
        let model = fit(Method::Knn, &x, None, None, &TrainConfig::default()).unwrap();
        save_model(&model, &path).unwrap();
        let reloaded = load_model(&path).unwrap();

        let probes = l2_normalize(&random_matrix(4, 20, 5)).unwrap();
        let nearest = |m: &DetectorModel| -> Vec<usize> {
            let Payload::Knn { train, .. } = &m.payload else { panic!("knn payload") };
            probes
                .data()
                .rows()
                .into_iter()
                .map(|q| {
                    let mut best = (0usize, f64::INFINITY);
                    for (i, row) in train.data().rows().into_iter().enumerate() {
                        let diff = &q - &row;
                        let d = diff.dot(&diff);
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    best.0
                })
                .collect()
        };
        assert_eq!(nearest(&model), nearest(&reloaded));
        assert_eq!(
            model.score(&probes).unwrap(),
            reloaded.score(&probes).unwrap()
        );
    }

    #[test]
    fn classwise_and_mahalanobis_round_trip() {
        let dir = tempdir().unwrap();
        let x = random_matrix(5, 40, 4);
        let labels = LabelVector::new((0..40).map(|i| i / 20).collect(), 2).unwrap();
        let config = TrainConfig { m_init: 5, k_sparsity: 2, epochs: 2, ..TrainConfig::default() };
        let queries = random_matrix(6, 12, 4);

        for method in [Method::CNnk, Method::Mahalanobis] {
            let path = dir.path().join(format!("{method}.model"));
            let model = fit(method, &x, Some(&labels), None, &config).unwrap();
            save_model(&model, &path).unwrap();
            let reloaded = load_model(&path).unwrap();
            assert_eq!(
                model.score(&queries).unwrap(),
                reloaded.score(&queries).unwrap(),
                "{method}"
            );
        }
    }

    #[test]
    fn logits_model_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("energy.model");
        let x = random_matrix(7, 2, 2);
        let logits = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64);
        let model = fit(Method::Energy, &x, None, Some(&logits), &TrainConfig::default()).unwrap();
        save_model(&model, &path).unwrap();
        let reloaded = load_model(&path).unwrap();
        assert_eq!(
            model.score_logits(&logits).unwrap(),
            reloaded.score_logits(&logits).unwrap()
        );
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.model");
        std::fs::write(&path, b"NOTAMODELFILE???????").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_model_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.model");
        let x = random_matrix(8, 10, 3);
        let model = fit(Method::Knn, &x, None, None, &TrainConfig::default()).unwrap();
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ver.model");
        let x = random_matrix(9, 10, 3);
        let model = fit(Method::Knn, &x, None, None, &TrainConfig::default()).unwrap();
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[7] = 99;
        std::fs::write(&path, bytes).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("version"));
    }
}
