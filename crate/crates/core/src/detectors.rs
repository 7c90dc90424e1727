//! Uniform detector interface: fit on ID embeddings (plus labels or logits
//! where a method needs them), score queries with a single "larger means
//! more OOD" orientation, and threshold the scores into decisions.
//!
//! Score orientation per method:
//! - dictionary methods emit the kernel reconstruction error as-is (better
//!   reconstruction is more negative);
//! - knn emits the distance to the k-th nearest stored ID sample;
//! - mahalanobis emits the squared distance to the nearest class mean;
//! - msp emits `1 - max softmax`, energy emits `-logsumexp(logits)`, d2u
//!   emits `H(softmax) - log C`.

use ndarray::{Array1, Array2};

use crate::data::{EmbeddingMatrix, KernelSpec, LabelVector};
use crate::dictionary::{
    sparse_code_with_gram, train_kmeans, train_nnk_means, Dictionary, TrainConfig,
};
use crate::error::{Error, Result};
use crate::kernel::{cholesky, forward_substitute, gram};
use crate::solver::EntropySign;

/// Detection methods supported by [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Nnk,
    EcNnk,
    CNnk,
    CEcNnk,
    Kmeans,
    CKmeans,
    Knn,
    Mahalanobis,
    Msp,
    Energy,
    D2u,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Nnk,
        Method::EcNnk,
        Method::CNnk,
        Method::CEcNnk,
        Method::Kmeans,
        Method::CKmeans,
        Method::Knn,
        Method::Mahalanobis,
        Method::Msp,
        Method::Energy,
        Method::D2u,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Nnk => "nnk",
            Method::EcNnk => "ec-nnk",
            Method::CNnk => "c-nnk",
            Method::CEcNnk => "c-ec-nnk",
            Method::Kmeans => "kmeans",
            Method::CKmeans => "c-kmeans",
            Method::Knn => "knn",
            Method::Mahalanobis => "mahalanobis",
            Method::Msp => "msp",
            Method::Energy => "energy",
            Method::D2u => "d2u",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        let canon = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == canon)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; expected one of {}",
                    Method::ALL.map(|m| m.name()).join(", ")
                ))
            })
    }

    /// Methods that consume ID class labels during fitting.
    pub fn requires_labels(&self) -> bool {
        matches!(
            self,
            Method::CNnk | Method::CEcNnk | Method::CKmeans | Method::Mahalanobis
        )
    }

    /// Methods that score classifier logits instead of embeddings.
    pub fn uses_logits(&self) -> bool {
        matches!(self, Method::Msp | Method::Energy | Method::D2u)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// Per-query OOD scores; larger means more OOD.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// ID/OOD decision for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Id,
    Ood,
}

/// A dictionary plus its cached atom Gram matrix. The Gram matrix is model
/// state so that query scoring touches only query-sized work.
#[derive(Debug, Clone)]
pub(crate) struct DictScorer {
    pub(crate) dict: Dictionary,
    atom_gram: Array2<f64>,
}

impl DictScorer {
    pub(crate) fn new(dict: Dictionary) -> Result<Self> {
        let atom_gram = gram(dict.atoms(), dict.atoms(), dict.kernel())?.values;
        Ok(DictScorer { dict, atom_gram })
    }

    fn score(&self, queries: &EmbeddingMatrix) -> Result<Vec<f64>> {
        if queries.n_cols() != self.dict.atoms().n_cols() {
            return Err(Error::Config(format!(
                "queries have {} columns, model expects {}",
                queries.n_cols(),
                self.dict.atoms().n_cols()
            )));
        }
        let q = prepare_queries(queries, self.dict.kernel())?;
        // Inference is always the plain solve; the cached Gram matrix backs
        // the per-query subproblems.
        let coding = sparse_code_with_gram(
            &q,
            &self.dict,
            &self.atom_gram,
            0.0,
            EntropySign::CrossEntropy,
        )?;
        Ok(coding.recon_errors)
    }
}

/// Queries must live in the model's geometry: unit sphere for cosine.
fn prepare_queries(queries: &EmbeddingMatrix, kernel: KernelSpec) -> Result<EmbeddingMatrix> {
    if kernel.requires_unit_norm() && !queries.is_unit_normalized() {
        crate::data::l2_normalize(queries)
    } else {
        Ok(queries.clone())
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Dict(DictScorer),
    ClassWise(Vec<DictScorer>),
    Knn { k: usize, train: EmbeddingMatrix },
    Mahalanobis { means: Array2<f64>, chol_lower: Array2<f64> },
    Logits { n_classes: usize },
}

/// A fitted detector of any supported method.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    method: Method,
    pub(crate) payload: Payload,
}

impl DetectorModel {
    pub fn method(&self) -> Method {
        self.method
    }

    pub(crate) fn from_parts(method: Method, payload: Payload) -> DetectorModel {
        DetectorModel { method, payload }
    }

    /// The fitted dictionaries: one for the plain methods, one per class for
    /// the class-wise methods, none otherwise.
    pub fn dictionaries(&self) -> Vec<&Dictionary> {
        match &self.payload {
            Payload::Dict(s) => vec![&s.dict],
            Payload::ClassWise(v) => v.iter().map(|s| &s.dict).collect(),
            _ => Vec::new(),
        }
    }

    /// Total atoms retained across all dictionaries, if any.
    pub fn n_atoms_total(&self) -> Option<usize> {
        let dicts = self.dictionaries();
        if dicts.is_empty() {
            None
        } else {
            Some(dicts.iter().map(|d| d.n_atoms()).sum())
        }
    }

    /// Builds a Mahalanobis model directly from class means and a covariance
    /// matrix. The covariance is taken as given (no extra ridge); the factor
    /// escalates only if it is numerically singular.
    pub fn mahalanobis_from_parts(means: Array2<f64>, covariance: Array2<f64>) -> Result<Self> {
        let chol_lower = factor_with_escalation(&covariance, 0.0)?;
        Ok(DetectorModel {
            method: Method::Mahalanobis,
            payload: Payload::Mahalanobis { means, chol_lower },
        })
    }

    /// Scores embedding queries. Logits-based methods reject this entry
    /// point; use [`DetectorModel::score_logits`].
    pub fn score(&self, queries: &EmbeddingMatrix) -> Result<ScoreVector> {
        let scores = match &self.payload {
            Payload::Dict(s) => s.score(queries)?,
            Payload::ClassWise(scorers) => {
                let per_class: Vec<Vec<f64>> =
                    scorers.iter().map(|s| s.score(queries)).collect::<Result<_>>()?;
                (0..queries.n_rows())
                    .map(|i| per_class.iter().map(|c| c[i]).fold(f64::INFINITY, f64::min))
                    .collect()
            }
            Payload::Knn { k, train } => {
                let q = prepare_queries(queries, KernelSpec::Cosine)?;
                if q.n_cols() != train.n_cols() {
                    return Err(Error::Config(format!(
                        "queries have {} columns, model expects {}",
                        q.n_cols(),
                        train.n_cols()
                    )));
                }
                knn_scan(&q, train, *k)
            }
            Payload::Mahalanobis { means, chol_lower } => {
                if queries.n_cols() != means.ncols() {
                    return Err(Error::Config(format!(
                        "queries have {} columns, model expects {}",
                        queries.n_cols(),
                        means.ncols()
                    )));
                }
                mahalanobis_scores(queries, means, chol_lower)
            }
            Payload::Logits { .. } => {
                return Err(Error::Config(format!(
                    "method {} scores logits, not embeddings",
                    self.method
                )))
            }
        };
        Ok(ScoreVector { scores })
    }

    /// Scores precomputed classifier logits for msp/energy/d2u.
    pub fn score_logits(&self, logits: &Array2<f64>) -> Result<ScoreVector> {
        let Payload::Logits { n_classes } = &self.payload else {
            return Err(Error::Config(format!(
                "method {} scores embeddings, not logits",
                self.method
            )));
        };
        if logits.ncols() != *n_classes {
            return Err(Error::Shape(format!(
                "logits have {} columns, model expects {n_classes}",
                logits.ncols()
            )));
        }
        if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite logit value {v}")));
        }
        let scores = logits
            .rows()
            .into_iter()
            .map(|row| match self.method {
                Method::Msp => 1.0 - softmax_max(row.as_slice().expect("contiguous")),
                Method::Energy => -log_sum_exp(row.as_slice().expect("contiguous")),
                Method::D2u => {
                    softmax_entropy(row.as_slice().expect("contiguous"))
                        - (*n_classes as f64).ln()
                }
                _ => unreachable!("payload implies a logits method"),
            })
            .collect();
        Ok(ScoreVector { scores })
    }
}

/// Fits a detector.
///
/// Label-aware methods require `labels`; logits-based methods require
/// `logits`. Dictionary methods train under `config` (the plain variants
/// force `lambda = 0`); kmeans reuses `config.epochs` as its Lloyd
/// iteration budget.
pub fn fit(
    method: Method,
    x_id: &EmbeddingMatrix,
    labels: Option<&LabelVector>,
    logits: Option<&Array2<f64>>,
    config: &TrainConfig,
) -> Result<DetectorModel> {
    config.validate()?;
    if method.requires_labels() && labels.is_none() {
        return Err(Error::Config(format!("method {method} requires ID labels")));
    }
    if method.uses_logits() && logits.is_none() {
        return Err(Error::Config(format!("method {method} requires training logits")));
    }

    let payload = match method {
        Method::Nnk | Method::EcNnk => {
            let x = prepare_queries(x_id, config.kernel)?;
            let train_cfg = effective_config(method, config);
            let dict = train_nnk_means(&x, &train_cfg)?;
            Payload::Dict(DictScorer::new(dict)?)
        }
        Method::Kmeans => {
            let x = prepare_queries(x_id, config.kernel)?;
            Payload::Dict(DictScorer::new(kmeans_dictionary(&x, config, config.m_init)?)?)
        }
        Method::CNnk | Method::CEcNnk | Method::CKmeans => {
            let labels = labels.expect("checked above");
            labels.validate_training(x_id)?;
            let x = prepare_queries(x_id, config.kernel)?;
            let mut scorers = Vec::with_capacity(labels.n_classes());
            for (c, rows) in labels.class_rows().iter().enumerate() {
                let x_c = x.select_rows(rows).map_err(|e| {
                    Error::Data(format!("class {c}: {e}"))
                })?;
                // Class slices can be smaller than the configured size.
                let m_c = config.m_init.min(x_c.n_rows());
                let dict = if method == Method::CKmeans {
                    kmeans_dictionary(&x_c, config, m_c)?
                } else {
                    let mut cfg = effective_config(method, config);
                    cfg.m_init = m_c;
                    cfg.k_sparsity = cfg.k_sparsity.min(m_c);
                    train_nnk_means(&x_c, &cfg)?
                };
                scorers.push(DictScorer::new(dict)?);
            }
            Payload::ClassWise(scorers)
        }
        Method::Knn => {
            if config.knn_k > x_id.n_rows() {
                return Err(Error::Config(format!(
                    "knn_k = {} exceeds {} training rows",
                    config.knn_k,
                    x_id.n_rows()
                )));
            }
            Payload::Knn { k: config.knn_k, train: crate::data::l2_normalize(x_id)? }
        }
        Method::Mahalanobis => {
            let labels = labels.expect("checked above");
            labels.validate_training(x_id)?;
            fit_mahalanobis(x_id, labels)?
        }
        Method::Msp | Method::Energy | Method::D2u => {
            let logits = logits.expect("checked above");
            if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite logit value {v}")));
            }
            if let Some(l) = labels {
                if l.n_classes() != logits.ncols() {
                    return Err(Error::Shape(format!(
                        "logits have {} columns but labels define {} classes",
                        logits.ncols(),
                        l.n_classes()
                    )));
                }
            }
            Payload::Logits { n_classes: logits.ncols() }
        }
    };
    Ok(DetectorModel { method, payload })
}

/// The plain variants ignore any configured entropy weight.
fn effective_config(method: Method, config: &TrainConfig) -> TrainConfig {
    let mut cfg = config.clone();
    if matches!(method, Method::Nnk | Method::CNnk) {
        cfg.lambda = 0.0;
    }
    cfg
}

/// kMeans centers packaged as a k = 1 dictionary so scoring shares the
/// reconstruction-error formula.
fn kmeans_dictionary(x: &EmbeddingMatrix, config: &TrainConfig, m: usize) -> Result<Dictionary> {
    let centers = train_kmeans(x, m, config.epochs, config.seed)?;
    let atoms = if config.kernel.requires_unit_norm() {
        let centers = EmbeddingMatrix::new(centers)?;
        crate::data::l2_normalize(&centers)?
    } else {
        EmbeddingMatrix::new(centers)?
    };
    let m = atoms.n_rows();
    Dictionary::new(atoms, vec![1.0 / m as f64; m], config.kernel, 1)
}

fn fit_mahalanobis(x: &EmbeddingMatrix, labels: &LabelVector) -> Result<Payload> {
    let d = x.n_cols();
    let n = x.n_rows() as f64;
    let class_rows = labels.class_rows();
    let mut means = Array2::<f64>::zeros((labels.n_classes(), d));
    for (c, rows) in class_rows.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::Data(format!(
                "mahalanobis requires >= 2 samples per class, class {c} has {}",
                rows.len()
            )));
        }
        for &i in rows {
            let mut mean = means.row_mut(c);
            mean += &x.row(i);
        }
        let count = rows.len() as f64;
        means.row_mut(c).mapv_inplace(|v| v / count);
    }

    // Shared covariance over class-centered samples, normalized by N.
    let mut cov = Array2::<f64>::zeros((d, d));
    for (c, rows) in class_rows.iter().enumerate() {
        for &i in rows {
            let diff = &x.row(i) - &means.row(c);
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += diff[a] * diff[b];
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }

    let ridge = 1e-6 * cov.diag().sum() / d as f64;
    let chol_lower = factor_with_escalation(&cov, ridge)?;
    Ok(Payload::Mahalanobis { means, chol_lower })
}

fn factor_with_escalation(cov: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    let d = cov.nrows();
    let mut attempt_ridge = ridge;
    let mut escalation = 1e-10 * cov.diag().sum().abs().max(f64::MIN_POSITIVE) / d as f64;
    for attempt in 0..4 {
        if let Some(l) = cholesky(cov, attempt_ridge) {
            return Ok(l);
        }
        if attempt < 3 {
            attempt_ridge = ridge + escalation;
            escalation *= 10.0;
        }
    }
    Err(Error::Singular("covariance factorization failed".into()))
}

/// Squared Euclidean distance with eight independent accumulators, combined
/// pairwise. Rows narrower than eight reduce to plain left-to-right
/// accumulation, since the idle lanes stay exactly zero.
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        let xa: &[f64; 8] = xa.try_into().expect("chunk of 8");
        let xb: &[f64; 8] = xb.try_into().expect("chunk of 8");
        for l in 0..8 {
            let d = xa[l] - xb[l];
            acc[l] += d * d;
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        acc[0] += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Tile width for the 1-NN scan; one tile of train rows stays cache-resident
/// while every query visits it. Tiling reorders only the loop nest, not the
/// per-pair arithmetic or the min over rows.
const KNN_TRAIN_TILE: usize = 256;

/// Exact k-th nearest Euclidean distance by full scan.
fn knn_scan(queries: &EmbeddingMatrix, train: &EmbeddingMatrix, k: usize) -> Vec<f64> {
    let train_rows: Vec<&[f64]> = train
        .data()
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("contiguous"))
        .collect();
    let query_rows: Vec<&[f64]> = queries
        .data()
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("contiguous"))
        .collect();

    if k == 1 {
        let mut best = vec![f64::INFINITY; query_rows.len()];
        for tile in train_rows.chunks(KNN_TRAIN_TILE) {
            for (qi, q) in query_rows.iter().enumerate() {
                let mut b = best[qi];
                for row in tile {
                    let d = squared_distance(q, row);
                    if d < b {
                        b = d;
                    }
                }
                best[qi] = b;
            }
        }
        return best.into_iter().map(f64::sqrt).collect();
    }

    query_rows
        .iter()
        .map(|q| {
            let mut dists: Vec<f64> =
                train_rows.iter().map(|row| squared_distance(q, row)).collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            dists[k - 1].sqrt()
        })
        .collect()
}

fn mahalanobis_scores(
    queries: &EmbeddingMatrix,
    means: &Array2<f64>,
    chol_lower: &Array2<f64>,
) -> Vec<f64> {
    let mut scores = Vec::with_capacity(queries.n_rows());
    for q in queries.data().rows() {
        let mut best = f64::INFINITY;
        for mean in means.rows() {
            let diff: Array1<f64> = &q - &mean;
            let z = forward_substitute(chol_lower, diff.view());
            let dist = z.dot(&z);
            if dist < best {
                best = dist;
            }
        }
        scores.push(best);
    }
    scores
}

fn softmax_max(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&f| (f - max).exp()).sum();
    // The max-shifted numerator of the largest entry is exactly 1.
    1.0 / denom
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&f| (f - max).exp()).sum();
    max + sum.ln()
}

fn softmax_entropy(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&f| (f - max).exp()).collect();
    let denom: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|&w| {
            let p = w / denom;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum()
}

/// Scores one query set with a standalone dictionary, sharing the model
/// scoring path. Used for per-class comparisons and reference checks.
pub fn score_with_dictionary(dict: &Dictionary, queries: &EmbeddingMatrix) -> Result<ScoreVector> {
    let scorer = DictScorer::new(dict.clone())?;
    Ok(ScoreVector { scores: scorer.score(queries)? })
}

/// Threshold rule: OOD exactly when the score exceeds `epsilon`.
pub fn decide(scores: &ScoreVector, epsilon: f64) -> Vec<Decision> {
    scores
        .scores
        .iter()
        .map(|&s| if s > epsilon { Decision::Ood } else { Decision::Id })
        .collect()
}

/// Smallest observed ID score admitting at least `recall` of the ID scores
/// under [`decide`] (score <= threshold classifies as ID).
pub fn threshold_for_id_recall(id_scores: &[f64], recall: f64) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::Metric("no ID scores to threshold".into()));
    }
    if !(recall > 0.0 && recall <= 1.0) {
        return Err(Error::Precondition(format!(
            "recall must lie in (0, 1], got {recall}"
        )));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let admit = ((recall * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[admit - 1])
}
