//! NNK-Means soft clustering for out-of-distribution detection over
//! precomputed embeddings.
//!
//! The crate trains a dictionary of cluster atoms by alternating
//! non-negative kernel-regression sparse coding with least-squares atom
//! updates, optionally under an entropy constraint that prunes rarely
//! selected atoms. Reconstruction error against the learned dictionary
//! serves as the OOD score. Baseline detectors (kMeans, KNN, Mahalanobis,
//! and the logits-based MSP / Energy / D2U scores), rank metrics, model
//! persistence, and a synthetic benchmark generator round out the toolkit;
//! the `nnk-ood-cli` crate drives it from the command line.
//!
//! Every detector scores with one orientation: larger means more OOD.

// Validation uses `!(x > 0.0)` so that NaN fails the check; the suggested
// `partial_cmp` rewrite loses that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod detectors;
pub mod dictionary;
pub mod error;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod model_io;
pub mod solver;
pub mod synth;

pub use data::{l2_normalize, Dataset, EmbeddingMatrix, KernelSpec, LabelVector};
pub use detectors::{
    decide, fit, score_with_dictionary, threshold_for_id_recall, Decision, DetectorModel, Method,
    ScoreVector,
};
pub use dictionary::{
    dictionary_update, kmeanspp_init, sparse_code_dataset, train_from_atoms, train_kmeans,
    train_kmeans_traced, train_nnk_means, train_nnk_means_traced, update_probabilities,
    CodingResult, Dictionary, EpochStats, TrainConfig,
};
pub use error::{Error, Result};
pub use kernel::{gram, knn_atoms, solve_spd_ridge, GramMatrix};
pub use metrics::{auroc, aupr, fpr_at_tpr, time_scoring, MetricsReport};
pub use model_io::{load_model, save_model};
pub use solver::{
    ec_nnk_solve, nnk_solve, reconstruction_error, EntropySign, NnkSolution,
};
pub use synth::{generate_synthetic, SynthConfig};
