//! Synthetic benchmark generation: isotropic Gaussian clusters with
//! rejection-sampled means, split into an ID training set and a mixed
//! ID/OOD test set.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

/// Generation parameters. Totals are split across clusters as evenly as
/// possible, with remainders going to the lowest cluster ids.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub n_id_clusters: usize,
    pub n_ood_clusters: usize,
    /// Total ID training rows.
    pub n_train: usize,
    /// Total held-out ID test rows.
    pub n_test_id: usize,
    /// Total OOD test rows.
    pub n_test_ood: usize,
    pub dim: usize,
    /// Minimum pairwise mean distance, in units of `noise_sigma`.
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Symmetric convenience form: `per_cluster` draws per cluster for the
    /// training set, the held-out ID test set, and each OOD cluster.
    pub fn per_cluster(
        n_id_clusters: usize,
        n_ood_clusters: usize,
        per_cluster: usize,
        dim: usize,
        separation: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> SynthConfig {
        SynthConfig {
            n_id_clusters,
            n_ood_clusters,
            n_train: per_cluster * n_id_clusters,
            n_test_id: per_cluster * n_id_clusters,
            n_test_ood: per_cluster * n_ood_clusters,
            dim,
            separation,
            noise_sigma,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_id_clusters == 0 || self.n_ood_clusters == 0 {
            return Err(Error::Precondition("cluster counts must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Precondition("dim must be >= 1".into()));
        }
        if self.n_train < self.n_id_clusters {
            return Err(Error::Precondition(format!(
                "n_train = {} cannot cover {} ID clusters",
                self.n_train, self.n_id_clusters
            )));
        }
        if self.n_test_id == 0 || self.n_test_ood == 0 {
            return Err(Error::Precondition("test splits must be non-empty".into()));
        }
        if !(self.separation > 0.0) {
            return Err(Error::Precondition("separation must be > 0".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Precondition("noise_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Splits `total` into `parts` counts differing by at most one.
fn even_split(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Generates a dataset deterministically from the config.
///
/// Cluster means are drawn from `N(0, (separation * noise_sigma)^2 I)` and
/// rejected until all pairwise distances reach `separation * noise_sigma`;
/// points are `mean + noise_sigma * N(0, I)`. Training rows come from ID
/// clusters only and are labeled by cluster; test rows are flagged OOD when
/// drawn from an OOD cluster.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_clusters = config.n_id_clusters + config.n_ood_clusters;
    let min_dist = config.separation * config.noise_sigma;
    let means = sample_means(&mut rng, n_clusters, config.dim, min_dist)?;

    let draw_cluster = |rng: &mut ChaCha8Rng, cluster: usize, count: usize, out: &mut Vec<f64>| {
        for _ in 0..count {
            for j in 0..config.dim {
                let z: f64 = rng.sample(StandardNormal);
                out.push(means[(cluster, j)] + config.noise_sigma * z);
            }
        }
    };

    // Train: ID clusters, grouped by cluster id.
    let train_counts = even_split(config.n_train, config.n_id_clusters);
    let mut train_flat = Vec::with_capacity(config.n_train * config.dim);
    let mut train_labels = Vec::with_capacity(config.n_train);
    for (c, &count) in train_counts.iter().enumerate() {
        draw_cluster(&mut rng, c, count, &mut train_flat);
        train_labels.extend(std::iter::repeat_n(c, count));
    }

    // Test: held-out ID draws first, then OOD draws.
    let test_id_counts = even_split(config.n_test_id, config.n_id_clusters);
    let test_ood_counts = even_split(config.n_test_ood, config.n_ood_clusters);
    let n_test = config.n_test_id + config.n_test_ood;
    let mut test_flat = Vec::with_capacity(n_test * config.dim);
    let mut test_is_ood = Vec::with_capacity(n_test);
    for (c, &count) in test_id_counts.iter().enumerate() {
        draw_cluster(&mut rng, c, count, &mut test_flat);
        test_is_ood.extend(std::iter::repeat_n(false, count));
    }
    for (o, &count) in test_ood_counts.iter().enumerate() {
        draw_cluster(&mut rng, config.n_id_clusters + o, count, &mut test_flat);
        test_is_ood.extend(std::iter::repeat_n(true, count));
    }

    let train_id = EmbeddingMatrix::new(Array2::from_shape_vec(
        (config.n_train, config.dim),
        train_flat,
    )
    .map_err(|e| Error::Internal(e.to_string()))?)?;
    let test = EmbeddingMatrix::new(Array2::from_shape_vec((n_test, config.dim), test_flat)
        .map_err(|e| Error::Internal(e.to_string()))?)?;
    let labels = LabelVector::new(train_labels, config.n_id_clusters)?;

    let dataset = Dataset {
        train_id,
        train_labels: Some(labels),
        test,
        test_is_ood,
        train_logits: None,
        test_logits: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn sample_means(
    rng: &mut ChaCha8Rng,
    n_clusters: usize,
    dim: usize,
    min_dist: f64,
) -> Result<Array2<f64>> {
    let max_attempts = 10 * n_clusters * n_clusters;
    let scale = min_dist;
    let mut means = Array2::<f64>::zeros((n_clusters, dim));
    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < n_clusters {
        if attempts >= max_attempts.max(n_clusters) {
            return Err(Error::Generation(format!(
                "placed {placed}/{n_clusters} cluster means within {attempts} attempts \
                 at separation {min_dist}"
            )));
        }
        attempts += 1;
        let candidate = Array1::from_shape_fn(dim, |_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        });
        let ok = (0..placed).all(|p| {
            let diff = &candidate - &means.row(p);
            diff.dot(&diff).sqrt() >= min_dist
        });
        if ok {
            means.row_mut(placed).assign(&candidate);
            placed += 1;
        }
    }
    Ok(means)
}
