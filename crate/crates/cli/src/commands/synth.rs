//! `synth`: generate a synthetic ID/OOD benchmark and write it to disk.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use nnk_ood::io::{save_embeddings, save_flags_csv, save_labels_csv, ArrayFormat};
use nnk_ood::{generate_synthetic, Error, Result, SynthConfig};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub id_clusters: usize,
    #[arg(long, default_value_t = 1)]
    pub ood_clusters: usize,
    /// Draws per cluster for train, held-out ID test, and OOD test
    #[arg(long, default_value_t = 100)]
    pub per_cluster: usize,
    /// Total ID training rows (overrides --per-cluster for the train split)
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Total held-out ID test rows
    #[arg(long)]
    pub n_test_id: Option<usize>,
    /// Total OOD test rows
    #[arg(long)]
    pub n_test_ood: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Minimum cluster-mean distance in noise-sigma units
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a SynthConfig,
    files: [&'static str; 4],
    n_train: usize,
    n_test: usize,
    n_test_ood: usize,
    n_classes: usize,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_id_clusters: args.id_clusters,
        n_ood_clusters: args.ood_clusters,
        n_train: args.n_train.unwrap_or(args.per_cluster * args.id_clusters),
        n_test_id: args.n_test_id.unwrap_or(args.per_cluster * args.id_clusters),
        n_test_ood: args.n_test_ood.unwrap_or(args.per_cluster * args.ood_clusters),
        dim: args.dim,
        separation: args.separation,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&config)?;
    std::fs::create_dir_all(&args.out)?;

    save_embeddings(&args.out.join("train.npy"), ArrayFormat::Npy, &dataset.train_id)?;
    let labels = dataset
        .train_labels
        .as_ref()
        .ok_or_else(|| Error::Internal("generator always labels the training set".into()))?;
    save_labels_csv(&args.out.join("train_labels.csv"), labels.labels())?;
    save_embeddings(&args.out.join("test.npy"), ArrayFormat::Npy, &dataset.test)?;
    save_flags_csv(&args.out.join("test_is_ood.csv"), &dataset.test_is_ood)?;

    let manifest = Manifest {
        config: &config,
        files: ["train.npy", "train_labels.csv", "test.npy", "test_is_ood.csv"],
        n_train: dataset.train_id.n_rows(),
        n_test: dataset.test.n_rows(),
        n_test_ood: dataset.test_is_ood.iter().filter(|&&o| o).count(),
        n_classes: labels.n_classes(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
    std::fs::write(args.out.join("manifest.json"), manifest_json + "\n")?;

    println!(
        "wrote {} train rows, {} test rows ({} OOD) to {}",
        manifest.n_train,
        manifest.n_test,
        manifest.n_test_ood,
        args.out.display()
    );
    Ok(())
}
