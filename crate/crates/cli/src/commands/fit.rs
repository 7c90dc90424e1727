//! `fit`: train a detector and persist it.

use std::path::PathBuf;

use clap::Args;

use crate::commands::{load_labels, load_logits, load_matrix};
use crate::config::{resolve_method, FileConfig, TuneOpts};
use nnk_ood::{fit, save_model, Result};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Detection method (nnk, ec-nnk, c-nnk, c-ec-nnk, kmeans, c-kmeans,
    /// knn, mahalanobis, msp, energy, d2u)
    #[arg(long)]
    pub method: Option<String>,
    /// ID training embeddings (.npy or .csv)
    #[arg(long)]
    pub train: PathBuf,
    /// ID class labels, one integer per line
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Classifier logits for the ID training set (for msp/energy/d2u)
    #[arg(long)]
    pub train_logits: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tune: TuneOpts,
}

pub fn run(args: FitArgs) -> Result<()> {
    let file = FileConfig::load(args.tune.config.as_deref())?;
    let method = resolve_method(args.method.as_deref(), &file)?;
    let config = args.tune.train_config(&file)?;

    let x = load_matrix(&args.train)?;
    let labels = args.labels.as_deref().map(load_labels).transpose()?;
    let logits = args.train_logits.as_deref().map(load_logits).transpose()?;

    let model = fit(method, &x, labels.as_ref(), logits.as_ref(), &config)?;
    save_model(&model, &args.out)?;

    let size = model
        .n_atoms_total()
        .map(|m| format!(", {m} atoms"))
        .unwrap_or_default();
    println!("fitted {method} on {} rows{size} -> {}", x.n_rows(), args.out.display());
    Ok(())
}
