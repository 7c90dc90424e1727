//! `score`: apply a fitted model to queries, writing one score per line.

use std::path::PathBuf;

use clap::Args;

use crate::commands::{load_logits, load_matrix};
use nnk_ood::io::save_scores_csv;
use nnk_ood::{load_model, Error, Result};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model file written by `fit`
    #[arg(long)]
    pub model: PathBuf,
    /// Query embeddings (.npy or .csv)
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Query logits, for msp/energy/d2u models
    #[arg(long)]
    pub query_logits: Option<PathBuf>,
    /// Output scores CSV, aligned with query row order
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ScoreArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let scores = if model.method().uses_logits() {
        let path = args.query_logits.as_deref().ok_or_else(|| {
            Error::Config(format!("method {} needs --query-logits", model.method()))
        })?;
        model.score_logits(&load_logits(path)?)?
    } else {
        let path = args
            .queries
            .as_deref()
            .ok_or_else(|| Error::Config(format!("method {} needs --queries", model.method())))?;
        model.score(&load_matrix(path)?)?
    };
    save_scores_csv(&args.out, &scores.scores)?;
    println!("scored {} queries -> {}", scores.len(), args.out.display());
    Ok(())
}
