//! `sweep`: grid search over dictionary size and entropy weight, selecting
//! by validation AUROC.

use std::path::PathBuf;

use clap::Args;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::commands::{load_labels, load_matrix};
use crate::config::{parse_list, resolve_method, FileConfig, TuneOpts};
use nnk_ood::io::load_flags_csv;
use nnk_ood::{auroc, fit, EmbeddingMatrix, Error, Method, Result};

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dictionary method to tune (defaults to ec-nnk)
    #[arg(long)]
    pub method: Option<String>,
    /// ID training embeddings
    #[arg(long)]
    pub train: PathBuf,
    /// ID class labels (required for class-wise methods)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Validation pool embeddings (mixed ID and OOD)
    #[arg(long)]
    pub queries: PathBuf,
    /// Validation pool OOD flags
    #[arg(long)]
    pub flags: PathBuf,
    /// Carve a seeded validation subset of this fraction from the pool
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Seed for the validation split
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Comma-separated dictionary sizes
    #[arg(long, default_value = "500,1000,2000,4000")]
    pub m_grid: String,
    /// Comma-separated entropy weights
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Output CSV of grid results
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tune: TuneOpts,
}

pub fn run(args: SweepArgs) -> Result<()> {
    let file = FileConfig::load(args.tune.config.as_deref())?;
    let method = match (&args.method, &file.method) {
        (None, None) => Method::EcNnk,
        (flag, _) => resolve_method(flag.as_deref(), &file)?,
    };
    if method.uses_logits() || method == Method::Knn || method == Method::Mahalanobis {
        return Err(Error::Config(format!(
            "sweep tunes dictionary methods; {method} has no dictionary grid"
        )));
    }
    let entropy_constrained = matches!(method, Method::EcNnk | Method::CEcNnk);

    let m_grid: Vec<usize> = parse_list(&args.m_grid, "m-grid")?;
    let lambda_grid: Vec<f64> = match &args.lambda_grid {
        Some(text) => {
            let grid = parse_list(text, "lambda-grid")?;
            if !entropy_constrained && grid.iter().any(|&l: &f64| l != 0.0) {
                return Err(Error::Config(format!(
                    "a non-zero lambda grid requires an entropy-constrained method, not {method}"
                )));
            }
            grid
        }
        None if entropy_constrained => vec![0.01, 0.03, 0.05, 0.07],
        None => vec![0.0],
    };
    if m_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }

    let x = load_matrix(&args.train)?;
    let labels = args.labels.as_deref().map(load_labels).transpose()?;
    let pool = load_matrix(&args.queries)?;
    let pool_flags = load_flags_csv(&args.flags)?;
    if pool.n_rows() != pool_flags.len() {
        return Err(Error::Shape(format!(
            "{} validation rows vs {} flags",
            pool.n_rows(),
            pool_flags.len()
        )));
    }
    let (val, val_flags) = validation_split(&pool, &pool_flags, args.val_frac, args.split_seed)?;

    let base = args.tune.train_config(&file)?;
    let mut rows = Vec::new();
    for &m in &m_grid {
        for &lambda in &lambda_grid {
            // Sparsity follows small grid points down.
            let config = nnk_ood::TrainConfig {
                m_init: m,
                lambda,
                k_sparsity: base.k_sparsity.min(m),
                ..base.clone()
            };
            let model = fit(method, &x, labels.as_ref(), None, &config)?;
            let scores = model.score(&val)?;
            let score = auroc(&scores, &val_flags)?;
            let final_m = model
                .n_atoms_total()
                .ok_or_else(|| Error::Internal("dictionary method without atoms".into()))?;
            rows.push((m, lambda, score, final_m));
        }
    }

    let best = rows
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.2.partial_cmp(&b.2).expect("finite AUROC"))
        .map(|(i, _)| i)
        .expect("non-empty grid");

    let mut csv = String::from("method,m_init,lambda,auroc,final_m,best\n");
    for (i, (m, lambda, score, final_m)) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{method},{m},{lambda},{score},{final_m},{}\n",
            u8::from(i == best)
        ));
        println!(
            "m_init {m:>6}  lambda {lambda:<6}  auroc {score:.4}  final_m {final_m:>6}{}",
            if i == best { "  <- best" } else { "" }
        );
    }
    std::fs::write(&args.out, csv)?;
    println!("{} grid points -> {}", rows.len(), args.out.display());
    Ok(())
}

/// The whole pool by default; a seeded subset when a fraction is given.
fn validation_split(
    pool: &EmbeddingMatrix,
    flags: &[bool],
    val_frac: Option<f64>,
    seed: u64,
) -> Result<(EmbeddingMatrix, Vec<bool>)> {
    let Some(frac) = val_frac else {
        return Ok((pool.clone(), flags.to_vec()));
    };
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("val-frac must lie in (0, 1], got {frac}")));
    }
    let n = pool.n_rows();
    let take = ((frac * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    let val = pool.select_rows(&chosen)?;
    let val_flags: Vec<bool> = chosen.iter().map(|&i| flags[i]).collect();
    Ok((val, val_flags))
}
