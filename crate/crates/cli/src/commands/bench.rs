//! `bench`: fit several methods on one training set and time their scoring
//! on a shared query set. Runs strictly serially so the timings are fair.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use crate::commands::{load_labels, load_matrix};
use crate::config::{parse_list, FileConfig, TuneOpts};
use nnk_ood::io::load_flags_csv;
use nnk_ood::{fit, time_scoring, Error, Method, MetricsReport, Result};

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated methods to compare (at least two)
    #[arg(long)]
    pub methods: String,
    /// ID training embeddings
    #[arg(long)]
    pub train: PathBuf,
    /// ID class labels (required by label-aware methods)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Query embeddings
    #[arg(long)]
    pub queries: PathBuf,
    /// Query OOD flags
    #[arg(long)]
    pub flags: PathBuf,
    /// Scoring repeats; the reported time is the median
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Comma-separated seeds; metrics are written per seed plus an aggregate
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory for per-seed and aggregate metrics JSON
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tune: TuneOpts,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let file = FileConfig::load(args.tune.config.as_deref())?;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::parse)
        .collect::<Result<_>>()?;
    if methods.len() < 2 {
        return Err(Error::Config(format!(
            "bench compares methods; got {} (need at least 2)",
            methods.len()
        )));
    }
    if let Some(m) = methods.iter().find(|m| m.uses_logits()) {
        return Err(Error::Config(format!(
            "{m} scores logits and is not timed on embeddings"
        )));
    }

    let seeds: Vec<u64> = match &args.seeds {
        Some(text) => parse_list(text, "seeds")?,
        None => file.seeds.clone().unwrap_or_default(),
    };
    let base = args.tune.train_config(&file)?;
    let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds };

    let x = load_matrix(&args.train)?;
    let labels = args.labels.as_deref().map(load_labels).transpose()?;
    let queries = load_matrix(&args.queries)?;
    let flags = load_flags_csv(&args.flags)?;
    if queries.n_rows() != flags.len() {
        return Err(Error::Shape(format!(
            "{} query rows vs {} flags",
            queries.n_rows(),
            flags.len()
        )));
    }
    std::fs::create_dir_all(&args.out_dir)?;

    let mut per_method: BTreeMap<&'static str, Vec<MetricsReport>> = BTreeMap::new();
    for &seed in &seeds {
        for &method in &methods {
            let config = nnk_ood::TrainConfig { seed, ..base.clone() };
            let model = fit(method, &x, labels.as_ref(), None, &config)?;
            let (scores, seconds) = time_scoring(&model, &queries, args.repeats)?;
            let report = MetricsReport::from_scores(&scores, &flags, seconds)?;
            let path = args.out_dir.join(format!("{method}_seed{seed}.json"));
            std::fs::write(&path, report.to_json() + "\n")?;
            println!(
                "seed {seed:>3}  {method:<12} auroc {:.4}  aupr {:.4}  fpr@95 {:.4}  time {:.4}s",
                report.auroc, report.aupr, report.fpr_at_95, report.inference_seconds
            );
            per_method.entry(method.name()).or_default().push(report);
        }
    }

    let mut aggregate = serde_json::Map::new();
    for (name, reports) in &per_method {
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        aggregate.insert(
            (*name).to_string(),
            json!({
                "auroc": mean(|r| r.auroc),
                "aupr": mean(|r| r.aupr),
                "fpr_at_95": mean(|r| r.fpr_at_95),
                "inference_seconds": mean(|r| r.inference_seconds),
                "n_seeds": reports.len(),
            }),
        );
    }
    let aggregate_path = args.out_dir.join("aggregate.json");
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(aggregate))
        .map_err(|e| Error::Internal(format!("aggregate serialization: {e}")))?;
    std::fs::write(&aggregate_path, text + "\n")?;
    println!(
        "{} methods x {} seeds -> {}",
        methods.len(),
        seeds.len(),
        args.out_dir.display()
    );
    Ok(())
}
