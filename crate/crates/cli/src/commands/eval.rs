//! `eval`: rank metrics from a scores CSV and an OOD flag CSV, plus optional
//! threshold decisions at a target ID recall.

use std::path::PathBuf;

use clap::Args;

use nnk_ood::io::{load_flags_csv, load_scores_csv};
use nnk_ood::{
    decide, threshold_for_id_recall, Decision, Error, MetricsReport, Result, ScoreVector,
};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV from `score`
    #[arg(long)]
    pub scores: PathBuf,
    /// OOD flags (0/1 per line), aligned with the scores
    #[arg(long)]
    pub flags: PathBuf,
    /// Output metrics JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-query ID/OOD decision CSV
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Target ID recall for the decision threshold
    #[arg(long, default_value_t = 0.95)]
    pub recall: f64,
    /// Scoring wall time to embed in the report
    #[arg(long, default_value_t = 0.0)]
    pub inference_seconds: f64,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let scores = ScoreVector { scores: load_scores_csv(&args.scores)? };
    let flags = load_flags_csv(&args.flags)?;
    if scores.len() != flags.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} flags",
            scores.len(),
            flags.len()
        )));
    }

    let report = MetricsReport::from_scores(&scores, &flags, args.inference_seconds)?;
    std::fs::write(&args.out, report.to_json() + "\n")?;

    if let Some(path) = &args.decisions {
        let id_scores: Vec<f64> = scores
            .scores
            .iter()
            .zip(&flags)
            .filter(|&(_, &ood)| !ood)
            .map(|(&s, _)| s)
            .collect();
        let epsilon = threshold_for_id_recall(&id_scores, args.recall)?;
        let lines: Vec<&str> = decide(&scores, epsilon)
            .into_iter()
            .map(|d| match d {
                Decision::Id => "ID",
                Decision::Ood => "OOD",
            })
            .collect();
        std::fs::write(path, lines.join("\n") + "\n")?;
    }

    println!(
        "auroc {:.4}  aupr {:.4}  fpr@95 {:.4}  (n_id {}, n_ood {}) -> {}",
        report.auroc,
        report.aupr,
        report.fpr_at_95,
        report.n_id,
        report.n_ood,
        args.out.display()
    );
    Ok(())
}
