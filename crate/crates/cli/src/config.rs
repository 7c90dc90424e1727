//! Run configuration: CLI flags take precedence over an optional JSON config
//! file, which takes precedence over the built-in defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use nnk_ood::{Error, KernelSpec, Method, Result, TrainConfig};
use nnk_ood::solver::EntropySign;

/// Optional JSON file mirroring the tuning flags.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub kernel: Option<String>,
    pub sigma: Option<f64>,
    pub m_init: Option<usize>,
    pub k_sparsity: Option<usize>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub final_plain_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub ridge: Option<f64>,
    pub knn_k: Option<usize>,
    pub entropy_sign: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
    }
}

/// Tuning flags shared by fit, sweep, and bench.
#[derive(Debug, Args, Clone)]
pub struct TuneOpts {
    /// JSON config file; flags given on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Similarity kernel: cosine or gaussian
    #[arg(long)]
    pub kernel: Option<String>,
    /// Gaussian kernel bandwidth
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Initial dictionary size
    #[arg(long)]
    pub m_init: Option<usize>,
    /// Maximum nonzeros per sparse code
    #[arg(long)]
    pub k_sparsity: Option<usize>,
    /// Entropy-constraint weight
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Training epochs (Lloyd iterations for kmeans)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Trailing epochs with the entropy term off
    #[arg(long)]
    pub final_plain_epochs: Option<usize>,
    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative ridge for the dictionary update
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Neighbor count for the knn method
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Entropy term sign: cross-entropy (default) or paper
    #[arg(long)]
    pub entropy_sign: Option<String>,
}

impl TuneOpts {
    /// Resolves flags over the config file over defaults.
    pub fn train_config(&self, file: &FileConfig) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let kernel_name = self
            .kernel
            .clone()
            .or_else(|| file.kernel.clone())
            .unwrap_or_else(|| "cosine".to_string());
        let sigma = self.sigma.or(file.sigma).unwrap_or(1.0);
        let kernel = parse_kernel(&kernel_name, sigma)?;
        let entropy_sign = self
            .entropy_sign
            .clone()
            .or_else(|| file.entropy_sign.clone())
            .map(|s| parse_entropy_sign(&s))
            .transpose()?
            .unwrap_or_default();
        let m_init = self.m_init.or(file.m_init).unwrap_or(defaults.m_init);
        let config = TrainConfig {
            m_init,
            // The default sparsity follows small dictionaries down; an
            // explicit flag is validated as given.
            k_sparsity: self
                .k_sparsity
                .or(file.k_sparsity)
                .unwrap_or(defaults.k_sparsity.min(m_init)),
            lambda: self.lambda.or(file.lambda).unwrap_or(defaults.lambda),
            epochs: self.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            final_plain_epochs: self
                .final_plain_epochs
                .or(file.final_plain_epochs)
                .unwrap_or(defaults.final_plain_epochs),
            kernel,
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            ridge: self.ridge.or(file.ridge).unwrap_or(defaults.ridge),
            entropy_sign,
            prune: None,
            knn_k: self.knn_k.or(file.knn_k).unwrap_or(defaults.knn_k),
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_kernel(name: &str, sigma: f64) -> Result<KernelSpec> {
    match name.trim().to_ascii_lowercase().as_str() {
        "cosine" => Ok(KernelSpec::Cosine),
        "gaussian" => KernelSpec::gaussian(sigma),
        other => Err(Error::Config(format!(
            "unknown kernel {other:?}; expected cosine or gaussian"
        ))),
    }
}

pub fn parse_entropy_sign(name: &str) -> Result<EntropySign> {
    match name.trim().to_ascii_lowercase().as_str() {
        "cross-entropy" | "cross_entropy" => Ok(EntropySign::CrossEntropy),
        "paper" | "literal" => Ok(EntropySign::Literal),
        other => Err(Error::Config(format!(
            "unknown entropy sign {other:?}; expected cross-entropy or paper"
        ))),
    }
}

/// Method from flag or config file.
pub fn resolve_method(flag: Option<&str>, file: &FileConfig) -> Result<Method> {
    match flag {
        Some(m) => Method::parse(m),
        None => match &file.method {
            Some(m) => Method::parse(m),
            None => Err(Error::Config("no method given (flag --method or config file)".into())),
        },
    }
}

/// Comma-separated list parser for grids and seed lists.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let items: std::result::Result<Vec<T>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    items.map_err(|_| Error::Config(format!("could not parse {what} list {text:?}")))
}
