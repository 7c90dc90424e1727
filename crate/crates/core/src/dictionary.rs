//! Dictionary learning: kMeans++ initialization, alternating sparse coding
//! and dictionary updates, entropy-constrained training with atom pruning,
//! and the plain kMeans baseline.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingMatrix, KernelSpec};
use crate::error::{Error, Result};
use crate::kernel::{gram, solve_spd_ridge, top_k_by_similarity};
use crate::solver::{ec_nnk_solve_with_sign, nnk_solve, reconstruction_error, EntropySign, NnkSolution};

/// Samples are coded against at most this many rows at a time, bounding the
/// similarity buffer to block_rows x M.
const CODING_BLOCK_ROWS: usize = 2048;

/// A learned dictionary: explicit atoms in input space, per-atom selection
/// probabilities, and the kernel they were trained under.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atoms: EmbeddingMatrix,
    probs: Vec<f64>,
    kernel: KernelSpec,
    k_sparsity: usize,
}

impl Dictionary {
    pub fn new(
        atoms: EmbeddingMatrix,
        probs: Vec<f64>,
        kernel: KernelSpec,
        k_sparsity: usize,
    ) -> Result<Self> {
        if probs.len() != atoms.n_rows() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} atoms",
                probs.len(),
                atoms.n_rows()
            )));
        }
        if k_sparsity == 0 {
            return Err(Error::Precondition("k_sparsity must be >= 1".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Data("atom probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("atom probabilities sum to {sum}, expected 1")));
        }
        if kernel.requires_unit_norm() {
            for (i, row) in atoms.data().rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!(
                        "cosine dictionary atom {i} has norm {norm}"
                    )));
                }
            }
        }
        Ok(Dictionary { atoms, probs, kernel, k_sparsity })
    }

    pub fn atoms(&self) -> &EmbeddingMatrix {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn k_sparsity(&self) -> usize {
        self.k_sparsity
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.n_rows()
    }

    /// Coding and scoring never use more atoms than exist.
    pub fn effective_k(&self) -> usize {
        self.k_sparsity.min(self.n_atoms())
    }
}

/// Per-sample sparse codes over their candidate atom sets.
#[derive(Debug, Clone)]
pub struct CodingResult {
    /// Solver output per sample, aligned with `support_sets`.
    pub codes: Vec<NnkSolution>,
    /// Candidate atom indices per sample (the k nearest atoms).
    pub support_sets: Vec<Vec<usize>>,
    /// Plain reconstruction error per sample, independent of any entropy
    /// term in the solve.
    pub recon_errors: Vec<f64>,
}

impl CodingResult {
    pub fn total_reconstruction_error(&self) -> f64 {
        self.recon_errors.iter().sum()
    }
}

/// Training hyper-parameters shared by the dictionary methods.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial dictionary size.
    pub m_init: usize,
    /// Maximum nonzeros per sparse code.
    pub k_sparsity: usize,
    /// Entropy-constraint weight; 0 recovers plain NNK-Means.
    pub lambda: f64,
    pub epochs: usize,
    /// Trailing epochs trained with the entropy term switched off.
    pub final_plain_epochs: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Relative ridge for the dictionary-update solve, scaled by
    /// `trace(W W') / M`.
    pub ridge: f64,
    pub entropy_sign: EntropySign,
    /// Pruning override; by default atoms are pruned exactly when the
    /// entropy constraint is active (`lambda > 0`).
    pub prune: Option<bool>,
    /// Neighbor count for the KNN detector.
    pub knn_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m_init: 64,
            k_sparsity: 5,
            lambda: 0.0,
            epochs: 10,
            final_plain_epochs: 2,
            kernel: KernelSpec::Cosine,
            seed: 0,
            ridge: 1e-8,
            entropy_sign: EntropySign::CrossEntropy,
            prune: None,
            knn_k: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_init == 0 || self.k_sparsity == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "m_init, k_sparsity, and epochs must all be >= 1".into(),
            ));
        }
        if self.k_sparsity > self.m_init {
            return Err(Error::Config(format!(
                "k_sparsity = {} exceeds m_init = {}",
                self.k_sparsity, self.m_init
            )));
        }
        if self.final_plain_epochs > self.epochs {
            return Err(Error::Config(format!(
                "final_plain_epochs = {} exceeds epochs = {}",
                self.final_plain_epochs, self.epochs
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config(format!("ridge must be finite and >= 0, got {}", self.ridge)));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        if let KernelSpec::Gaussian { sigma } = self.kernel {
            if !(sigma > 0.0) {
                return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
            }
        }
        Ok(())
    }

    fn prune_enabled(&self) -> bool {
        self.prune.unwrap_or(self.lambda > 0.0)
    }

    /// Entropy weight for a given epoch: forced to zero for the trailing
    /// `final_plain_epochs` epochs.
    fn epoch_lambda(&self, epoch: usize) -> f64 {
        if epoch + self.final_plain_epochs >= self.epochs {
            0.0
        } else {
            self.lambda
        }
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lambda: f64,
    pub n_atoms: usize,
    pub total_reconstruction_error: f64,
}

/// kMeans++ seeding: `m` distinct rows of `x` chosen by D^2-weighted
/// sampling, deterministic per seed.
pub fn kmeanspp_init(x: &EmbeddingMatrix, m: usize, seed: u64) -> Result<Array2<f64>> {
    let n = x.n_rows();
    if m == 0 {
        return Err(Error::Precondition("m must be >= 1".into()));
    }
    if m > n {
        return Err(Error::Precondition(format!("m = {m} exceeds {n} data rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = x.data();
    let x_sq: Vec<f64> = data.rows().into_iter().map(|r| r.dot(&r)).collect();

    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;

    let mut min_dist = squared_distances_to(data, &x_sq, first);
    min_dist[first] = 0.0;

    while chosen.len() < m {
        let total: f64 = min_dist.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in min_dist.iter().enumerate() {
                cum += w;
                if cum > u {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave u at or above the cumulative sum; fall back
            // to the last positively weighted row.
            pick.unwrap_or_else(|| {
                min_dist
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .expect("total > 0 implies a positive weight")
            })
        } else {
            // All remaining rows coincide with chosen atoms.
            taken.iter().position(|&t| !t).expect("m <= n")
        };
        chosen.push(next);
        taken[next] = true;
        let dist = squared_distances_to(data, &x_sq, next);
        for i in 0..n {
            if dist[i] < min_dist[i] {
                min_dist[i] = dist[i];
            }
        }
        min_dist[next] = 0.0;
    }

    Ok(data.select(ndarray::Axis(0), &chosen))
}

fn squared_distances_to(data: &Array2<f64>, x_sq: &[f64], row: usize) -> Vec<f64> {
    let c = data.row(row);
    let c_sq = x_sq[row];
    let dots = data.dot(&c);
    (0..data.nrows())
        .map(|i| (x_sq[i] + c_sq - 2.0 * dots[i]).max(0.0))
        .collect()
}

/// Codes every sample of `x` against the dictionary: candidate set from the
/// k nearest atoms, weights from the (optionally entropy-regularized)
/// non-negative solve.
///
/// During training a sample whose regularized solve comes back empty is
/// re-solved with `lambda = 0` so that every sample keeps at least one
/// assignment.
pub fn sparse_code_dataset(
    x: &EmbeddingMatrix,
    dict: &Dictionary,
    lambda: f64,
    sign: EntropySign,
) -> Result<CodingResult> {
    let atom_gram = gram(&dict.atoms, &dict.atoms, dict.kernel)?.values;
    sparse_code_with_gram(x, dict, &atom_gram, lambda, sign)
}

/// Coding loop against a precomputed atom Gram matrix; scoring paths keep
/// the Gram as model state and enter here.
pub(crate) fn sparse_code_with_gram(
    x: &EmbeddingMatrix,
    dict: &Dictionary,
    atom_gram: &Array2<f64>,
    lambda: f64,
    sign: EntropySign,
) -> Result<CodingResult> {
    let n = x.n_rows();
    let k = dict.effective_k();
    if x.n_cols() != dict.atoms.n_cols() {
        return Err(Error::Shape(format!(
            "samples have {} columns, dictionary atoms {}",
            x.n_cols(),
            dict.atoms.n_cols()
        )));
    }
    let log_p: Vec<f64> = dict.probs.iter().map(|&p| p.ln()).collect();
    if lambda > 0.0 {
        if let Some(v) = log_p.iter().find(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "entropy term requires positive atom probabilities, got log p = {v}"
            )));
        }
    }

    let mut codes = Vec::with_capacity(n);
    let mut support_sets = Vec::with_capacity(n);
    let mut recon_errors = Vec::with_capacity(n);

    let mut start = 0usize;
    while start < n {
        let end = (start + CODING_BLOCK_ROWS).min(n);
        let block = x.select_rows(&(start..end).collect::<Vec<_>>())?;
        let sims = gram(&block, &dict.atoms, dict.kernel)?.values;
        for (local, i) in (start..end).enumerate() {
            let row = sims.row(local);
            let support = top_k_by_similarity(row.as_slice().expect("contiguous"), k)?;
            let mut k_ss = Array2::<f64>::zeros((k, k));
            let mut k_sq = Array1::<f64>::zeros(k);
            let mut log_p_s = Array1::<f64>::zeros(k);
            for (a, &ia) in support.iter().enumerate() {
                k_sq[a] = row[ia];
                log_p_s[a] = log_p[ia];
                for (b, &ib) in support.iter().enumerate() {
                    k_ss[(a, b)] = atom_gram[(ia, ib)];
                }
            }
            let mut solution = if lambda > 0.0 {
                ec_nnk_solve_with_sign(&k_ss, k_sq.view(), log_p_s.view(), lambda, sign)
            } else {
                nnk_solve(&k_ss, k_sq.view())
            }
            .map_err(|e| Error::Convergence(format!("sample {i}: {e}")))?;
            if solution.support.is_empty() && lambda > 0.0 {
                solution = nnk_solve(&k_ss, k_sq.view())
                    .map_err(|e| Error::Convergence(format!("sample {i}: {e}")))?;
            }
            let recon = reconstruction_error(solution.theta.view(), &k_ss, k_sq.view())?;
            codes.push(solution);
            support_sets.push(support);
            recon_errors.push(recon);
        }
        start = end;
    }

    Ok(CodingResult { codes, support_sets, recon_errors })
}

/// Atom selection probabilities: positive assignments per atom over total
/// positive assignments.
pub fn update_probabilities(coding: &CodingResult, m: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; m];
    for (code, support) in coding.codes.iter().zip(&coding.support_sets) {
        for &local in &code.support {
            counts[support[local]] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Internal(
            "no positive assignments; the coding fallback should preclude this".into(),
        ));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Least-squares dictionary update `A = W'(WW')^{-1}`, materialized as new
/// atoms in input space. Atoms with no assignments keep their previous
/// value; cosine dictionaries get their updated rows re-normalized.
pub fn dictionary_update(
    x: &EmbeddingMatrix,
    coding: &CodingResult,
    old_atoms: &EmbeddingMatrix,
    ridge_rel: f64,
    kernel: KernelSpec,
) -> Result<Array2<f64>> {
    let m = old_atoms.n_rows();
    let d = old_atoms.n_cols();
    let mut assigned = vec![false; m];
    for (code, support) in coding.codes.iter().zip(&coding.support_sets) {
        for &local in &code.support {
            assigned[support[local]] = true;
        }
    }
    let active: Vec<usize> = (0..m).filter(|&a| assigned[a]).collect();
    if active.is_empty() {
        return Err(Error::Internal("dictionary update with no assignments".into()));
    }
    let slot: Vec<usize> = {
        let mut s = vec![usize::MAX; m];
        for (pos, &a) in active.iter().enumerate() {
            s[a] = pos;
        }
        s
    };

    let ma = active.len();
    let mut wwt = Array2::<f64>::zeros((ma, ma));
    let mut wx = Array2::<f64>::zeros((ma, d));
    for (i, (code, support)) in coding.codes.iter().zip(&coding.support_sets).enumerate() {
        let entries: Vec<(usize, f64)> = code
            .support
            .iter()
            .map(|&local| (slot[support[local]], code.theta[local]))
            .collect();
        for &(a, ta) in &entries {
            for &(b, tb) in &entries {
                wwt[(a, b)] += ta * tb;
            }
            let xi = x.row(i);
            let mut row = wx.row_mut(a);
            row.scaled_add(ta, &xi);
        }
    }

    let ridge = ridge_rel * wwt.diag().sum() / ma as f64;
    let solved = solve_spd_ridge(&wwt, &wx, ridge)?;

    let mut atoms = old_atoms.data().clone();
    for (pos, &a) in active.iter().enumerate() {
        atoms.row_mut(a).assign(&solved.row(pos));
        if kernel.requires_unit_norm() {
            let mut row = atoms.row_mut(a);
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            } else {
                atoms.row_mut(a).assign(&old_atoms.row(a));
            }
        }
    }
    Ok(atoms)
}

/// Full training loop; `lambda = 0` recovers plain NNK-Means.
pub fn train_nnk_means(x: &EmbeddingMatrix, config: &TrainConfig) -> Result<Dictionary> {
    train_nnk_means_traced(x, config).map(|(d, _)| d)
}

/// As [`train_nnk_means`], also returning per-epoch diagnostics.
pub fn train_nnk_means_traced(
    x: &EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<(Dictionary, Vec<EpochStats>)> {
    config.validate()?;
    if config.m_init > x.n_rows() {
        return Err(Error::Precondition(format!(
            "m_init = {} exceeds {} training rows",
            config.m_init,
            x.n_rows()
        )));
    }
    let init = kmeanspp_init(x, config.m_init, config.seed)?;
    let init = atoms_matrix(init, config.kernel)?;
    train_from_atoms(x, init, config)
}

/// Training from caller-supplied initial atoms. Exposed so permutation and
/// reduction properties can be exercised with a fixed starting point.
pub fn train_from_atoms(
    x: &EmbeddingMatrix,
    init_atoms: EmbeddingMatrix,
    config: &TrainConfig,
) -> Result<(Dictionary, Vec<EpochStats>)> {
    config.validate()?;
    let prune_enabled = config.prune_enabled();
    let mut atoms = init_atoms;
    let mut probs = vec![1.0 / atoms.n_rows() as f64; atoms.n_rows()];
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lambda = config.epoch_lambda(epoch);
        let dict = Dictionary::new(atoms.clone(), probs.clone(), config.kernel, config.k_sparsity)?;
        let coding = sparse_code_dataset(x, &dict, lambda, config.entropy_sign)?;
        probs = update_probabilities(&coding, dict.n_atoms())?;
        let updated = dictionary_update(x, &coding, &atoms, config.ridge, config.kernel)?;
        atoms = atoms_matrix(updated, config.kernel)?;

        if prune_enabled {
            let keep: Vec<usize> = (0..probs.len()).filter(|&a| probs[a] > 0.0).collect();
            if keep.len() < probs.len() {
                atoms = atoms.select_rows(&keep)?;
                let kept_mass: f64 = keep.iter().map(|&a| probs[a]).sum();
                probs = keep.iter().map(|&a| probs[a] / kept_mass).collect();
            }
        }
        trace.push(EpochStats {
            epoch,
            lambda,
            n_atoms: atoms.n_rows(),
            total_reconstruction_error: coding.total_reconstruction_error(),
        });
    }

    let dict = Dictionary::new(atoms, probs, config.kernel, config.k_sparsity)?;
    Ok((dict, trace))
}

/// Atom matrices carry the unit-norm certificate exactly when the kernel
/// demands it.
fn atoms_matrix(raw: Array2<f64>, kernel: KernelSpec) -> Result<EmbeddingMatrix> {
    if kernel.requires_unit_norm() {
        EmbeddingMatrix::new_unit_normalized(raw)
    } else {
        EmbeddingMatrix::new(raw)
    }
}

/// Lloyd's algorithm from a kMeans++ start; empty clusters are re-seeded to
/// the point currently farthest from its assigned center.
pub fn train_kmeans(
    x: &EmbeddingMatrix,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    train_kmeans_traced(x, m, iters, seed).map(|(c, _)| c)
}

/// As [`train_kmeans`], also returning the inertia recorded at each
/// assignment step.
pub fn train_kmeans_traced(
    x: &EmbeddingMatrix,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = x.n_rows();
    let d = x.n_cols();
    if m > n {
        return Err(Error::Precondition(format!("m = {m} exceeds {n} data rows")));
    }
    if iters == 0 {
        return Err(Error::Precondition("iters must be >= 1".into()));
    }
    let data = x.data();
    let x_sq: Vec<f64> = data.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut centers = kmeanspp_init(x, m, seed)?;
    let mut inertia_trace = Vec::with_capacity(iters);
    let mut prev_assignment: Option<Vec<usize>> = None;

    for _ in 0..iters {
        let (assignment, dist_sq) = assign_to_centers(data, &x_sq, &centers);
        inertia_trace.push(dist_sq.iter().sum());

        let mut counts = vec![0usize; m];
        let mut sums = Array2::<f64>::zeros((m, d));
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &data.row(i);
        }
        let empties: Vec<usize> = (0..m).filter(|&c| counts[c] == 0).collect();
        let mut reseed_order: Vec<usize> = (0..n).collect();
        reseed_order.sort_by(|&i, &j| {
            dist_sq[j].partial_cmp(&dist_sq[i]).expect("finite distances").then(i.cmp(&j))
        });
        let mut reseed_iter = reseed_order.into_iter();
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v / count as f64);
            }
        }
        for &c in &empties {
            let p = reseed_iter.next().expect("more points than clusters");
            centers.row_mut(c).assign(&data.row(p));
        }

        if prev_assignment.as_ref() == Some(&assignment) && empties.is_empty() {
            break;
        }
        prev_assignment = Some(assignment);
    }

    Ok((centers, inertia_trace))
}

fn assign_to_centers(
    data: &Array2<f64>,
    x_sq: &[f64],
    centers: &Array2<f64>,
) -> (Vec<usize>, Vec<f64>) {
    let n = data.nrows();
    let m = centers.nrows();
    let c_sq: Vec<f64> = centers.rows().into_iter().map(|r| r.dot(&r)).collect();
    let cross = data.dot(&centers.t());
    let mut assignment = vec![0usize; n];
    let mut dist_sq = vec![0.0f64; n];
    for i in 0..n {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..m {
            let d = (x_sq[i] + c_sq[c] - 2.0 * cross[(i, c)]).max(0.0);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
        dist_sq[i] = best_d;
    }
    (assignment, dist_sq)
}
