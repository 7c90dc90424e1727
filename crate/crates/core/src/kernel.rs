//! Kernel evaluations, Gram matrices, nearest-atom search, and the ridge
//! SPD solve shared by every learner in the crate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::data::{EmbeddingMatrix, KernelSpec};
use crate::error::{Error, Result};

/// m x n matrix of kernel similarities together with the kernel that
/// produced it.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub kernel: KernelSpec,
}

/// Computes `values[i][j] = kernel(A_i, B_j)`.
///
/// The cosine kernel requires both inputs unit-normalized. Gaussian uses
/// `exp(-||a - b||^2 / (2 sigma^2))` with squared distances obtained from the
/// norm expansion and clamped at zero.
pub fn gram(a: &EmbeddingMatrix, b: &EmbeddingMatrix, kernel: KernelSpec) -> Result<GramMatrix> {
    if a.n_cols() != b.n_cols() {
        return Err(Error::Shape(format!(
            "gram inputs have {} and {} columns",
            a.n_cols(),
            b.n_cols()
        )));
    }
    let values = match kernel {
        KernelSpec::Cosine => {
            if !a.is_unit_normalized() || !b.is_unit_normalized() {
                return Err(Error::Precondition(
                    "cosine kernel requires unit-normalized inputs".into(),
                ));
            }
            a.data().dot(&b.data().t())
        }
        KernelSpec::Gaussian { sigma } => {
            let sq = pairwise_squared_distances(a.data().view(), b.data().view());
            let scale = 2.0 * sigma * sigma;
            sq.mapv(|d| (-d / scale).exp())
        }
    };
    Ok(GramMatrix { values, kernel })
}

/// Kernel similarities from one query row to every atom row.
pub fn kernel_row(
    q: ArrayView1<'_, f64>,
    atoms: &EmbeddingMatrix,
    kernel: KernelSpec,
) -> Array1<f64> {
    match kernel {
        KernelSpec::Cosine => atoms.data().dot(&q),
        KernelSpec::Gaussian { sigma } => {
            let scale = 2.0 * sigma * sigma;
            let q_sq = q.dot(&q);
            let dots = atoms.data().dot(&q);
            let mut out = Array1::zeros(atoms.n_rows());
            for (i, row) in atoms.data().rows().into_iter().enumerate() {
                let d = (row.dot(&row) + q_sq - 2.0 * dots[i]).max(0.0);
                out[i] = (-d / scale).exp();
            }
            out
        }
    }
}

/// `||a_i - b_j||^2` for all pairs, via the norm expansion. Clamped at zero
/// so rounding never produces negative distances.
fn pairwise_squared_distances(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let a_sq: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let b_sq: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut cross = a.dot(&b.t());
    for ((i, j), v) in cross.indexed_iter_mut() {
        *v = (a_sq[i] + b_sq[j] - 2.0 * *v).max(0.0);
    }
    cross
}

/// Indices of the `k` atoms most similar to `q`, ties broken by lower index.
pub fn knn_atoms(
    q: ArrayView1<'_, f64>,
    atoms: &EmbeddingMatrix,
    k: usize,
    kernel: KernelSpec,
) -> Result<Vec<usize>> {
    let sims = kernel_row(q, atoms, kernel);
    top_k_by_similarity(sims.as_slice().expect("contiguous"), k)
}

/// Largest-similarity selection used by [`knn_atoms`] and the batched coding
/// paths. Full scan; exact.
pub fn top_k_by_similarity(sims: &[f64], k: usize) -> Result<Vec<usize>> {
    let m = sims.len();
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    if k > m {
        return Err(Error::Precondition(format!(
            "k = {k} exceeds the number of atoms {m}"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| {
        sims[j]
            .partial_cmp(&sims[i])
            .expect("finite similarities")
            .then(i.cmp(&j))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Solves `(A + ridge I) X = B` for symmetric positive-definite `A` via
/// Cholesky.
///
/// On factorization failure the ridge escalates from
/// `1e-10 * trace(A) / m` by factors of 10, at most three retries, then the
/// solve fails with a singularity error.
pub fn solve_spd_ridge(a: &Array2<f64>, b: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(Error::Shape(format!("matrix is {}x{}, expected square", m, a.ncols())));
    }
    if b.nrows() != m {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows, expected {m}",
            b.nrows()
        )));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::Precondition(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    check_symmetric(a, 1e-10)?;

    let trace: f64 = a.diag().sum();
    let mut attempt_ridge = ridge;
    let mut escalation = 1e-10 * trace.abs().max(f64::MIN_POSITIVE) / m as f64;
    for attempt in 0..4 {
        if let Some(chol) = cholesky(a, attempt_ridge) {
            return Ok(cholesky_solve_matrix(&chol, b));
        }
        if attempt < 3 {
            attempt_ridge = ridge + escalation;
            escalation *= 10.0;
        }
    }
    Err(Error::Singular(format!(
        "Cholesky factorization failed after ridge escalation to {attempt_ridge:e}"
    )))
}

pub(crate) fn check_symmetric(a: &Array2<f64>, tol: f64) -> Result<()> {
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::Precondition(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of `a + ridge I`, or `None` when a pivot
/// is non-positive or non-finite.
pub(crate) fn cholesky(a: &Array2<f64>, ridge: f64) -> Option<Array2<f64>> {
    let m = a.nrows();
    let mut l = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            if i == j {
                sum += ridge;
            }
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor.
pub(crate) fn cholesky_solve_vec(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = l.nrows();
    let mut y = Array1::<f64>::zeros(m);
    for i in 0..m {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    let mut x = Array1::<f64>::zeros(m);
    for i in (0..m).rev() {
        let mut sum = y[i];
        for k in (i + 1)..m {
            sum -= l[(k, i)] * x[k];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

fn cholesky_solve_matrix(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut x = Array2::<f64>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let solved = cholesky_solve_vec(l, col);
        x.column_mut(j).assign(&solved);
    }
    x
}

/// Forward substitution `L y = b` for a lower-triangular factor. Used by the
/// Mahalanobis scorer, where the quadratic form is `||y||^2`.
pub(crate) fn forward_substitute(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = l.nrows();
    let mut y = Array1::<f64>::zeros(m);
    for i in 0..m {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[(i, k)] * y[k];
        }
        y[i] = sum / l[(i, i)];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::l2_normalize;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit(rows: Array2<f64>) -> EmbeddingMatrix {
        l2_normalize(&EmbeddingMatrix::new(rows).unwrap()).unwrap()
    }

    #[test]
    fn cosine_gram_orthonormal() {
        let a = unit(array![[1.0, 0.0], [0.0, 1.0]]);
        let g = gram(&a, &a, KernelSpec::Cosine).unwrap();
        assert_eq!(g.values, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn gaussian_gram_closed_form() {
        let a = EmbeddingMatrix::new(array![[1.0, 0.0]]).unwrap();
        let b = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = gram(&a, &b, KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert!((g.values[(0, 0)] - 1.0).abs() < 1e-15);
        // ||a-b||^2 = 2 so k = exp(-1)
        assert!((g.values[(0, 1)] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn cosine_gram_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = unit(Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0)));
        let b = unit(Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0)));
        let g = gram(&a, &b, KernelSpec::Cosine).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut dot = 0.0;
                for c in 0..3 {
                    dot += a.data()[(i, c)] * b.data()[(j, c)];
                }
                assert!((g.values[(i, j)] - dot).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn self_gram_is_symmetric_with_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = unit(Array2::from_shape_fn((12, 5), |_| rng.random_range(-1.0..1.0)));
        for kernel in [KernelSpec::Cosine, KernelSpec::gaussian(0.9).unwrap()] {
            let g = gram(&a, &a, kernel).unwrap();
            for i in 0..12 {
                assert!((g.values[(i, i)] - 1.0).abs() <= 1e-9);
                for j in 0..12 {
                    assert!((g.values[(i, j)] - g.values[(j, i)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gram_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = unit(Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0)));
        let b = unit(Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)));
        for kernel in [KernelSpec::Cosine, KernelSpec::gaussian(0.7).unwrap()] {
            let ab = gram(&a, &b, kernel).unwrap();
            let ba = gram(&b, &a, kernel).unwrap();
            for i in 0..6 {
                for j in 0..3 {
                    assert!((ab.values[(i, j)] - ba.values[(j, i)]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn cosine_requires_normalization() {
        let a = EmbeddingMatrix::new(array![[3.0, 4.0]]).unwrap();
        let err = gram(&a, &a, KernelSpec::Cosine).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn gram_shape_mismatch() {
        let a = EmbeddingMatrix::new(array![[1.0, 2.0]]).unwrap();
        let b = EmbeddingMatrix::new(array![[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(gram(&a, &b, KernelSpec::gaussian(1.0).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn knn_self_similarity() {
        let atoms = unit(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let q = atoms.row(2).to_owned();
        let s = knn_atoms(q.view(), &atoms, 1, KernelSpec::Cosine).unwrap();
        assert_eq!(s, vec![2]);
    }

    #[test]
    fn knn_tie_breaks_by_lower_index() {
        let atoms = unit(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let q = array![1.0, 0.0];
        let s = knn_atoms(q.view(), &atoms, 1, KernelSpec::Cosine).unwrap();
        assert_eq!(s, vec![0]);
    }

    #[test]
    fn knn_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let atoms = unit(Array2::from_shape_fn((50, 6), |_| rng.random_range(-1.0..1.0)));
        let q = {
            let raw = Array1::from_shape_fn(6, |_| rng.random_range(-1.0f64..1.0));
            let n = raw.dot(&raw).sqrt();
            raw / n
        };
        let got = knn_atoms(q.view(), &atoms, 5, KernelSpec::Cosine).unwrap();

        let sims: Vec<f64> = (0..50).map(|i| atoms.row(i).dot(&q)).collect();
        let mut order: Vec<usize> = (0..50).collect();
        order.sort_by(|&i, &j| sims[j].partial_cmp(&sims[i]).unwrap().then(i.cmp(&j)));
        assert_eq!(got, order[..5].to_vec());
    }

    #[test]
    fn knn_k_too_large() {
        let atoms = unit(array![[1.0, 0.0]]);
        let q = array![1.0, 0.0];
        assert!(matches!(
            knn_atoms(q.view(), &atoms, 2, KernelSpec::Cosine),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn spd_solve_identity() {
        let a = Array2::eye(3);
        let b = array![[1.0], [2.0], [3.0]];
        let x = solve_spd_ridge(&a, &b, 0.0).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn spd_solve_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let b = array![[2.0], [8.0]];
        let x = solve_spd_ridge(&a, &b, 0.0).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() <= 1e-15);
        assert!((x[(1, 0)] - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn spd_solve_matches_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Array2::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let a = g.t().dot(&g) + Array2::<f64>::eye(6) * 0.5;
        let b = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let x = solve_spd_ridge(&a, &b, 0.0).unwrap();
        let resid = a.dot(&x) - &b;
        let b_inf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r_inf = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r_inf <= 1e-8 * (1.0 + b_inf), "residual {r_inf}");
    }

    #[test]
    fn spd_solve_singular_after_escalation() {
        // Indefinite input: escalating a tiny ridge cannot rescue it.
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        let b = array![[1.0], [1.0]];
        assert!(matches!(solve_spd_ridge(&a, &b, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn spd_solve_rejects_asymmetric() {
        let a = array![[1.0, 0.5], [0.0, 1.0]];
        let b = array![[1.0], [1.0]];
        assert!(matches!(solve_spd_ridge(&a, &b, 0.0), Err(Error::Precondition(_))));
    }
}
