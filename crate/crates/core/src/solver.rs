//! Exact solver for the non-negative kernel-regression subproblem
//!
//! ```text
//!     minimize_theta  1/2 theta' K_SS theta - theta' K_Sq
//!     subject to      theta >= 0
//! ```
//!
//! plus the entropy-regularized variant, which folds `lambda * log p_S` into
//! the linear term, and the reconstruction-error evaluator used as the OOD
//! score.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::kernel::{check_symmetric, cholesky, cholesky_solve_vec, solve_spd_ridge};

/// Interpretation of the entropy term.
///
/// `CrossEntropy` discounts the similarity of low-probability atoms
/// (effective linear term `K_Sq + lambda * log p_S`, with `log p <= 0`),
/// which is what drives assignments toward frequently selected atoms and
/// lets pruning work. `Literal` applies the opposite sign, rewarding
/// low-probability atoms instead; it exists for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropySign {
    #[default]
    CrossEntropy,
    Literal,
}

/// Result of a non-negative solve over a candidate atom set `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnkSolution {
    /// Weights over `S`; entries outside `support` are exactly zero.
    pub theta: Array1<f64>,
    /// Positions within `S` holding strictly positive weight, ascending.
    pub support: Vec<usize>,
    /// Objective value at `theta` (for the regularized variant, the value of
    /// the modified problem).
    pub objective: f64,
}

impl NnkSolution {
    fn from_theta(theta: Array1<f64>, k_ss: &Array2<f64>, rhs: ArrayView1<'_, f64>) -> Self {
        let support: Vec<usize> =
            theta.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect();
        let objective = quadratic_value(theta.view(), k_ss, rhs);
        NnkSolution { theta, support, objective }
    }
}

fn quadratic_value(theta: ArrayView1<'_, f64>, k_ss: &Array2<f64>, rhs: ArrayView1<'_, f64>) -> f64 {
    let k_theta = k_ss.dot(&theta);
    0.5 * theta.dot(&k_theta) - theta.dot(&rhs)
}

/// Solves the non-negative quadratic subproblem exactly.
///
/// Warm-started from the unconstrained solve; when that is infeasible, a
/// Lawson-Hanson active-set iteration finds the KKT point. Ties in the
/// gradient selection break toward the lower index.
pub fn nnk_solve(k_ss: &Array2<f64>, k_sq: ArrayView1<'_, f64>) -> Result<NnkSolution> {
    let s = k_ss.nrows();
    if s == 0 {
        return Err(Error::Precondition("candidate set must be non-empty".into()));
    }
    if k_ss.ncols() != s {
        return Err(Error::Shape(format!("K_SS is {}x{}, expected square", s, k_ss.ncols())));
    }
    if k_sq.len() != s {
        return Err(Error::Shape(format!(
            "K_Sq has length {}, expected {s}",
            k_sq.len()
        )));
    }
    if let Some(v) = k_ss.iter().chain(k_sq.iter()).find(|v| !v.is_finite()) {
        return Err(Error::Precondition(format!("non-finite solver input {v}")));
    }
    check_symmetric(k_ss, 1e-10)?;

    // Warm start: the unconstrained minimizer, feasible in the common case
    // where the query sits inside the polytope of its selected atoms.
    if let Some(l) = cholesky(k_ss, 0.0) {
        let z = cholesky_solve_vec(&l, k_sq);
        if z.iter().all(|&v| v >= 0.0) {
            return Ok(NnkSolution::from_theta(z, k_ss, k_sq));
        }
    }

    active_set_nnls(k_ss, k_sq)
}

/// Lawson-Hanson active-set iteration on the quadratic form.
fn active_set_nnls(k_ss: &Array2<f64>, k_sq: ArrayView1<'_, f64>) -> Result<NnkSolution> {
    let s = k_ss.nrows();
    let b_inf = k_sq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let grad_tol = 1e-10 * (1.0 + b_inf);

    let mut theta = Array1::<f64>::zeros(s);
    let mut passive = vec![false; s];
    let max_outer = 3 * s;

    for _outer in 0..=max_outer {
        // Negative gradient; positive entries off the passive set violate KKT.
        let grad = k_sq.to_owned() - k_ss.dot(&theta);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..s {
            if !passive[j]
                && grad[j] > grad_tol
                && best.is_none_or(|(_, g)| grad[j] > g)
            {
                best = Some((j, grad[j]));
            }
        }
        let Some((enter, _)) = best else {
            return Ok(NnkSolution::from_theta(theta, k_ss, k_sq));
        };
        passive[enter] = true;

        // Inner loop: restore feasibility on the passive set.
        let mut inner = 0usize;
        loop {
            inner += 1;
            if inner > s + 1 {
                return Err(Error::Convergence(
                    "active-set inner loop exceeded its budget".into(),
                ));
            }
            let p: Vec<usize> = (0..s).filter(|&j| passive[j]).collect();
            let z_p = solve_on_support(k_ss, k_sq, &p)?;

            if z_p.iter().all(|&v| v > 0.0) {
                theta.fill(0.0);
                for (&j, &v) in p.iter().zip(z_p.iter()) {
                    theta[j] = v;
                }
                break;
            }

            // Step toward z until the first coordinate hits the boundary.
            let mut alpha = f64::INFINITY;
            let mut binding: Vec<usize> = Vec::new();
            for (&j, &z) in p.iter().zip(z_p.iter()) {
                if z <= 0.0 {
                    let denom = theta[j] - z;
                    let t = if denom > 0.0 { theta[j] / denom } else { 0.0 };
                    if t < alpha {
                        alpha = t;
                        binding.clear();
                        binding.push(j);
                    } else if t == alpha {
                        binding.push(j);
                    }
                }
            }
            for (&j, &z) in p.iter().zip(z_p.iter()) {
                theta[j] += alpha * (z - theta[j]);
            }
            // The binding coordinates sit on the boundary by construction;
            // rounding in the update must not keep them (barely) positive,
            // or the pass would remove nothing and the iteration would stall.
            for &j in &binding {
                theta[j] = 0.0;
            }
            for &j in &p {
                if theta[j] <= 0.0 {
                    theta[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }

    Err(Error::Convergence(format!(
        "active-set iteration exceeded {max_outer} iterations"
    )))
}

/// Equality-constrained solve restricted to the passive coordinates.
fn solve_on_support(
    k_ss: &Array2<f64>,
    k_sq: ArrayView1<'_, f64>,
    support: &[usize],
) -> Result<Vec<f64>> {
    let m = support.len();
    let mut q = Array2::<f64>::zeros((m, m));
    let mut b = Array2::<f64>::zeros((m, 1));
    for (a, &i) in support.iter().enumerate() {
        b[(a, 0)] = k_sq[i];
        for (c, &j) in support.iter().enumerate() {
            q[(a, c)] = k_ss[(i, j)];
        }
    }
    let x = solve_spd_ridge(&q, &b, 0.0)?;
    Ok(x.column(0).to_vec())
}

/// Entropy-regularized variant: identical to [`nnk_solve`] with the linear
/// term shifted by `lambda * log p_S`. With `lambda = 0` it takes the plain
/// path unchanged.
pub fn ec_nnk_solve(
    k_ss: &Array2<f64>,
    k_sq: ArrayView1<'_, f64>,
    log_p: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<NnkSolution> {
    ec_nnk_solve_with_sign(k_ss, k_sq, log_p, lambda, EntropySign::CrossEntropy)
}

/// [`ec_nnk_solve`] with an explicit sign convention for the entropy term.
pub fn ec_nnk_solve_with_sign(
    k_ss: &Array2<f64>,
    k_sq: ArrayView1<'_, f64>,
    log_p: ArrayView1<'_, f64>,
    lambda: f64,
    sign: EntropySign,
) -> Result<NnkSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if log_p.len() != k_sq.len() {
        return Err(Error::Shape(format!(
            "log_p has length {}, expected {}",
            log_p.len(),
            k_sq.len()
        )));
    }
    if let Some(v) = log_p.iter().find(|v| !v.is_finite()) {
        return Err(Error::Precondition(format!("non-finite log probability {v}")));
    }
    if lambda == 0.0 {
        return nnk_solve(k_ss, k_sq);
    }
    let shifted = match sign {
        EntropySign::CrossEntropy => k_sq.to_owned() + &(log_p.to_owned() * lambda),
        EntropySign::Literal => k_sq.to_owned() - &(log_p.to_owned() * lambda),
    };
    nnk_solve(k_ss, shifted.view())
}

/// Reconstruction error `1/2 theta' K_SS theta - theta' K_Sq`, the quantity
/// used directly as the OOD score.
pub fn reconstruction_error(
    theta: ArrayView1<'_, f64>,
    k_ss: &Array2<f64>,
    k_sq: ArrayView1<'_, f64>,
) -> Result<f64> {
    let s = theta.len();
    if k_ss.nrows() != s || k_ss.ncols() != s || k_sq.len() != s {
        return Err(Error::Shape(format!(
            "inconsistent shapes: theta {s}, K_SS {}x{}, K_Sq {}",
            k_ss.nrows(),
            k_ss.ncols(),
            k_sq.len()
        )));
    }
    Ok(quadratic_value(theta, k_ss, k_sq))
}

/// KKT residual check used by the tests: stationarity on the support,
/// non-negative gradient off it.
pub fn kkt_satisfied(
    k_ss: &Array2<f64>,
    k_sq: ArrayView1<'_, f64>,
    solution: &NnkSolution,
    tol: f64,
) -> bool {
    let residual = k_ss.dot(&solution.theta) - k_sq;
    solution.theta.iter().enumerate().all(|(j, &t)| {
        if t > 0.0 {
            residual[j].abs() <= tol
        } else {
            residual[j] >= -tol
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_atom_exact_match() {
        let sol = nnk_solve(&array![[1.0]], array![1.0].view()).unwrap();
        assert_eq!(sol.theta, array![1.0]);
        assert_eq!(sol.support, vec![0]);
        assert_eq!(sol.objective, -0.5);
    }

    #[test]
    fn two_atoms_boundary_solution() {
        let k_ss = array![[1.0, 0.5], [0.5, 1.0]];
        let sol = nnk_solve(&k_ss, array![0.8, 0.2].view()).unwrap();
        assert!((sol.theta[0] - 0.8).abs() <= 1e-12);
        assert_eq!(sol.theta[1], 0.0);
        assert_eq!(sol.support, vec![0]);
        assert!((sol.objective - (-0.32)).abs() <= 1e-12);
        assert!(kkt_satisfied(&k_ss, array![0.8, 0.2].view(), &sol, 1e-9));
    }

    #[test]
    fn two_atoms_interior_solution() {
        let k_ss = array![[1.0, 0.5], [0.5, 1.0]];
        let sol = nnk_solve(&k_ss, array![0.8, 0.6].view()).unwrap();
        assert!((sol.theta[0] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((sol.theta[1] - 4.0 / 15.0).abs() <= 1e-12);
        assert_eq!(sol.support, vec![0, 1]);
        // Closed form: -(0.8 * 2/3 + 0.6 * 4/15) / 2.
        assert!((sol.objective - (-0.3466666666666667)).abs() <= 1e-12);
    }

    #[test]
    fn nonsymmetric_input_rejected() {
        let k_ss = array![[1.0, 0.4], [0.5, 1.0]];
        assert!(matches!(
            nnk_solve(&k_ss, array![1.0, 1.0].view()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn ec_lambda_zero_is_plain_solve() {
        let k_ss = array![[1.0, 0.5], [0.5, 1.0]];
        let b = array![0.8, 0.2];
        let logp = array![-0.7, -0.7];
        let plain = nnk_solve(&k_ss, b.view()).unwrap();
        let ec = ec_nnk_solve(&k_ss, b.view(), logp.view(), 0.0).unwrap();
        assert_eq!(plain, ec);
    }

    #[test]
    fn ec_one_dim_closed_form() {
        let sol = ec_nnk_solve(
            &array![[1.0]],
            array![0.9].view(),
            array![0.5f64.ln()].view(),
            0.1,
        )
        .unwrap();
        let expected = 0.9 + 0.1 * 0.5f64.ln();
        assert!((sol.theta[0] - expected).abs() <= 1e-15, "{}", sol.theta[0]);
    }

    #[test]
    fn ec_one_dim_clamps_to_zero() {
        let sol = ec_nnk_solve(
            &array![[1.0]],
            array![0.05].view(),
            array![-1.0].view(),
            0.1,
        )
        .unwrap();
        assert_eq!(sol.theta, array![0.0]);
        assert!(sol.support.is_empty());
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn literal_sign_rewards_low_probability_atoms() {
        // Same instance as the clamp case: the literal sign flips the shift,
        // so the weight comes back positive instead.
        let sol = ec_nnk_solve_with_sign(
            &array![[1.0]],
            array![0.05].view(),
            array![-1.0].view(),
            0.1,
            EntropySign::Literal,
        )
        .unwrap();
        assert!((sol.theta[0] - 0.15).abs() <= 1e-15);
    }

    #[test]
    fn ec_rejects_non_finite_log_p() {
        let err = ec_nnk_solve(
            &array![[1.0]],
            array![0.5].view(),
            array![f64::NEG_INFINITY].view(),
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn reconstruction_error_examples() {
        let v = reconstruction_error(array![1.0].view(), &array![[1.0]], array![1.0].view());
        assert_eq!(v.unwrap(), -0.5);

        let k_ss = array![[1.0, 0.5], [0.5, 1.0]];
        let v = reconstruction_error(array![0.0, 0.0].view(), &k_ss, array![0.8, 0.2].view());
        assert_eq!(v.unwrap(), 0.0);

        let v = reconstruction_error(array![0.8, 0.0].view(), &k_ss, array![0.8, 0.2].view());
        assert!((v.unwrap() - (-0.32)).abs() <= 1e-15);
    }

    #[test]
    fn reconstruction_error_shape_mismatch() {
        let err = reconstruction_error(
            array![1.0, 2.0].view(),
            &array![[1.0]],
            array![1.0].view(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn scale_covariance_one_dim() {
        for c in [0.5, 1.0, 2.0, 7.5] {
            let sol = nnk_solve(&array![[0.8]], array![0.4 * c].view()).unwrap();
            assert!((sol.theta[0] - c * 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let s = rng.random_range(1..=6);
            let g = Array2::from_shape_fn((s, s), |_| rng.random_range(-1.0..1.0));
            let q = g.t().dot(&g) + Array2::<f64>::eye(s) * 0.5;
            let b = Array1::from_shape_fn(s, |_| rng.random_range(-1.0..1.0));
            let sol = nnk_solve(&q, b.view()).unwrap();
            assert!(sol.theta.iter().all(|&t| t >= 0.0));
            assert!(sol.objective <= 1e-15);
            assert!(kkt_satisfied(&q, b.view(), &sol, 1e-9));
        }
    }

    #[test]
    fn strongly_negative_linear_terms_do_not_stall() {
        // The entropy-discounted regime: most coordinates end up at the
        // boundary, which once stalled the inner loop on a rounding residue.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..2000 {
            let s = rng.random_range(1..=8);
            let g = Array2::from_shape_fn((s, s), |_| rng.random_range(-1.0..1.0));
            let q = g.t().dot(&g) + Array2::<f64>::eye(s) * rng.random_range(0.01..0.5);
            let b = Array1::from_shape_fn(s, |_| rng.random_range(-2.0..0.5));
            let sol = nnk_solve(&q, b.view()).unwrap();
            assert!(kkt_satisfied(&q, b.view(), &sol, 1e-8));
        }
    }

    #[test]
    fn adding_an_atom_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = rng.random_range(2..=6);
            let g = Array2::from_shape_fn((s, s), |_| rng.random_range(-1.0..1.0));
            let q = g.t().dot(&g) + Array2::<f64>::eye(s) * 0.5;
            let b = Array1::from_shape_fn(s, |_| rng.random_range(-1.0..1.0));
            let sub_q = q.slice(ndarray::s![..s - 1, ..s - 1]).to_owned();
            let sub_b = b.slice(ndarray::s![..s - 1]).to_owned();
            let full = nnk_solve(&q, b.view()).unwrap();
            let sub = nnk_solve(&sub_q, sub_b.view()).unwrap();
            assert!(full.objective <= sub.objective + 1e-12);
        }
    }
}
