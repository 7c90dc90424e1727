//! Shared test oracles, kept independent of the library's solve paths.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting; `None` on a (near-)singular
/// pivot. Deliberately a different route than the crate's Cholesky.
pub fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot_row[col];
            for (x, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                *x -= f * p;
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = a[row][n];
        for k in (row + 1)..n {
            sum -= a[row][k] * x[k];
        }
        x[row] = sum / a[row][row];
    }
    Some(x)
}

/// Exhaustive active-set enumeration oracle for
/// `min 1/2 t'Qt - t'b  s.t. t >= 0`: solves the equality system on every
/// support, keeps the feasible candidate with the least objective.
pub fn enumeration_nnk_oracle(q: &Array2<f64>, b: &Array1<f64>) -> (Array1<f64>, f64) {
    let s = b.len();
    assert!(s <= 16, "enumeration oracle is exponential in s");
    let mut best_theta = Array1::<f64>::zeros(s);
    let mut best_obj = 0.0;
    for mask in 1u32..(1 << s) {
        let support: Vec<usize> = (0..s).filter(|&i| mask & (1 << i) != 0).collect();
        let m = support.len();
        let mut system = vec![vec![0.0; m + 1]; m];
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                system[r][c] = q[(i, j)];
            }
            system[r][m] = b[i];
        }
        let Some(sol) = gauss_solve(system) else { continue };
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut theta = Array1::<f64>::zeros(s);
        for (r, &i) in support.iter().enumerate() {
            theta[i] = sol[r];
        }
        let obj = 0.5 * theta.dot(&q.dot(&theta)) - theta.dot(b);
        if obj < best_obj {
            best_obj = obj;
            best_theta = theta;
        }
    }
    (best_theta, best_obj)
}

/// Random SPD instance `(Q, b)` with side `s`.
pub fn random_spd_instance(rng: &mut ChaCha8Rng, s: usize) -> (Array2<f64>, Array1<f64>) {
    let g = Array2::from_shape_fn((s, s), |_| rng.random_range(-1.0..1.0));
    let shift = rng.random_range(0.05..0.6);
    let q = g.t().dot(&g) + Array2::<f64>::eye(s) * shift;
    let b = Array1::from_shape_fn(s, |_| rng.random_range(-1.0..1.0));
    (q, b)
}
