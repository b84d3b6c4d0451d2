//! Estimation-error metrics against a known truth.

use crate::basis::BasisSet;
use crate::data::Covariates;
use crate::error::{check_len, Result};
use crate::exec::{map_chunks, Execution};
use crate::model::{predict_batch, ModelParams};
use crate::synth::Truth;
use nalgebra::DMatrix;

/// A column permutation with per-column sign flips.
///
/// Aligned column `l` is `signs[l] * alpha_hat[:, permutation[l]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub permutation: Vec<usize>,
    pub signs: Vec<i8>,
}

impl Alignment {
    pub fn identity(m: usize) -> Self {
        Self {
            permutation: (0..m).collect(),
            signs: vec![1; m],
        }
    }

    pub fn apply(&self, alpha_hat: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(alpha_hat.nrows(), self.permutation.len(), |i, l| {
            f64::from(self.signs[l]) * alpha_hat[(i, self.permutation[l])]
        })
    }
}

/// Squared distances `(||a - b||^2, ||a + b||^2)` between two columns.
fn pair_costs(a: &DMatrix<f64>, j: usize, b: &DMatrix<f64>, l: usize) -> (f64, f64) {
    let mut minus = 0.0;
    let mut plus = 0.0;
    for (x, y) in a.column(j).iter().zip(b.column(l).iter()) {
        minus += (x - y) * (x - y);
        plus += (x + y) * (x + y);
    }
    (minus, plus)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, `O(m^3)`). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// `min over alignments ||align(alpha_hat) - alpha*||_F^2 / m`, with the minimizer.
///
/// Sign choice decouples per matched pair, so an assignment over the costs
/// `min(||a_j - b_l||^2, ||a_j + b_l||^2)` is exact.
pub fn index_error(alpha_hat: &DMatrix<f64>, alpha_star: &DMatrix<f64>) -> Result<(f64, Alignment)> {
    check_len(alpha_star.nrows(), alpha_hat.nrows(), "index dimension")?;
    check_len(alpha_star.ncols(), alpha_hat.ncols(), "number of indices")?;
    let m = alpha_star.ncols();
    let costs: Vec<(f64, f64)> = (0..m * m)
        .map(|idx| pair_costs(alpha_hat, idx % m, alpha_star, idx / m))
        .collect();
    let pair = |l: usize, j: usize| costs[j + l * m];
    let cost = DMatrix::from_fn(m, m, |l, j| {
        let (minus, plus) = pair(l, j);
        minus.min(plus)
    });
    let permutation = min_cost_assignment(&cost);
    let mut total = 0.0;
    let mut signs = Vec::with_capacity(m);
    for (l, &j) in permutation.iter().enumerate() {
        let (minus, plus) = pair(l, j);
        if minus <= plus {
            signs.push(1);
            total += minus;
        } else {
            signs.push(-1);
            total += plus;
        }
    }
    Ok((total / m as f64, Alignment { permutation, signs }))
}

/// Mean of `(f_hat(x) - f*(x))^2` over the rows of `test_x`, on the
/// linear-predictor scale.
pub fn function_error(
    params_hat: &ModelParams,
    basis: &BasisSet,
    truth: &Truth,
    test_x: &Covariates,
) -> Result<f64> {
    let exec = Execution::default();
    let fhat = predict_batch(params_hat, basis, test_x, exec)?;
    let fstar = predict_batch(&truth.params, basis, test_x, exec)?;
    Ok(mean_squared_difference(&fhat, &fstar))
}

/// [`function_error`] for an arbitrary estimate `f_hat`.
pub fn function_error_with<F>(f_hat: F, basis: &BasisSet, truth: &Truth, test_x: &Covariates) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let exec = Execution::default();
    let fstar = predict_batch(&truth.params, basis, test_x, exec)?;
    let fhat: Vec<f64> = map_chunks(test_x.n(), exec, |r| {
        r.map(|i| f_hat(test_x.row(i))).collect::<Vec<_>>()
    })
    .concat();
    Ok(mean_squared_difference(&fhat, &fstar))
}

fn mean_squared_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
