//! The additive index model `f(x; alpha, beta) = sum_j sum_k beta_jk phi_k(alpha_j' x)`,
//! its exact gradients, and the unit-sphere constraint on the projection indices.

use crate::basis::BasisSet;
use crate::data::Covariates;
use crate::error::{check_len, GaimError, Result};
use crate::exec::{map_chunks, Execution};
use nalgebra::DMatrix;

/// Tolerance on `| ||alpha_j|| - 1 |` for a parameter to lie on the constraint set.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Columns with norm below this cannot be projected onto the sphere.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Projection indices `alpha` (`d x m`, unit columns) and basis coefficients
/// `beta` (`m x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl ModelParams {
    /// Validates shapes and the unit-column constraint.
    pub fn new(alpha: DMatrix<f64>, beta: DMatrix<f64>) -> Result<Self> {
        let params = Self::new_unchecked(alpha, beta)?;
        if let Some((j, norm)) = params
            .alpha
            .column_iter()
            .map(|c| c.norm())
            .enumerate()
            .find(|(_, n)| (n - 1.0).abs() > UNIT_NORM_TOL)
        {
            return Err(GaimError::InvalidArgument(format!(
                "alpha column {j} has norm {norm}, expected 1"
            )));
        }
        Ok(params)
    }

    /// Checks shapes only. Used for perturbed parameters in derivative checks.
    pub fn new_unchecked(alpha: DMatrix<f64>, beta: DMatrix<f64>) -> Result<Self> {
        check_len(alpha.ncols(), beta.nrows(), "beta rows vs alpha columns")?;
        if alpha.nrows() == 0 || alpha.ncols() == 0 || beta.ncols() == 0 {
            return Err(GaimError::InvalidArgument("empty parameter matrix".into()));
        }
        Ok(Self { alpha, beta })
    }

    /// Standard initialization: `alpha` holds the first `m` standard basis
    /// vectors of `R^d`, `beta` is zero.
    pub fn standard_init(d: usize, m: usize, k: usize) -> Result<Self> {
        if m == 0 || m > d || k == 0 {
            return Err(GaimError::InvalidArgument(format!(
                "standard init needs 1 <= m <= d and K >= 1 (d={d}, m={m}, K={k})"
            )));
        }
        Self::new(DMatrix::identity(d, m), DMatrix::zeros(m, k))
    }

    pub fn dim(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_indices(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn n_basis(&self) -> usize {
        self.beta.ncols()
    }

    /// Largest deviation of a column norm of `alpha` from one.
    pub fn unit_norm_error(&self) -> f64 {
        self.alpha
            .column_iter()
            .map(|c| (c.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_compatible(&self, basis: &BasisSet, d: usize) -> Result<()> {
        check_len(self.n_basis(), basis.len(), "beta columns vs basis size")?;
        check_len(self.dim(), d, "covariate dimension")
    }
}

/// `Phi(x; alpha)`: the `m x K` matrix with entries `phi_k(alpha_j' x)`.
///
/// This is the gradient of `f(x; alpha, beta)` with respect to `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(pub DMatrix<f64>);

impl FeatureMatrix {
    /// Frobenius inner product with `beta`, which reproduces `f(x)`.
    pub fn contract(&self, beta: &DMatrix<f64>) -> f64 {
        self.0.dot(beta)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear predictor `f(x; alpha, beta)` for one sample.
pub fn predict_eta(params: &ModelParams, basis: &BasisSet, x: &[f64]) -> Result<f64> {
    params.check_compatible(basis, x.len())?;
    Ok(eta_unchecked(params, basis, x))
}

#[inline]
fn eta_unchecked(params: &ModelParams, basis: &BasisSet, x: &[f64]) -> f64 {
    let mut eta = 0.0;
    for (j, col) in params.alpha.column_iter().enumerate() {
        let t = dot(col.as_slice(), x);
        for k in 0..basis.len() {
            eta += params.beta[(j, k)] * basis.eval(k, t);
        }
    }
    eta
}

pub fn feature_matrix(params: &ModelParams, basis: &BasisSet, x: &[f64]) -> Result<FeatureMatrix> {
    params.check_compatible(basis, x.len())?;
    let m = params.n_indices();
    let mut phi = DMatrix::zeros(m, basis.len());
    for (j, col) in params.alpha.column_iter().enumerate() {
        let t = dot(col.as_slice(), x);
        for k in 0..basis.len() {
            phi[(j, k)] = basis.eval(k, t);
        }
    }
    Ok(FeatureMatrix(phi))
}

/// Gradient of `f(x; alpha, beta)` with respect to `alpha` (`d x m`).
///
/// Column `j` is `(sum_k beta_jk phi_k'(alpha_j' x)) x`.
pub fn grad_eta_alpha(params: &ModelParams, basis: &BasisSet, x: &[f64]) -> Result<DMatrix<f64>> {
    params.check_compatible(basis, x.len())?;
    let (d, m) = params.alpha.shape();
    let mut g = DMatrix::zeros(d, m);
    for j in 0..m {
        let t = dot(params.alpha.column(j).as_slice(), x);
        let slope: f64 = (0..basis.len())
            .map(|k| params.beta[(j, k)] * basis.deriv(k, t))
            .sum();
        for (gi, xi) in g.column_mut(j).iter_mut().zip(x) {
            *gi = slope * xi;
        }
    }
    Ok(g)
}

/// Normalizes every column to unit Euclidean norm.
pub fn project_to_sphere_columns(alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = alpha.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm >= DEGENERATE_NORM) {
            return Err(GaimError::DegenerateStep { column: j, norm });
        }
        col /= norm;
    }
    Ok(out)
}

/// Projects `candidate` column-wise, keeping the matching column of `previous`
/// wherever the candidate column is degenerate. Returns the number of columns
/// retained this way.
pub(crate) fn project_with_fallback(
    candidate: &DMatrix<f64>,
    previous: &DMatrix<f64>,
) -> (DMatrix<f64>, usize) {
    let mut out = candidate.clone();
    let mut retained = 0;
    for j in 0..out.ncols() {
        let norm = out.column(j).norm();
        if norm >= DEGENERATE_NORM {
            out.column_mut(j).unscale_mut(norm);
        } else {
            out.column_mut(j).copy_from(&previous.column(j));
            retained += 1;
        }
    }
    (out, retained)
}

/// Which quantities a batch pass should produce.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchRequest {
    pub grad_beta: bool,
    pub grad_alpha: bool,
}

/// Result of a batch pass over all samples.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Linear predictor per sample.
    pub eta: Vec<f64>,
    /// `(1/n) sum_i w_i Phi(x_i; alpha)` when requested.
    pub grad_beta: Option<DMatrix<f64>>,
    /// `(1/n) sum_i w_i grad_alpha f(x_i)` when requested.
    pub grad_alpha: Option<DMatrix<f64>>,
}

struct ChunkPartial {
    eta: Vec<f64>,
    grad_beta: Vec<f64>,
    grad_alpha: Vec<f64>,
}

/// One pass over the data computing `eta_i`, then the per-sample weight
/// `w_i = weight(y_i, eta_i)`, and the weighted averages of `Phi(x_i)` and
/// `grad_alpha f(x_i)`.
///
/// Partial sums are formed per fixed-size chunk and added in chunk order, so
/// the result does not depend on `exec`.
pub fn weighted_gradients<W>(
    params: &ModelParams,
    basis: &BasisSet,
    x: &Covariates,
    y: &[f64],
    exec: Execution,
    request: BatchRequest,
    weight: W,
) -> Result<BatchOutput>
where
    W: Fn(f64, f64) -> f64 + Sync + Send,
{
    params.check_compatible(basis, x.dim())?;
    check_len(x.n(), y.len(), "response length")?;
    let (d, m) = params.alpha.shape();
    let kk = basis.len();
    let n = x.n();
    let alpha = params.alpha.as_slice();
    let beta = params.beta.as_slice();
    let need_derivs = request.grad_alpha;
    let need_weight = request.grad_alpha || request.grad_beta;

    let partials = map_chunks(n, exec, |range| {
        let mut part = ChunkPartial {
            eta: Vec::with_capacity(range.len()),
            grad_beta: vec![0.0; if request.grad_beta { m * kk } else { 0 }],
            grad_alpha: vec![0.0; if request.grad_alpha { d * m } else { 0 }],
        };
        let mut vals = vec![0.0; m * kk];
        let mut ders = vec![0.0; m * kk];
        let mut slopes = vec![0.0; m];
        for i in range {
            let xi = x.row(i);
            let mut eta = 0.0;
            for j in 0..m {
                let t = dot(&alpha[j * d..(j + 1) * d], xi);
                let v = &mut vals[j * kk..(j + 1) * kk];
                if need_derivs {
                    let dv = &mut ders[j * kk..(j + 1) * kk];
                    basis.eval_with_deriv(t, v, dv);
                    let mut s = 0.0;
                    for k in 0..kk {
                        let b = beta[j + k * m];
                        eta += b * v[k];
                        s += b * dv[k];
                    }
                    slopes[j] = s;
                } else {
                    for (k, vk) in v.iter_mut().enumerate() {
                        *vk = basis.eval(k, t);
                        eta += beta[j + k * m] * *vk;
                    }
                }
            }
            part.eta.push(eta);
            if !need_weight {
                continue;
            }
            let w = weight(y[i], eta);
            if request.grad_beta {
                for j in 0..m {
                    for k in 0..kk {
                        part.grad_beta[j + k * m] += w * vals[j * kk + k];
                    }
                }
            }
            if request.grad_alpha {
                for j in 0..m {
                    let c = w * slopes[j];
                    for (g, xv) in part.grad_alpha[j * d..(j + 1) * d].iter_mut().zip(xi) {
                        *g += c * xv;
                    }
                }
            }
        }
        part
    });

    let mut eta = Vec::with_capacity(n);
    let mut gb = vec![0.0; if request.grad_beta { m * kk } else { 0 }];
    let mut ga = vec![0.0; if request.grad_alpha { d * m } else { 0 }];
    for p in partials {
        eta.extend_from_slice(&p.eta);
        gb.iter_mut().zip(&p.grad_beta).for_each(|(a, b)| *a += b);
        ga.iter_mut().zip(&p.grad_alpha).for_each(|(a, b)| *a += b);
    }
    let inv_n = 1.0 / n as f64;
    Ok(BatchOutput {
        eta,
        grad_beta: request
            .grad_beta
            .then(|| DMatrix::from_vec(m, kk, gb) * inv_n),
        grad_alpha: request
            .grad_alpha
            .then(|| DMatrix::from_vec(d, m, ga) * inv_n),
    })
}

/// Linear predictor for every row of `x`.
pub fn predict_batch(
    params: &ModelParams,
    basis: &BasisSet,
    x: &Covariates,
    exec: Execution,
) -> Result<Vec<f64>> {
    params.check_compatible(basis, x.dim())?;
    let parts = map_chunks(x.n(), exec, |range| {
        range
            .map(|i| eta_unchecked(params, basis, x.row(i)))
            .collect::<Vec<_>>()
    });
    Ok(parts.concat())
}
