//! Univariate basis functions for the ridge functions.
//!
//! The default basis is the shifted Legendre family
//! `phi_k(t) = P_k(t) - P_k(0)` for `k = 1..=K`, where `P_k` is the degree-k
//! Legendre polynomial normalized so that `P_k(1) = 1`. Every basis function
//! vanishes at zero, which pins down the intercept of each ridge function.
//!
//! Coefficients are expanded into the monomial basis once at construction so
//! that the hot loop evaluates plain polynomials. Arguments are not clamped to
//! `[-1, 1]`.

use crate::error::{GaimError, Result};

/// A set of `K` polynomial basis functions with exact first derivatives.
///
/// Index `k` in the methods below is zero-based: `eval(0, t)` is the degree-one
/// function.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    /// Monomial coefficients of each basis function, lowest power first.
    pub(crate) values: Vec<Vec<f64>>,
    /// Monomial coefficients of each derivative, lowest power first.
    pub(crate) derivs: Vec<Vec<f64>>,
}

/// Monomial coefficients of the Legendre polynomials `P_0..=P_max`.
fn legendre_coefficients(max_degree: usize) -> Vec<Vec<f64>> {
    let mut polys: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
    for k in 1..max_degree {
        let kf = k as f64;
        let mut next = vec![0.0; k + 2];
        for (p, &c) in polys[k].iter().enumerate() {
            next[p + 1] += (2.0 * kf + 1.0) * c;
        }
        for (p, &c) in polys[k - 1].iter().enumerate() {
            next[p] -= kf * c;
        }
        for c in &mut next {
            *c /= kf + 1.0;
        }
        polys.push(next);
    }
    polys.truncate(max_degree + 1);
    polys
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(p, &c)| p as f64 * c)
        .collect()
}

#[inline]
fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

impl BasisSet {
    /// Shifted Legendre basis of degrees `1..=max_degree`.
    pub fn shifted_legendre(max_degree: usize) -> Result<Self> {
        if max_degree == 0 {
            return Err(GaimError::InvalidArgument(
                "basis needs max_degree >= 1".into(),
            ));
        }
        let polys = legendre_coefficients(max_degree);
        let values: Vec<Vec<f64>> = polys
            .into_iter()
            .skip(1)
            .map(|mut c| {
                // Subtracting P_k(0) is exactly zeroing the constant term.
                c[0] = 0.0;
                c
            })
            .collect();
        Self::from_monomials(values)
    }

    /// Basis from explicit monomial coefficients (lowest power first).
    ///
    /// Every function must vanish at zero, i.e. have a zero constant term.
    pub fn from_monomials(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(GaimError::InvalidArgument("empty basis".into()));
        }
        for (k, c) in values.iter().enumerate() {
            if c.first().copied().unwrap_or(0.0) != 0.0 {
                return Err(GaimError::InvalidArgument(format!(
                    "basis function {k} does not vanish at zero"
                )));
            }
        }
        let derivs = values.iter().map(|c| derivative(c)).collect();
        Ok(Self { values, derivs })
    }

    /// Number of basis functions `K`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn eval(&self, k: usize, t: f64) -> f64 {
        horner(&self.values[k], t)
    }

    #[inline]
    pub fn deriv(&self, k: usize, t: f64) -> f64 {
        horner(&self.derivs[k], t)
    }

    /// All `K` values at `t`.
    pub fn eval_row(&self, t: f64) -> Vec<f64> {
        (0..self.len()).map(|k| self.eval(k, t)).collect()
    }

    /// Writes values and derivatives at `t` into the given buffers (length `K`).
    #[inline]
    pub fn eval_with_deriv(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) {
        for k in 0..self.values.len() {
            values[k] = horner(&self.values[k], t);
            derivs[k] = horner(&self.derivs[k], t);
        }
    }

    /// Monomial coefficients of basis function `k`.
    pub fn coefficients(&self, k: usize) -> &[f64] {
        &self.values[k]
    }
}
