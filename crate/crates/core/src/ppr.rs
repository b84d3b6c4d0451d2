//! Stage-wise projection pursuit regression with cubic-polynomial ridge
//! functions and backfitting. Identity link, squared-error loss.
//!
//! Components are added one at a time against the current residuals. Within a
//! component the ridge polynomial (ordinary least squares on `1, t, .., t^p`)
//! and the index (one Gauss-Newton step, then normalization) are updated in
//! turn. After all components are in, backfitting sweeps refit each one
//! against its partial residuals.

use crate::data::{Covariates, Dataset};
use crate::error::{check_len, GaimError, Result};
use crate::model::DEGENERATE_NORM;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Maximum number of step halvings tried when a Gauss-Newton step raises the RSS.
pub const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    pub m: usize,
    pub max_inner_iters: usize,
    pub max_backfit_passes: usize,
    pub tol: f64,
    pub ridge_degree: usize,
}

impl PprConfig {
    pub fn new(m: usize) -> Self {
        Self { m, max_inner_iters: 50, max_backfit_passes: 5, tol: 1e-6, ridge_degree: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GaimError::InvalidArgument(msg.into()));
        if self.m == 0 {
            return bad("ppr needs at least one component");
        }
        if self.max_inner_iters == 0 || self.max_backfit_passes == 0 {
            return bad("ppr iteration caps must be >= 1");
        }
        if !(self.tol > 0.0) {
            return bad("ppr tolerance must be positive");
        }
        if self.ridge_degree == 0 {
            return bad("ridge degree must be >= 1");
        }
        Ok(())
    }
}

/// One ridge term `sum_{p >= 1} coefs[p - 1] * (alpha' x)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PprComponent {
    pub alpha: DVector<f64>,
    pub coefs: Vec<f64>,
}

impl PprComponent {
    pub fn ridge(&self, t: f64) -> f64 {
        self.coefs.iter().rev().fold(0.0, |acc, c| (acc + c) * t)
    }

    fn ridge_deriv(&self, t: f64) -> f64 {
        self.coefs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (p, c)| acc * t + (p + 1) as f64 * c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.ridge(project(&self.alpha, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprModel {
    pub components: Vec<PprComponent>,
    /// Sum of the per-component intercepts.
    pub intercept: f64,
}

impl PprModel {
    /// Index matrix with one unit column per component.
    pub fn alpha(&self) -> DMatrix<f64> {
        let cols: Vec<_> = self.components.iter().map(|c| c.alpha.clone()).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.components.iter().map(|c| c.eval(x)).sum::<f64>()
    }

    pub fn predict_batch(&self, x: &Covariates) -> Vec<f64> {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PprTrace {
    /// RSS of the fitted component after every ridge step, in order of computation.
    pub ridge_rss: Vec<f64>,
    /// Alternation count per component fit (forward fits first, then backfits).
    pub inner_iters: Vec<usize>,
    pub backfit_passes: usize,
    /// Least-squares systems that were rank deficient and solved by minimum norm.
    pub singular_solves: usize,
    /// Gauss-Newton steps rejected, leaving the index unchanged.
    pub retained_alpha: usize,
    /// Total residual sum of squares after the forward stage and after each backfit pass.
    pub total_rss: Vec<f64>,
}

fn project(alpha: &DVector<f64>, x: &[f64]) -> f64 {
    alpha.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Minimum-norm least-squares solution and whether the system was rank deficient.
fn lstsq(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let cols = a.ncols();
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * cols.max(1) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let sol = if smax > 0.0 {
        svd.solve(b, eps).expect("u and v were computed")
    } else {
        DVector::zeros(cols)
    };
    (sol, rank < cols)
}

struct Fitter<'a> {
    x: &'a Covariates,
    degree: usize,
    trace: &'a mut PprTrace,
}

/// A component together with its own intercept and current fit statistics.
struct Fitted {
    comp: PprComponent,
    intercept: f64,
    rss: f64,
}

impl Fitter<'_> {
    /// OLS of `r` on `1, t, .., t^p` at index `alpha`.
    fn ridge_step(&mut self, alpha: &DVector<f64>, r: &DVector<f64>) -> Fitted {
        let n = self.x.n();
        let p = self.degree;
        let mut a = DMatrix::zeros(n, p + 1);
        for (i, row) in self.x.rows().enumerate() {
            let t = project(alpha, row);
            let mut pow = 1.0;
            for q in 0..=p {
                a[(i, q)] = pow;
                pow *= t;
            }
        }
        let (coef, singular) = lstsq(a.clone(), r);
        self.trace.singular_solves += singular as usize;
        let rss = (r - a * &coef).norm_squared();
        self.trace.ridge_rss.push(rss);
        Fitted {
            comp: PprComponent { alpha: alpha.clone(), coefs: coef.as_slice()[1..].to_vec() },
            intercept: coef[0],
            rss,
        }
    }

    /// Solves `min || res - diag(f'(t)) X delta ||` for the index increment.
    fn gauss_newton_direction(&mut self, fit: &Fitted, r: &DVector<f64>) -> DVector<f64> {
        let n = self.x.n();
        let d = self.x.dim();
        let mut j = DMatrix::zeros(n, d);
        let mut res = DVector::zeros(n);
        for (i, row) in self.x.rows().enumerate() {
            let t = project(&fit.comp.alpha, row);
            let slope = fit.comp.ridge_deriv(t);
            res[i] = r[i] - fit.intercept - fit.comp.ridge(t);
            for (c, xv) in row.iter().enumerate() {
                j[(i, c)] = slope * xv;
            }
        }
        let (delta, singular) = lstsq(j, &res);
        self.trace.singular_solves += singular as usize;
        delta
    }

    /// Alternates ridge and index steps from `alpha0` until the relative RSS change is below `tol`.
    fn fit_component(&mut self, alpha0: DVector<f64>, r: &DVector<f64>, cfg: &PprConfig) -> Fitted {
        let mut fit = self.ridge_step(&alpha0, r);
        let mut iters = 0;
        while iters < cfg.max_inner_iters {
            iters += 1;
            let delta = self.gauss_newton_direction(&fit, r);
            let mut accepted = None;
            let mut scale = 1.0;
            for _ in 0..=MAX_STEP_HALVINGS {
                let cand = &fit.comp.alpha + &delta * scale;
                let norm = cand.norm();
                if !(norm > DEGENERATE_NORM) || !norm.is_finite() {
                    break;
                }
                let trial = self.ridge_step(&(cand / norm), r);
                if trial.rss <= fit.rss {
                    accepted = Some(trial);
                    break;
                }
                scale *= 0.5;
            }
            let Some(next) = accepted else {
                self.trace.retained_alpha += 1;
                break;
            };
            let change = (fit.rss - next.rss) / fit.rss.max(f64::MIN_POSITIVE);
            fit = next;
            if change < cfg.tol {
                break;
            }
        }
        self.trace.inner_iters.push(iters);
        fit
    }
}

/// Index direction used to start component `j`: the normalized OLS slope of
/// `r` on `x`, or the coordinate vector `e_{j mod d}` when that is zero.
fn initial_direction(x: &Covariates, r: &DVector<f64>, j: usize, trace: &mut PprTrace) -> DVector<f64> {
    let d = x.dim();
    let mut a = DMatrix::zeros(x.n(), d + 1);
    for (i, row) in x.rows().enumerate() {
        a[(i, 0)] = 1.0;
        for (c, v) in row.iter().enumerate() {
            a[(i, c + 1)] = *v;
        }
    }
    let (coef, singular) = lstsq(a, r);
    trace.singular_solves += singular as usize;
    let slope = coef.rows(1, d).into_owned();
    let norm = slope.norm();
    if norm > 1e-10 * (1.0 + r.amax()) {
        slope / norm
    } else {
        let mut e = DVector::zeros(d);
        e[j % d] = 1.0;
        e
    }
}

fn fitted_values(f: &Fitted, x: &Covariates) -> DVector<f64> {
    DVector::from_iterator(x.n(), x.rows().map(|row| f.intercept + f.comp.eval(row)))
}

/// Fits `cfg.m` ridge components to `data` by forward stage-wise fitting followed by backfitting.
pub fn ppr_fit(data: &Dataset, cfg: &PprConfig) -> Result<(PprModel, PprTrace)> {
    cfg.validate()?;
    check_len(data.n(), data.y.len(), "response length")?;
    if data.y.iter().any(|v| !v.is_finite()) {
        return Err(GaimError::InvalidArgument("ppr responses must be finite".into()));
    }
    let x = &data.x;
    let y = DVector::from_column_slice(&data.y);
    let mut trace = PprTrace::default();
    let mut fits: Vec<Fitted> = Vec::with_capacity(cfg.m);
    let mut contrib: Vec<DVector<f64>> = Vec::with_capacity(cfg.m);
    let mut residual = y.clone();

    for j in 0..cfg.m {
        let alpha0 = initial_direction(x, &residual, j, &mut trace);
        let mut fitter = Fitter { x, degree: cfg.ridge_degree, trace: &mut trace };
        let fit = fitter.fit_component(alpha0, &residual, cfg);
        let values = fitted_values(&fit, x);
        residual -= &values;
        fits.push(fit);
        contrib.push(values);
    }
    let mut total = residual.norm_squared();
    trace.total_rss.push(total);

    for _ in 0..cfg.max_backfit_passes {
        trace.backfit_passes += 1;
        for j in 0..cfg.m {
            let partial = &residual + &contrib[j];
            let start = fits[j].comp.alpha.clone();
            let mut fitter = Fitter { x, degree: cfg.ridge_degree, trace: &mut trace };
            let fit = fitter.fit_component(start, &partial, cfg);
            let values = fitted_values(&fit, x);
            residual = &partial - &values;
            fits[j] = fit;
            contrib[j] = values;
        }
        let next = residual.norm_squared();
        trace.total_rss.push(next);
        let change = (total - next).abs() / total.max(f64::MIN_POSITIVE);
        total = next;
        if change < cfg.tol {
            break;
        }
    }

    let intercept = fits.iter().map(|f| f.intercept).sum();
    let components = fits.into_iter().map(|f| f.comp).collect();
    Ok((PprModel { components, intercept }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::index_error;
    use crate::synth::sample_unit_ball;

    fn linear_data(alpha: &[f64], n: usize, seed: u64) -> Dataset {
        let x = sample_unit_ball(n, alpha.len(), seed).unwrap();
        let y = x.rows().map(|r| r.iter().zip(alpha).map(|(a, b)| a * b).sum()).collect();
        Dataset::new(x, y, seed).unwrap()
    }

    #[test]
    fn recovers_a_linear_single_index() {
        let s = 1.0 / 3f64.sqrt();
        let alpha = [s, -s, 0.0, s];
        let ds = linear_data(&alpha, 500, 11);
        let (model, trace) = ppr_fit(&ds, &PprConfig::new(1)).unwrap();
        let star = DMatrix::from_column_slice(4, 1, &alpha);
        let (ie, _) = index_error(&model.alpha(), &star).unwrap();
        assert!(ie < 1e-6, "{ie}");
        let test = sample_unit_ball(2000, 4, 99).unwrap();
        let fe = test
            .rows()
            .map(|r| (model.predict(r) - r.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()).powi(2))
            .sum::<f64>()
            / 2000.0;
        assert!(fe < 1e-10, "{fe}");
        assert_eq!(trace.singular_solves, 0);
    }

    #[test]
    fn zero_response_gives_zero_model() {
        let x = sample_unit_ball(200, 3, 1).unwrap();
        let ds = Dataset::new(x, vec![0.0; 200], 1).unwrap();
        let (model, _) = ppr_fit(&ds, &PprConfig::new(2)).unwrap();
        assert_eq!(model.intercept, 0.0);
        assert!(model.components.iter().all(|c| c.coefs.iter().all(|&v| v == 0.0)));
        assert!(model.components.iter().all(|c| (c.alpha.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ridge_rss_never_increases_within_a_component_and_columns_are_unit() {
        let x = sample_unit_ball(400, 4, 5).unwrap();
        let y: Vec<f64> = x
            .rows()
            .enumerate()
            .map(|(i, r)| (r[0] + r[1]).powi(2) - 0.5 * (r[2] - r[3]).powi(3) + 0.1 * ((i * 7919 % 13) as f64 / 13.0 - 0.5))
            .collect();
        let ds = Dataset::new(x, y, 5).unwrap();
        let (model, trace) = ppr_fit(&ds, &PprConfig::new(2)).unwrap();
        for c in &model.components {
            assert!((c.alpha.norm() - 1.0).abs() < 1e-12);
        }
        assert!(trace.total_rss.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", trace.total_rss);
        assert!(trace.backfit_passes >= 1);
    }

    #[test]
    fn polynomial_helpers() {
        let c = PprComponent { alpha: DVector::from_vec(vec![1.0]), coefs: vec![2.0, -1.0, 0.5] };
        assert_eq!(c.ridge(2.0), 4.0 - 4.0 + 4.0);
        assert_eq!(c.ridge_deriv(2.0), 2.0 - 4.0 + 6.0);
    }

    #[test]
    fn config_validation() {
        assert!(PprConfig::new(0).validate().is_err());
        let mut c = PprConfig::new(2);
        c.tol = 0.0;
        assert!(c.validate().is_err());
        assert!(PprConfig::new(3).validate().is_ok());
    }
}
