//! Fast invariant checks run by `gaim --selftest`.

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::Result;
use crate::exec::Execution;
use crate::links::{Family, LinkSpec, LossSpec};
use crate::metrics::index_error;
use crate::model::{project_to_sphere_columns, ModelParams};
use crate::optim::{fit, Algorithm, BlockGradients, FitConfig, ObjectiveKind, Problem};
use crate::synth::{rng_for, sample_poisson, sample_unit_ball, Stream};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<4}  {:<28}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Deliberate defects injected into the analytic side of the checks.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Tamper {
    pub flip_alpha_operator: bool,
    pub basis_deriv_offset: f64,
}

pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const OPERATOR_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

/// A small random problem: covariates, responses, parameters.
pub struct RandomProblem {
    pub data: Dataset,
    pub params: ModelParams,
    pub link: LinkSpec,
    pub family: Family,
}

/// Random desk problem with `n = 50`, `d <= 6`, `m <= 3`, three basis functions.
pub fn random_problem(seed: u64, family: Family, link: LinkSpec, basis: &BasisSet) -> Result<RandomProblem> {
    let mut rng = rng_for(seed, Stream::Covariates);
    let d = rng.random_range(2..=6);
    let m = rng.random_range(1..=3);
    let alpha = project_to_sphere_columns(&DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0)))?;
    let beta = DMatrix::from_fn(m, basis.len(), |_, _| rng.random_range(-1.0..1.0));
    let params = ModelParams::new(alpha, beta)?;
    let x = sample_unit_ball(50, d, seed)?;
    let mut yrng = rng_for(seed, Stream::Responses);
    let y = x
        .rows()
        .map(|r| {
            let mean = link.inv_link(crate::model::predict_eta(&params, basis, r)?);
            match family {
                Family::Gaussian => Ok(mean + yrng.random_range(-1.0..1.0)),
                Family::Poisson => sample_poisson(&mut yrng, mean),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomProblem { data: Dataset::new(x, y, seed)?, params, link, family })
}

/// Central finite differences of an objective in every entry of `alpha` and `beta`.
pub fn finite_difference(problem: &Problem<'_>, params: &ModelParams, kind: ObjectiveKind, h: f64) -> Result<BlockGradients> {
    let eval = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Result<f64> {
        problem.objective(&ModelParams::new_unchecked(a.clone(), b.clone())?, kind)
    };
    let mut ga = DMatrix::zeros(params.alpha.nrows(), params.alpha.ncols());
    for idx in 0..ga.len() {
        let (mut lo, mut hi) = (params.alpha.clone(), params.alpha.clone());
        lo[idx] -= h;
        hi[idx] += h;
        ga[idx] = (eval(&hi, &params.beta)? - eval(&lo, &params.beta)?) / (2.0 * h);
    }
    let mut gb = DMatrix::zeros(params.beta.nrows(), params.beta.ncols());
    for idx in 0..gb.len() {
        let (mut lo, mut hi) = (params.beta.clone(), params.beta.clone());
        lo[idx] -= h;
        hi[idx] += h;
        gb[idx] = (eval(&params.alpha, &hi)? - eval(&params.alpha, &lo)?) / (2.0 * h);
    }
    Ok(BlockGradients { alpha: ga, beta: gb })
}

/// `||g - fd|| / ||fd||` over both blocks, with the denominator floored at 1e-8.
pub fn relative_error(g: &BlockGradients, fd: &BlockGradients) -> f64 {
    let num = ((&g.alpha - &fd.alpha).norm_squared() + (&g.beta - &fd.beta).norm_squared()).sqrt();
    let den = (fd.alpha.norm_squared() + fd.beta.norm_squared()).sqrt();
    num / den.max(1e-8)
}

const PAIRS: [(Family, fn() -> LinkSpec); 4] = [
    (Family::Gaussian, LinkSpec::identity),
    (Family::Poisson, LinkSpec::log),
    (Family::Poisson, LinkSpec::inv_softplus),
    (Family::Gaussian, LinkSpec::inv_softplus),
];

fn tampered_basis(tamper: Tamper) -> Result<BasisSet> {
    let mut b = BasisSet::shifted_legendre(3)?;
    if tamper.basis_deriv_offset != 0.0 {
        for d in &mut b.derivs {
            d[0] += tamper.basis_deriv_offset;
        }
    }
    Ok(b)
}

fn gradient_check(algorithm: Algorithm, problems: usize, tamper: Tamper) -> Result<f64> {
    let basis = BasisSet::shifted_legendre(3)?;
    let analytic_basis = tampered_basis(tamper)?;
    let kind = match algorithm {
        Algorithm::Gd => ObjectiveKind::Loss,
        Algorithm::Vi => ObjectiveKind::Potential,
    };
    let mut worst: f64 = 0.0;
    for i in 0..problems {
        let (family, link) = PAIRS[i % PAIRS.len()];
        let p = random_problem(1000 + i as u64, family, link(), &basis)?;
        let loss = Some(LossSpec::new(p.family));
        let exact = Problem::new(&p.data, &basis, p.link, loss);
        let analytic = Problem::new(&p.data, &analytic_basis, p.link, loss);
        let mut g = analytic.gradients(&p.params, algorithm, Execution::Sequential)?;
        if tamper.flip_alpha_operator && algorithm == Algorithm::Vi {
            g.alpha = -g.alpha;
        }
        let fd = finite_difference(&exact, &p.params, kind, FD_STEP)?;
        worst = worst.max(relative_error(&g, &fd));
    }
    Ok(worst)
}

fn canonical_identity() -> Result<f64> {
    let basis = BasisSet::shifted_legendre(3)?;
    let mut worst: f64 = 0.0;
    for (i, (family, link)) in [(Family::Poisson, LinkSpec::log()), (Family::Gaussian, LinkSpec::identity())].into_iter().enumerate() {
        let p = random_problem(77 + i as u64, family, link, &basis)?;
        let init = ModelParams::standard_init(p.params.dim(), p.params.n_indices(), 3)?;
        let loss = Some(LossSpec::new(family));
        let gd = fit(&p.data, &basis, link, loss, &init, &FitConfig::new(Algorithm::Gd, 25, 0.5))?;
        let vi = fit(&p.data, &basis, link, loss, &init, &FitConfig::new(Algorithm::Vi, 25, 0.5))?;
        worst = worst
            .max((&gd.params.alpha - &vi.params.alpha).amax())
            .max((&gd.params.beta - &vi.params.beta).amax());
    }
    Ok(worst)
}

fn brute_force(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    fn rec(a: &DMatrix<f64>, b: &DMatrix<f64>, l: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let m = b.ncols();
        if l == m {
            *best = best.min(acc / m as f64);
            return;
        }
        for j in 0..m {
            if used[j] {
                continue;
            }
            used[j] = true;
            for s in [1.0, -1.0] {
                let c = (a.column(j) * s - b.column(l)).norm_squared();
                rec(a, b, l + 1, used, acc + c, best);
            }
            used[j] = false;
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, 0, &mut vec![false; b.ncols()], 0.0, &mut best);
    best
}

fn metric_oracle(instances: usize) -> Result<usize> {
    let mut rng: ChaCha8Rng = rng_for(5, Stream::Covariates);
    let mut mismatches = 0;
    for _ in 0..instances {
        let m = rng.random_range(1..=5);
        let d = rng.random_range(m..=m + 3);
        let mut unit = || project_to_sphere_columns(&DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0)));
        let (a, b) = (unit()?, unit()?);
        let fast = index_error(&a, &b)?.0;
        if (fast - brute_force(&a, &b)).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

fn basis_recurrence() -> Result<f64> {
    let b = BasisSet::shifted_legendre(8)?;
    let mut worst: f64 = 0.0;
    for i in 0..=300 {
        let t = -1.5 + 0.01 * i as f64;
        let mut p = [1.0, t];
        for k in 1..=8 {
            let phi = p[1] - if k % 2 == 1 { 0.0 } else { legendre_at_zero(k) };
            worst = worst.max((b.eval(k - 1, t) - phi).abs());
            let next = ((2 * k + 1) as f64 * t * p[1] - k as f64 * p[0]) / (k + 1) as f64;
            p = [p[1], next];
        }
    }
    Ok(worst)
}

fn legendre_at_zero(k: usize) -> f64 {
    // P_k(0) = (-1)^{k/2} (k-1)!! / k!! for even k.
    let mut v = 1.0;
    let mut j = 2;
    while j <= k {
        v *= -((j - 1) as f64) / j as f64;
        j += 2;
    }
    v
}

fn check(name: &'static str, value: Result<f64>, tol: f64) -> CheckResult {
    match value {
        Ok(v) => CheckResult { name, passed: v < tol, detail: format!("max error {v:.3e} (limit {tol:.0e})") },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

pub(crate) fn run_checks(tamper: Tamper) -> SelftestReport {
    let oracle = match metric_oracle(200) {
        Ok(bad) => CheckResult {
            name: "index error vs brute force",
            passed: bad == 0,
            detail: format!("{bad} mismatches in 200 instances"),
        },
        Err(e) => CheckResult { name: "index error vs brute force", passed: false, detail: format!("error: {e}") },
    };
    SelftestReport {
        checks: vec![
            check("basis recurrence", basis_recurrence(), 1e-12),
            check("loss gradient (finite diff)", gradient_check(Algorithm::Gd, 40, tamper), GRADIENT_REL_TOL),
            check("Leibniz identity for VI", gradient_check(Algorithm::Vi, 40, tamper), OPERATOR_REL_TOL),
            check("GD = VI for canonical links", canonical_identity(), 1e-12),
            oracle,
        ],
    }
}

/// Runs every check and returns the report; `passed()` is false if any failed.
pub fn selftest() -> SelftestReport {
    run_checks(Tamper::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find<'a>(r: &'a SelftestReport, name: &str) -> &'a CheckResult {
        r.checks.iter().find(|c| c.name == name).unwrap()
    }

    #[test]
    fn clean_build_passes() {
        let r = selftest();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn flipped_alpha_operator_breaks_leibniz_check() {
        let r = run_checks(Tamper { flip_alpha_operator: true, ..Default::default() });
        assert!(!find(&r, "Leibniz identity for VI").passed);
        assert!(find(&r, "loss gradient (finite diff)").passed);
    }

    #[test]
    fn basis_derivative_offset_breaks_gradient_check() {
        let r = run_checks(Tamper { basis_deriv_offset: 1e-3, ..Default::default() });
        assert!(!find(&r, "loss gradient (finite diff)").passed);
    }

    #[test]
    fn legendre_values_at_zero() {
        assert_eq!(legendre_at_zero(2), -0.5);
        assert_eq!(legendre_at_zero(4), 0.375);
    }
}
