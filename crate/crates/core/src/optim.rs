//! Simultaneous estimators: alternating projected gradient descent (GD) on the
//! empirical risk, and the variational-inequality (VI) scheme that replaces
//! the loss derivative by the raw residual `mu - y`.
//!
//! One iteration updates `beta` from `(alpha_t, beta_t)` and then `alpha` from
//! `(alpha_t, beta_{t+1})`, followed by column-wise projection onto the unit
//! sphere. VI is exactly projected gradient descent on the potential `Q_n`.

use crate::basis::BasisSet;
use crate::data::{Covariates, Dataset};
use crate::error::{GaimError, Result};
use crate::exec::Execution;
use crate::links::{mean_loss, potential_qn, validate_responses, LinkSpec, LossSpec};
use crate::metrics::{function_error, index_error};
use crate::model::{project_with_fallback, weighted_gradients, BatchRequest, ModelParams};
use crate::synth::Truth;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gd,
    Vi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Vi => "vi",
        }
    }
}

/// Which scalar the trace records as its objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Empirical risk `L_n`, the quantity GD descends.
    Loss,
    /// Potential `Q_n`, the quantity VI descends.
    Potential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub step_alpha: f64,
    pub step_beta: f64,
    /// Record a trace entry every this many iterations. The final iterate is always recorded.
    pub record_every: usize,
    pub objective: ObjectiveKind,
    /// Stop at a recorded iteration whose stationarity residual is below this value.
    pub stop_tol: Option<f64>,
    pub execution: Execution,
}

impl FitConfig {
    /// Constant step `step` for both blocks, every iteration recorded, and the
    /// objective each algorithm descends.
    pub fn new(algorithm: Algorithm, iterations: usize, step: f64) -> Self {
        Self {
            algorithm,
            iterations,
            step_alpha: step,
            step_beta: step,
            record_every: 1,
            objective: match algorithm {
                Algorithm::Gd => ObjectiveKind::Loss,
                Algorithm::Vi => ObjectiveKind::Potential,
            },
            stop_tol: None,
            execution: Execution::default(),
        }
    }

    pub fn record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GaimError::InvalidArgument(msg.into()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.step_alpha > 0.0 && self.step_beta > 0.0)
            || !self.step_alpha.is_finite()
            || !self.step_beta.is_finite()
        {
            return bad("step sizes must be positive and finite");
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1");
        }
        Ok(())
    }
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `F(alpha_t, beta_t)` for the configured objective.
    pub objective: f64,
    /// Stationarity residual `R_t` of the configured objective.
    pub residual: f64,
    /// `||beta_{t+1} - beta_t||_F`; absent for the final iterate.
    pub step_beta: Option<f64>,
    /// `||alpha_{t+1} - alpha_t||_F`; absent for the final iterate.
    pub step_alpha: Option<f64>,
    pub index_error: Option<f64>,
    pub function_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub entries: Vec<TraceEntry>,
    /// Samples whose Poisson mean hit the loss floor, summed over recorded iterations.
    pub loss_floor_hits: usize,
    /// Alpha columns kept from the previous iterate because the projection was degenerate.
    pub degenerate_recoveries: usize,
    /// Set when the residual stopping rule fired.
    pub stopped_at: Option<usize>,
}

impl FitTrace {
    pub fn residuals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.residual).collect()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.objective).collect()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: ModelParams,
    pub trace: FitTrace,
}

/// Ground truth and held-out covariates for recording estimation errors.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub truth: &'a Truth,
    pub test_x: &'a Covariates,
}

impl Monitor<'_> {
    pub(crate) fn errors(&self, params: &ModelParams, basis: &BasisSet) -> Result<(f64, f64)> {
        let (ie, _) = index_error(&params.alpha, self.truth.alpha_star())?;
        let fe = function_error(params, basis, self.truth, self.test_x)?;
        Ok((ie, fe))
    }
}

/// The data and model pieces an estimator needs.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub data: &'a Dataset,
    pub basis: &'a BasisSet,
    pub link: LinkSpec,
    /// Required by GD and by the loss objective; ignored by VI updates.
    pub loss: Option<LossSpec>,
}

/// Block gradients `(grad_alpha F, grad_beta F)` of an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradients {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a Dataset, basis: &'a BasisSet, link: LinkSpec, loss: Option<LossSpec>) -> Self {
        Self { data, basis, link, loss }
    }

    fn loss_or_err(&self) -> Result<LossSpec> {
        self.loss
            .ok_or_else(|| GaimError::InvalidArgument("a loss is required for GD or the loss objective".into()))
    }

    /// Per-sample factor multiplying the model gradients: `dl/deta` for GD,
    /// `mu - y` for VI.
    fn weight(&self, algorithm: Algorithm) -> Result<impl Fn(f64, f64) -> f64 + Sync + Send + use<'_>> {
        let link = self.link;
        let loss = match algorithm {
            Algorithm::Gd => Some(self.loss_or_err()?),
            Algorithm::Vi => None,
        };
        Ok(move |y: f64, eta: f64| match loss {
            Some(l) => l.dloss_deta(y, eta, &link),
            None => link.residual(y, eta),
        })
    }

    /// Gradients of `L_n` (GD) or the VI operators `(V^alpha, V^beta)`.
    pub fn gradients(&self, params: &ModelParams, algorithm: Algorithm, exec: Execution) -> Result<BlockGradients> {
        let out = weighted_gradients(
            params,
            self.basis,
            &self.data.x,
            &self.data.y,
            exec,
            BatchRequest { grad_beta: true, grad_alpha: true },
            self.weight(algorithm)?,
        )?;
        Ok(BlockGradients {
            alpha: out.grad_alpha.expect("requested"),
            beta: out.grad_beta.expect("requested"),
        })
    }

    /// Objective value at linear predictors `eta`, with the count of floored Poisson means.
    pub fn objective_at(&self, kind: ObjectiveKind, eta: &[f64]) -> Result<(f64, usize)> {
        match kind {
            ObjectiveKind::Loss => {
                let v = mean_loss(&self.loss_or_err()?, &self.link, &self.data.y, eta);
                Ok((v.value, v.floored))
            }
            ObjectiveKind::Potential => Ok((potential_qn(&self.link, &self.data.y, eta)?, 0)),
        }
    }

    pub fn objective(&self, params: &ModelParams, kind: ObjectiveKind) -> Result<f64> {
        let eta = crate::model::predict_batch(params, self.basis, &self.data.x, Execution::default())?;
        Ok(self.objective_at(kind, &eta)?.0)
    }
}

/// `||grad_beta||_F + sum_j ||(I - a_j a_j') grad_{a_j}||_2`.
pub fn stationarity_residual(params: &ModelParams, grad_alpha: &DMatrix<f64>, grad_beta: &DMatrix<f64>) -> f64 {
    let tangential: f64 = params
        .alpha
        .column_iter()
        .zip(grad_alpha.column_iter())
        .map(|(a, g)| (g - a * a.dot(&g)).norm())
        .sum();
    grad_beta.norm() + tangential
}

/// Runs `cfg.iterations` iterations of GD or VI from `init`.
pub fn fit(
    data: &Dataset,
    basis: &BasisSet,
    link: LinkSpec,
    loss: Option<LossSpec>,
    init: &ModelParams,
    cfg: &FitConfig,
) -> Result<FitOutput> {
    fit_monitored(&Problem::new(data, basis, link, loss), init, cfg, None)
}

/// [`fit`] that also records index and function errors at every recorded iteration.
pub fn fit_monitored(
    problem: &Problem<'_>,
    init: &ModelParams,
    cfg: &FitConfig,
    monitor: Option<&Monitor<'_>>,
) -> Result<FitOutput> {
    cfg.validate()?;
    let params = ModelParams::new(init.alpha.clone(), init.beta.clone())?;
    if cfg.algorithm == Algorithm::Gd || cfg.objective == ObjectiveKind::Loss {
        let loss = problem.loss_or_err()?;
        validate_responses(loss.family, &problem.data.y)?;
    }
    let mut state = params;
    let mut trace = FitTrace::default();
    let data = problem.data;
    let weight = problem.weight(cfg.algorithm)?;
    // Gradients of the recorded objective, which may differ from the update direction.
    let objective_algorithm = match cfg.objective {
        ObjectiveKind::Loss => Algorithm::Gd,
        ObjectiveKind::Potential => Algorithm::Vi,
    };
    let same_direction = objective_algorithm == cfg.algorithm;

    let record = |state: &ModelParams, t: usize, trace: &mut FitTrace| -> Result<(TraceEntry, Option<DMatrix<f64>>)> {
        let out = weighted_gradients(
            state,
            problem.basis,
            &data.x,
            &data.y,
            cfg.execution,
            BatchRequest { grad_beta: true, grad_alpha: true },
            problem.weight(objective_algorithm)?,
        )?;
        let (ga, gb) = (out.grad_alpha.expect("requested"), out.grad_beta.expect("requested"));
        let (objective, floored) = problem.objective_at(cfg.objective, &out.eta)?;
        trace.loss_floor_hits += floored;
        if !objective.is_finite() {
            return Err(GaimError::NonFinite { iteration: t, block: "objective" });
        }
        let residual = stationarity_residual(state, &ga, &gb);
        let (index_error, function_error) = match monitor {
            Some(m) => {
                let (ie, fe) = m.errors(state, problem.basis)?;
                (Some(ie), Some(fe))
            }
            None => (None, None),
        };
        let entry = TraceEntry {
            iteration: t,
            objective,
            residual,
            step_beta: None,
            step_alpha: None,
            index_error,
            function_error,
        };
        Ok((entry, same_direction.then_some(gb)))
    };

    for t in 0..cfg.iterations {
        let mut entry = None;
        let mut grad_beta = None;
        if t % cfg.record_every == 0 {
            let (e, gb) = record(&state, t, &mut trace)?;
            if cfg.stop_tol.is_some_and(|tol| e.residual < tol) {
                trace.entries.push(e);
                trace.stopped_at = Some(t);
                return Ok(FitOutput { params: state, trace });
            }
            entry = Some(e);
            grad_beta = gb;
        }
        let grad_beta = match grad_beta {
            Some(g) => g,
            None => weighted_gradients(
                &state,
                problem.basis,
                &data.x,
                &data.y,
                cfg.execution,
                BatchRequest { grad_beta: true, grad_alpha: false },
                &weight,
            )?
            .grad_beta
            .expect("requested"),
        };
        if grad_beta.iter().any(|v| !v.is_finite()) {
            return Err(GaimError::NonFinite { iteration: t, block: "beta gradient" });
        }
        let beta_next = &state.beta - &grad_beta * cfg.step_beta;
        let half = ModelParams { alpha: state.alpha.clone(), beta: beta_next };
        let grad_alpha = weighted_gradients(
            &half,
            problem.basis,
            &data.x,
            &data.y,
            cfg.execution,
            BatchRequest { grad_beta: false, grad_alpha: true },
            &weight,
        )?
        .grad_alpha
        .expect("requested");
        if grad_alpha.iter().any(|v| !v.is_finite()) {
            return Err(GaimError::NonFinite { iteration: t, block: "alpha gradient" });
        }
        let candidate = &half.alpha - &grad_alpha * cfg.step_alpha;
        let (alpha_next, retained) = project_with_fallback(&candidate, &state.alpha);
        trace.degenerate_recoveries += retained;
        if let Some(mut e) = entry {
            e.step_beta = Some((&half.beta - &state.beta).norm());
            e.step_alpha = Some((&alpha_next - &state.alpha).norm());
            trace.entries.push(e);
        }
        state = ModelParams { alpha: alpha_next, beta: half.beta };
    }
    let (last, _) = record(&state, cfg.iterations, &mut trace)?;
    trace.entries.push(last);
    Ok(FitOutput { params: state, trace })
}

/// Relative slack allowed before an objective change counts as an increase.
pub const DESCENT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    /// Number of consecutive recorded pairs compared.
    pub comparisons: usize,
    /// Iterations `t + 1` at which `F_{t+1} > F_t` beyond rounding slack.
    pub increases: Vec<usize>,
    /// Tail means of `||d_beta||^2 + ||d_alpha||^2` starting at 0, 1/4, 1/2 and 3/4 of the run.
    pub tail_step_means: Vec<f64>,
    /// Whether the tail means are non-increasing, as for a summable sequence.
    pub summable_looking: bool,
}

impl DescentReport {
    /// Fraction of comparisons after iteration `skip` without an increase.
    pub fn fraction_non_increasing_after(&self, trace: &FitTrace, skip: usize) -> f64 {
        let considered = trace
            .entries
            .windows(2)
            .filter(|w| w[0].iteration >= skip)
            .count();
        if considered == 0 {
            return 1.0;
        }
        let bad = self.increases.iter().filter(|&&t| t > skip).count();
        1.0 - bad as f64 / considered as f64
    }
}

/// Locates objective increases and summarizes the decay of step lengths.
pub fn descent_check(trace: &FitTrace) -> DescentReport {
    let increases = trace
        .entries
        .windows(2)
        .filter(|w| w[1].objective > w[0].objective + DESCENT_REL_TOL * w[0].objective.abs().max(1.0))
        .map(|w| w[1].iteration)
        .collect::<Vec<_>>();
    let steps: Vec<f64> = trace
        .entries
        .iter()
        .filter_map(|e| Some(e.step_beta?.powi(2) + e.step_alpha?.powi(2)))
        .collect();
    let tail_step_means: Vec<f64> = (0..4)
        .map(|q| {
            let tail = &steps[q * steps.len() / 4..];
            if tail.is_empty() {
                0.0
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            }
        })
        .collect();
    let summable_looking = tail_step_means.windows(2).all(|w| w[1] <= w[0]);
    DescentReport {
        comparisons: trace.entries.len().saturating_sub(1),
        increases,
        tail_step_means,
        summable_looking,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// `(T, min over 1 <= t <= T of R_t)` for the doubling schedule.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of `log min R` against `log T`.
    pub slope: f64,
}

/// First horizon of the doubling schedule used by [`rate_check`].
pub const RATE_START: usize = 64;

/// Rate diagnostic over horizons `64, 128, ...` up to the last recorded iteration.
pub fn rate_check(trace: &FitTrace) -> RateReport {
    rate_check_from(trace, RATE_START)
}

/// Running minimum of the residual over iterations `1..=T` for `T = start, 2 start, ...`,
/// and the slope of its log against `log T`. The initial iterate is excluded.
pub fn rate_check_from(trace: &FitTrace, start: usize) -> RateReport {
    let last = trace.entries.iter().map(|e| e.iteration).max().unwrap_or(0);
    let mut points = Vec::new();
    let mut horizon = start.max(1);
    while horizon <= last {
        let min = trace
            .entries
            .iter()
            .filter(|e| e.iteration >= 1 && e.iteration <= horizon)
            .map(|e| e.residual)
            .fold(f64::INFINITY, f64::min);
        points.push((horizon, min));
        horizon *= 2;
    }
    let slope = log_log_slope(&points);
    RateReport { points, slope }
}

fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
