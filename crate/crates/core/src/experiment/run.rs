use super::config::{ExperimentConfig, Method, Setting, TruthKind};
use super::svg;
use crate::basis::BasisSet;
use crate::error::{GaimError, Result};
use crate::exec::{map_ordered, Execution};
use crate::links::{LinkSpec, LossSpec};
use crate::metrics::{function_error_with, index_error};
use crate::model::{predict_eta, ModelParams};
use crate::optim::{fit_monitored, Algorithm, FitConfig, FitTrace, Monitor, Problem};
use crate::ppr::ppr_fit;
use crate::synth::{generate, test_covariates, truth_block_sparse, truth_table1, DataSpec, Truth};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One row of the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub suite: String,
    pub setting: String,
    pub algorithm: String,
    pub seed: u64,
    pub index_error: f64,
    pub function_error: f64,
    pub wall_ms: Option<f64>,
    pub flags: String,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.flags.starts_with("failed")
    }
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub algorithm: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub trials: usize,
}

/// Everything one trial of one setting produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub records: Vec<TrialRecord>,
    /// Monitored traces of the iterative methods, present when tracing is on.
    pub traces: Vec<(Method, FitTrace)>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub settings: Vec<Setting>,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub out_dir: PathBuf,
}

/// The truth, basis and held-out design shared by every trial of a setting.
pub struct SettingContext {
    pub setting: Setting,
    pub truth: Truth,
    pub basis: BasisSet,
}

impl SettingContext {
    pub fn new(setting: &Setting) -> Result<Self> {
        let truth = match setting.truth {
            TruthKind::Table1 => truth_table1(),
            TruthKind::BlockSparse => truth_block_sparse(setting.d, setting.m, setting.k)?,
        };
        Ok(Self { setting: setting.clone(), truth, basis: BasisSet::shifted_legendre(setting.k)? })
    }
}

/// Runs every method of the setting on the dataset drawn with `seed`.
pub fn run_trial(ctx: &SettingContext, cfg: &ExperimentConfig, seed: u64) -> Result<TrialOutcome> {
    let s = &ctx.setting;
    let link = LinkSpec::new(s.link);
    let spec = DataSpec {
        n: s.n,
        family: s.family,
        link,
        truth: &ctx.truth,
        basis: &ctx.basis,
        noise_variance: s.noise_variance,
    };
    let data = generate(&spec, seed)?;
    let test_x = test_covariates(cfg.test_points, s.d, seed)?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for &method in &s.methods {
        let mut record = TrialRecord {
            suite: cfg.suite.name().into(),
            setting: s.label.clone(),
            algorithm: method.name().into(),
            seed,
            index_error: f64::NAN,
            function_error: f64::NAN,
            wall_ms: None,
            flags: String::new(),
        };
        let start = Instant::now();
        match method {
            Method::Gd | Method::Vi => {
                let algorithm = if method == Method::Gd { Algorithm::Gd } else { Algorithm::Vi };
                let mut fc = FitConfig::new(algorithm, s.iterations, s.step_alpha);
                fc.step_beta = s.step_beta;
                fc.execution = Execution::Sequential;
                fc.record_every = if cfg.trace_every > 0 { cfg.trace_every } else { s.iterations };
                let problem = Problem::new(&data, &ctx.basis, link, Some(LossSpec::new(s.family)));
                let monitor = Monitor { truth: &ctx.truth, test_x: &test_x };
                let init = ModelParams::standard_init(s.d, s.m, s.k)?;
                let out = fit_monitored(&problem, &init, &fc, (cfg.trace_every > 0).then_some(&monitor))?;
                let elapsed = start.elapsed();
                let params = out.params;
                record.index_error = index_error(&params.alpha, ctx.truth.alpha_star())?.0;
                record.function_error =
                    function_error_with(|x| predict_eta(&params, &ctx.basis, x).expect("shapes checked"), &ctx.basis, &ctx.truth, &test_x)?;
                record.wall_ms = cfg.record_wall_clock.then(|| elapsed.as_secs_f64() * 1e3);
                record.flags = join_flags(&[
                    ("loss_floor", out.trace.loss_floor_hits),
                    ("degenerate", out.trace.degenerate_recoveries),
                ]);
                if cfg.trace_every > 0 {
                    traces.push((method, out.trace));
                }
            }
            Method::Ppr => {
                let (model, trace) = ppr_fit(&data, &cfg.ppr_config(s.m))?;
                let elapsed = start.elapsed();
                record.index_error = index_error(&model.alpha(), ctx.truth.alpha_star())?.0;
                record.function_error = function_error_with(|x| model.predict(x), &ctx.basis, &ctx.truth, &test_x)?;
                record.wall_ms = cfg.record_wall_clock.then(|| elapsed.as_secs_f64() * 1e3);
                record.flags = join_flags(&[("singular", trace.singular_solves), ("retained", trace.retained_alpha)]);
            }
        }
        records.push(record);
    }
    Ok(TrialOutcome { records, traces })
}

fn join_flags(flags: &[(&str, usize)]) -> String {
    flags
        .iter()
        .filter(|(_, v)| *v > 0)
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn failed_records(s: &Setting, cfg: &ExperimentConfig, seed: u64, err: &GaimError) -> Vec<TrialRecord> {
    s.methods
        .iter()
        .map(|m| TrialRecord {
            suite: cfg.suite.name().into(),
            setting: s.label.clone(),
            algorithm: m.name().into(),
            seed,
            index_error: f64::NAN,
            function_error: f64::NAN,
            wall_ms: None,
            flags: format!("failed: {err}"),
        })
        .collect()
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when `None`.
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(w) = workers {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| GaimError::InvalidArgument(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    Ok(f())
}

/// Runs all trials of all settings without writing anything.
///
/// Trial `i` of every setting uses seed `base_seed + i`, so methods and
/// settings are compared on the same draws.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<(Vec<Setting>, Vec<Vec<TrialOutcome>>)> {
    let settings = cfg.settings()?;
    let mut all = Vec::with_capacity(settings.len());
    for s in &settings {
        let ctx = SettingContext::new(s)?;
        let results = with_workers(cfg.workers, || {
            map_ordered(cfg.trials, Execution::default(), |i| {
                let seed = cfg.base_seed.wrapping_add(i as u64);
                (seed, run_trial(&ctx, cfg, seed))
            })
        })?;
        let mut outcomes = Vec::with_capacity(results.len());
        for (seed, r) in results {
            match r {
                Ok(o) => outcomes.push(o),
                Err(e) if cfg.skip_failed => outcomes.push(TrialOutcome {
                    records: failed_records(s, cfg, seed, &e),
                    traces: Vec::new(),
                }),
                Err(e) => {
                    return Err(GaimError::InvalidArgument(format!("{} seed {seed} failed: {e}", s.label)));
                }
            }
        }
        all.push(outcomes);
    }
    Ok((settings, all))
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summary rows per setting, method and metric, over non-failed trials.
pub fn summarize(settings: &[Setting], records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for s in settings {
        for m in &s.methods {
            let ok: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.setting == s.label && r.algorithm == m.name() && !r.failed())
                .collect();
            if ok.is_empty() {
                continue;
            }
            let mut metrics: Vec<(&str, Vec<f64>)> = vec![
                ("index_error", ok.iter().map(|r| r.index_error).collect()),
                ("function_error", ok.iter().map(|r| r.function_error).collect()),
            ];
            if ok.iter().all(|r| r.wall_ms.is_some()) {
                metrics.push(("wall_ms", ok.iter().filter_map(|r| r.wall_ms).collect()));
            }
            for (metric, values) in metrics {
                let (mean, sd) = mean_sd(&values);
                rows.push(SummaryRow {
                    setting: s.label.clone(),
                    algorithm: m.name().into(),
                    metric: metric.into(),
                    mean,
                    sd,
                    trials: values.len(),
                });
            }
        }
    }
    rows
}

/// Text table with one line per setting and `mean (sd)` cells per method and metric.
pub fn format_table(settings: &[Setting], summary: &[SummaryRow]) -> String {
    let metrics = ["index_error", "function_error", "wall_ms"];
    let mut out = String::new();
    for s in settings {
        out.push_str(&format!("{}  (d={}, m={}, n={}, T={}, step={})\n", s.label, s.d, s.m, s.n, s.iterations, s.step_alpha));
        for m in &s.methods {
            let mut line = format!("  {:<4}", m.name());
            for metric in metrics {
                if let Some(r) = summary
                    .iter()
                    .find(|r| r.setting == s.label && r.algorithm == m.name() && r.metric == metric)
                {
                    line.push_str(&format!("  {metric}: {:.4} ({:.4})", r.mean, r.sd));
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(path: &Path, trace: &FitTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "objective", "residual", "index_error", "function_error"])?;
    for e in &trace.entries {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            e.iteration.to_string(),
            e.objective.to_string(),
            e.residual.to_string(),
            opt(e.index_error),
            opt(e.function_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    settings: &'a [Setting],
    seeds: Vec<u64>,
    ppr: crate::ppr::PprConfig,
    fits: Vec<FitMeta<'a>>,
    failures: Vec<FitMeta<'a>>,
}

#[derive(Serialize)]
struct FitMeta<'a> {
    setting: &'a str,
    algorithm: &'a str,
    seed: u64,
    wall_ms: Option<f64>,
    flags: &'a str,
}

/// Runs the experiment and writes `trials.csv`, `summary.csv`, `summary.txt`,
/// `metadata.json` and, when tracing, `traces/*.csv` and `figures/*.svg` under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let (settings, outcomes) = run_trials(cfg)?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    let records: Vec<TrialRecord> = outcomes.iter().flatten().flat_map(|o| o.records.clone()).collect();
    let summary = summarize(&settings, &records);
    write_csv(&out.join("trials.csv"), &records)?;
    write_csv(&out.join("summary.csv"), &summary)?;
    fs::File::create(out.join("summary.txt"))?.write_all(format_table(&settings, &summary).as_bytes())?;

    if cfg.trace_every > 0 {
        let traces = out.join("traces");
        fs::create_dir_all(&traces)?;
        for (s, trials) in settings.iter().zip(&outcomes) {
            for (i, o) in trials.iter().enumerate() {
                let seed = cfg.base_seed.wrapping_add(i as u64);
                for (m, t) in &o.traces {
                    write_trace_csv(&traces.join(format!("{}_{}_seed{seed}.csv", s.label, m.name())), t)?;
                }
            }
            if cfg.svg {
                if let Some(first) = trials.first().filter(|o| !o.traces.is_empty()) {
                    let figures = out.join("figures");
                    fs::create_dir_all(&figures)?;
                    for (metric, pick) in [
                        ("index_error", (|e: &crate::optim::TraceEntry| e.index_error) as fn(&_) -> _),
                        ("function_error", |e: &crate::optim::TraceEntry| e.function_error),
                    ] {
                        let series: Vec<svg::Series> = first
                            .traces
                            .iter()
                            .map(|(m, t)| svg::Series {
                                name: m.name().to_uppercase(),
                                points: t.entries.iter().filter_map(|e| Some((e.iteration as f64, pick(e)?))).collect(),
                            })
                            .collect();
                        let chart = svg::line_chart(&format!("{} {metric}", s.label), "iteration", metric, &series, true);
                        fs::write(figures.join(format!("{}_{metric}.svg", s.label)), chart)?;
                    }
                }
            }
        }
    }

    fn meta(r: &TrialRecord) -> FitMeta<'_> {
        FitMeta { setting: &r.setting, algorithm: &r.algorithm, seed: r.seed, wall_ms: r.wall_ms, flags: &r.flags }
    }
    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        settings: &settings,
        seeds: (0..cfg.trials as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect(),
        ppr: cfg.ppr_config(0),
        fits: records.iter().filter(|r| !r.failed()).map(meta).collect(),
        failures: records.iter().filter(|r| r.failed()).map(meta).collect(),
    };
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&metadata)?)?;
    Ok(RunReport { settings, records, summary, out_dir: out })
}
