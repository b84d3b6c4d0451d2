use crate::error::{GaimError, Result};
use crate::links::{Family, LinkKind, LinkSpec};
use crate::ppr::PprConfig;
use crate::synth::{table2_noise_variance, TABLE2_PRESETS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Single,
    Table1,
    Table2,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Single => "single",
            Suite::Table1 => "table1",
            Suite::Table2 => "table2",
        }
    }
}

/// An estimator run on every trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Vi,
    Ppr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Vi => "vi",
            Method::Ppr => "ppr",
        }
    }
}

/// Which true parameter construction generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    /// The fixed d = 4, m = 2 truth.
    Table1,
    /// Block-sparse orthogonal indices with normalized geometric coefficient rows.
    BlockSparse,
}

/// Flat experiment description. Every `Option` left unset takes the suite preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub family: Option<Family>,
    /// Single suite: the link. table1 suite: restricts the sweep to one link.
    pub link: Option<LinkKind>,
    pub algorithms: Option<Vec<Method>>,
    pub truth: Option<TruthKind>,
    pub d: Option<usize>,
    pub m: Option<usize>,
    /// Sample sizes to sweep.
    pub n: Option<Vec<usize>>,
    /// Number of basis functions per index.
    pub k: usize,
    pub iterations: Option<usize>,
    pub step_alpha: Option<f64>,
    pub step_beta: Option<f64>,
    pub noise_variance: Option<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub test_points: usize,
    pub out_dir: PathBuf,
    /// Record error traces every this many iterations; 0 disables traces.
    pub trace_every: usize,
    /// Also write SVG charts for the traces of the first trial.
    pub svg: bool,
    /// Worker threads for trials; `None` uses all cores.
    pub workers: Option<usize>,
    /// Record failed trials and leave them out of summaries instead of aborting.
    pub skip_failed: bool,
    /// Write per-fit wall-clock times. Disable for byte-identical per-trial output.
    pub record_wall_clock: bool,
    pub ppr_max_inner_iters: usize,
    pub ppr_max_backfit_passes: usize,
    pub ppr_tol: f64,
    pub ppr_ridge_degree: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ppr = PprConfig::new(1);
        Self {
            suite: Suite::Single,
            family: None,
            link: None,
            algorithms: None,
            truth: None,
            d: None,
            m: None,
            n: None,
            k: 3,
            iterations: None,
            step_alpha: None,
            step_beta: None,
            noise_variance: None,
            trials: 100,
            base_seed: 0,
            test_points: 10_000,
            out_dir: PathBuf::from("gaim-out"),
            trace_every: 0,
            svg: true,
            workers: None,
            skip_failed: false,
            record_wall_clock: true,
            ppr_max_inner_iters: ppr.max_inner_iters,
            ppr_max_backfit_passes: ppr.max_backfit_passes,
            ppr_tol: ppr.tol,
            ppr_ridge_degree: ppr.ridge_degree,
        }
    }
}

/// One fully resolved experimental cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setting {
    pub label: String,
    pub family: Family,
    pub link: LinkKind,
    pub truth: TruthKind,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub iterations: usize,
    pub step_alpha: f64,
    pub step_beta: f64,
    pub noise_variance: f64,
    pub methods: Vec<Method>,
}

pub const TABLE1_N: [usize; 3] = [400, 2000, 10_000];
pub const TABLE2_N: usize = 2000;

/// Iterations and step size for table1 cells.
pub fn table1_schedule(link: LinkKind, n: usize) -> (usize, f64) {
    match link {
        LinkKind::InverseSoftplus if n <= 400 => (1500, 4.0),
        LinkKind::InverseSoftplus => (1000, 4.0),
        _ => (1000, 1.0),
    }
}

/// Iterations and step size for the table2 presets; other sizes use the largest preset's values.
pub fn table2_schedule(d: usize, m: usize) -> (usize, f64) {
    match (d, m) {
        (4, 2) => (200, 0.3),
        (20, 5) => (1000, 0.5),
        _ => (1000, 0.2),
    }
}

impl ExperimentConfig {
    pub fn preset(suite: Suite) -> Self {
        Self { suite, ..Self::default() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn ppr_config(&self, m: usize) -> PprConfig {
        PprConfig {
            m,
            max_inner_iters: self.ppr_max_inner_iters,
            max_backfit_passes: self.ppr_max_backfit_passes,
            tol: self.ppr_tol,
            ridge_degree: self.ppr_ridge_degree,
        }
    }

    fn invalid(msg: impl Into<String>) -> GaimError {
        GaimError::InvalidArgument(msg.into())
    }

    /// Checks counts and expands the suite into its settings.
    pub fn settings(&self) -> Result<Vec<Setting>> {
        if self.trials == 0 || self.k == 0 || self.test_points == 0 {
            return Err(Self::invalid("trials, k and test_points must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Self::invalid("workers must be positive"));
        }
        self.ppr_config(1).validate()?;
        let settings = match self.suite {
            Suite::Single => vec![self.single()?],
            Suite::Table1 => self.table1()?,
            Suite::Table2 => self.table2()?,
        };
        for s in &settings {
            if s.d == 0 || s.m == 0 || s.n == 0 || s.iterations == 0 {
                return Err(Self::invalid(format!("{}: counts must be positive", s.label)));
            }
            if !(s.step_alpha > 0.0 && s.step_beta > 0.0) {
                return Err(Self::invalid(format!("{}: step sizes must be positive", s.label)));
            }
            if s.methods.is_empty() {
                return Err(Self::invalid("no algorithms selected"));
            }
            if s.methods.contains(&Method::Ppr) && (s.family != Family::Gaussian || s.link != LinkKind::Identity) {
                return Err(Self::invalid("ppr supports only the Gaussian family with identity link"));
            }
            if s.truth == TruthKind::Table1 && (s.d, s.m, s.k) != (4, 2, 3) {
                return Err(Self::invalid("the table1 truth has d = 4, m = 2, k = 3"));
            }
            if s.truth == TruthKind::BlockSparse && s.d % s.m != 0 {
                return Err(Self::invalid("block-sparse truth needs m dividing d"));
            }
        }
        Ok(settings)
    }

    fn single(&self) -> Result<Setting> {
        let link = self.link.unwrap_or(LinkKind::Log);
        let family = self.family.unwrap_or_else(|| LinkSpec::new(link).canonical_family().unwrap_or(Family::Poisson));
        let truth = self.truth.unwrap_or(TruthKind::Table1);
        let (d, m) = (self.d.unwrap_or(4), self.m.unwrap_or(2));
        let n = match self.n.as_deref() {
            None => 2000,
            Some([n]) => *n,
            Some(_) => return Err(Self::invalid("the single suite takes exactly one n")),
        };
        let (iterations, step) = table1_schedule(link, n);
        let step_alpha = self.step_alpha.unwrap_or(step);
        Ok(Setting {
            label: format!("{}-d{d}-m{m}-n{n}", link.name()),
            family,
            link,
            truth,
            d,
            m,
            n,
            k: self.k,
            iterations: self.iterations.unwrap_or(iterations),
            step_alpha,
            step_beta: self.step_beta.unwrap_or(step_alpha),
            noise_variance: self.noise_variance.unwrap_or(match truth {
                TruthKind::Table1 => 0.0,
                TruthKind::BlockSparse => table2_noise_variance(d, m),
            }),
            methods: self.algorithms.clone().unwrap_or(vec![Method::Gd, Method::Vi]),
        })
    }

    fn table1(&self) -> Result<Vec<Setting>> {
        let links = match self.link {
            Some(l) => vec![l],
            None => vec![LinkKind::Log, LinkKind::InverseSoftplus],
        };
        let ns = self.n.clone().unwrap_or(TABLE1_N.to_vec());
        let mut out = Vec::new();
        for link in links {
            if link == LinkKind::Identity {
                return Err(Self::invalid("table1 uses the log or inverse-softplus link"));
            }
            for &n in &ns {
                let (iterations, step) = table1_schedule(link, n);
                let step_alpha = self.step_alpha.unwrap_or(step);
                out.push(Setting {
                    label: format!("{}-n{n}", link.name()),
                    family: self.family.unwrap_or(Family::Poisson),
                    link,
                    truth: TruthKind::Table1,
                    d: 4,
                    m: 2,
                    n,
                    k: self.k,
                    iterations: self.iterations.unwrap_or(iterations),
                    step_alpha,
                    step_beta: self.step_beta.unwrap_or(step_alpha),
                    noise_variance: self.noise_variance.unwrap_or(0.0),
                    methods: self.algorithms.clone().unwrap_or(vec![Method::Gd, Method::Vi]),
                });
            }
        }
        Ok(out)
    }

    fn table2(&self) -> Result<Vec<Setting>> {
        let sizes: Vec<(usize, usize)> = match (self.d, self.m) {
            (Some(d), Some(m)) => vec![(d, m)],
            (None, None) => TABLE2_PRESETS.iter().map(|&(d, m, _)| (d, m)).collect(),
            _ => return Err(Self::invalid("table2 takes both d and m or neither")),
        };
        let ns = self.n.clone().unwrap_or(vec![TABLE2_N]);
        let mut out = Vec::new();
        for (d, m) in sizes {
            for &n in &ns {
                let (iterations, step) = table2_schedule(d, m);
                let step_alpha = self.step_alpha.unwrap_or(step);
                out.push(Setting {
                    label: format!("d{d}-m{m}-n{n}"),
                    family: self.family.unwrap_or(Family::Gaussian),
                    link: self.link.unwrap_or(LinkKind::Identity),
                    truth: TruthKind::BlockSparse,
                    d,
                    m,
                    n,
                    k: self.k,
                    iterations: self.iterations.unwrap_or(iterations),
                    step_alpha,
                    step_beta: self.step_beta.unwrap_or(step_alpha),
                    noise_variance: self.noise_variance.unwrap_or(table2_noise_variance(d, m)),
                    methods: self.algorithms.clone().unwrap_or(vec![Method::Gd, Method::Ppr]),
                });
            }
        }
        Ok(out)
    }
}
