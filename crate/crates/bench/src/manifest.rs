//! Benchmark manifest: problems × solvers × seeds with per-solver settings.

use std::path::{Path, PathBuf};

use asker::problem::{bimodal_mean, synth_ba, BimodalConfig, ResidualMode, SynthBaConfig};
use asker::{AskerConfig, GncSchedule, IrlsConfig, LmConfig, Problem};
use serde::{Deserialize, Serialize};

use crate::bal::{hex_digest, BalData};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

fn invalid<T>(m: impl Into<String>) -> Result<T, ManifestError> {
    Err(ManifestError::Invalid(m.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Irls,
    Gnc,
    Asker,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Irls => "irls",
            SolverKind::Gnc => "gnc",
            SolverKind::Asker => "asker",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "irls" => Ok(SolverKind::Irls),
            "gnc" => Ok(SolverKind::Gnc),
            "asker" => Ok(SolverKind::Asker),
            other => Err(format!("unknown solver `{other}` (expected irls, gnc or asker)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Synthetic metric bundle adjustment; the seed drives the generator.
    Synthetic {
        id: String,
        #[serde(default = "default_cameras")]
        n_cameras: usize,
        #[serde(default = "default_points")]
        n_points: usize,
        #[serde(default = "default_outliers")]
        outlier_fraction: f64,
        #[serde(default = "one")]
        pixel_noise: f64,
        /// Kernel width in pixels.
        tau_px: f64,
        #[serde(default = "one")]
        inlier_threshold_px: f64,
    },
    /// One-dimensional robust mean of a two-cluster sample; the seed drives the sample.
    RobustMean {
        id: String,
        #[serde(default = "default_mean_count")]
        n_inliers: usize,
        #[serde(default = "default_mean_count")]
        n_outliers: usize,
        #[serde(default = "default_outlier_mean")]
        outlier_mean: f64,
        tau: f64,
        theta0: f64,
    },
    /// A BAL file; runs once regardless of the seed list.
    Bal {
        id: String,
        path: PathBuf,
        #[serde(default = "default_mode")]
        residual_mode: String,
        /// Kernel width in pixels; metric mode divides by the median focal length.
        tau_px: f64,
        #[serde(default = "one")]
        inlier_threshold_px: f64,
    },
}

fn default_cameras() -> usize {
    10
}
fn default_points() -> usize {
    100
}
fn default_outliers() -> f64 {
    0.25
}
fn one() -> f64 {
    1.0
}
fn default_mean_count() -> usize {
    100
}
fn default_outlier_mean() -> f64 {
    8.0
}
fn default_mode() -> String {
    "bal".into()
}

impl ProblemSpec {
    pub fn id(&self) -> &str {
        match self {
            ProblemSpec::Synthetic { id, .. } | ProblemSpec::RobustMean { id, .. } | ProblemSpec::Bal { id, .. } => id,
        }
    }

    pub fn seeded(&self) -> bool {
        !matches!(self, ProblemSpec::Bal { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    pub lambda_init: Option<f64>,
    pub lambda_decrease: Option<f64>,
    pub lambda_increase: Option<f64>,
    pub lambda_min: Option<f64>,
}

impl LmSection {
    fn apply(&self, lm: &mut LmConfig<f64>) {
        if let Some(v) = self.lambda_init {
            lm.lambda_init = v;
        }
        if let Some(v) = self.lambda_decrease {
            lm.lambda_decrease = v;
        }
        if let Some(v) = self.lambda_increase {
            lm.lambda_increase = v;
        }
        if let Some(v) = self.lambda_min {
            lm.lambda_min = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskerSection {
    pub mu_f: Option<f64>,
    pub mu_h: Option<f64>,
    pub alpha: Option<f64>,
    pub s_init: Option<f64>,
    pub lambda_h_init: Option<f64>,
    pub h_tolerance: Option<f64>,
    pub f_rel_tolerance: Option<f64>,
    pub gamma_grid_size: Option<usize>,
    #[serde(flatten)]
    pub lm: LmSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrlsSection {
    pub f_rel_tolerance: Option<f64>,
    #[serde(flatten)]
    pub lm: LmSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GncSection {
    /// Strictly decreasing, ending at 1.
    pub scales: Option<Vec<f64>>,
    pub f_rel_tolerance: Option<f64>,
    #[serde(flatten)]
    pub lm: LmSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub solvers: Vec<SolverKind>,
    #[serde(default)]
    pub asker: AskerSection,
    #[serde(default)]
    pub irls: IrlsSection,
    #[serde(default)]
    pub gnc: GncSection,
    #[serde(rename = "problem")]
    pub problems: Vec<ProblemSpec>,
    /// Directory that relative BAL paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_iterations() -> usize {
    100
}
fn default_workers() -> usize {
    1
}

/// A solver fully configured for one run.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverSetup {
    Irls(IrlsConfig<f64>),
    Gnc(GncSchedule<f64>, IrlsConfig<f64>),
    Asker(AskerConfig<f64>),
}

/// A materialized problem ready to solve.
pub struct Instance {
    pub problem: Box<dyn Problem<f64>>,
    pub theta0: Vec<f64>,
    /// Kernel width in residual units.
    pub tau: f64,
    /// Pixels for bundle adjustment (the problem's camera scales convert).
    pub inlier_threshold: Option<f64>,
    pub content_hash: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let m: Manifest = toml::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
        let mut m = Self::parse(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        if self.solvers.is_empty() {
            return invalid("at least one solver is required");
        }
        if self.problems.is_empty() {
            return invalid("at least one [[problem]] is required");
        }
        if self.max_iterations == 0 || self.workers == 0 {
            return invalid("max_iterations and workers must be positive");
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.problems {
            let id = p.id();
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return invalid(format!("problem id `{id}` must be non-empty [A-Za-z0-9_-]"));
            }
            if !ids.insert(id) {
                return invalid(format!("duplicate problem id `{id}`"));
            }
            if let ProblemSpec::Bal { residual_mode, .. } = p {
                residual_mode
                    .parse::<ResidualMode>()
                    .map_err(|e| ManifestError::Invalid(format!("problem {id}: {e}")))?;
            }
        }
        for s in &self.solvers {
            self.solver_setup(*s).map_err(|e| ManifestError::Invalid(format!("solver {}: {e}", s.as_str())))?;
        }
        Ok(())
    }

    pub fn solver_setup(&self, kind: SolverKind) -> Result<SolverSetup, asker::Error> {
        let irls = |f_rel: Option<f64>, lm: &LmSection| {
            let mut c = IrlsConfig { max_iterations: self.max_iterations, ..Default::default() };
            if let Some(v) = f_rel {
                c.f_rel_tolerance = v;
            }
            lm.apply(&mut c.lm);
            c.validate().map(|_| c)
        };
        Ok(match kind {
            SolverKind::Irls => SolverSetup::Irls(irls(self.irls.f_rel_tolerance, &self.irls.lm)?),
            SolverKind::Gnc => {
                let cfg = irls(self.gnc.f_rel_tolerance, &self.gnc.lm)?;
                let scales = self.gnc.scales.clone().unwrap_or_else(|| vec![8.0, 4.0, 2.0, 1.0]);
                SolverSetup::Gnc(GncSchedule::with_total_budget(scales, self.max_iterations)?, cfg)
            }
            SolverKind::Asker => {
                let a = &self.asker;
                let mut c = AskerConfig { max_iterations: self.max_iterations, ..Default::default() };
                let set = |dst: &mut f64, v: Option<f64>| {
                    if let Some(v) = v {
                        *dst = v;
                    }
                };
                set(&mut c.mu_f, a.mu_f);
                set(&mut c.mu_h, a.mu_h);
                set(&mut c.alpha, a.alpha);
                set(&mut c.s_init, a.s_init);
                set(&mut c.lambda_h_init, a.lambda_h_init);
                set(&mut c.h_tolerance, a.h_tolerance);
                set(&mut c.f_rel_tolerance, a.f_rel_tolerance);
                if let Some(g) = a.gamma_grid_size {
                    c.gamma_grid_size = g;
                }
                a.lm.apply(&mut c.lm);
                c.validate()?;
                SolverSetup::Asker(c)
            }
        })
    }

    /// Seeds a problem runs with: every manifest seed, or only the first for
    /// seed-independent problems.
    pub fn seeds_for(&self, problem: &ProblemSpec) -> &[u64] {
        if problem.seeded() {
            &self.seeds
        } else {
            &self.seeds[..1]
        }
    }

    pub fn instantiate(&self, spec: &ProblemSpec, seed: u64) -> anyhow::Result<Instance> {
        Ok(match spec {
            ProblemSpec::Synthetic { n_cameras, n_points, outlier_fraction, pixel_noise, tau_px, inlier_threshold_px, .. } => {
                let cfg = SynthBaConfig {
                    n_cameras: *n_cameras,
                    n_points: *n_points,
                    outlier_fraction: *outlier_fraction,
                    pixel_noise_sigma: *pixel_noise,
                    seed,
                    ..Default::default()
                };
                synthetic_instance(&cfg, *tau_px, *inlier_threshold_px)?
            }
            ProblemSpec::RobustMean { n_inliers, n_outliers, outlier_mean, tau, theta0, .. } => {
                let cfg = BimodalConfig {
                    n_inliers: *n_inliers,
                    n_outliers: *n_outliers,
                    outlier_mean: *outlier_mean,
                    seed,
                    ..Default::default()
                };
                let p = bimodal_mean::<f64>(&cfg)?;
                let text: String = p.data().iter().map(|v| format!("{v:.16e}\n")).collect();
                Instance {
                    content_hash: hex_digest(text.as_bytes()),
                    problem: Box::new(p),
                    theta0: vec![*theta0],
                    tau: *tau,
                    inlier_threshold: None,
                }
            }
            ProblemSpec::Bal { path, residual_mode, tau_px, inlier_threshold_px, .. } => {
                let full = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
                let data = BalData::read(&full)?;
                let mode: ResidualMode = residual_mode.parse()?;
                bal_instance(&data, mode, *tau_px, *inlier_threshold_px)?
            }
        })
    }
}

pub fn synthetic_instance(cfg: &SynthBaConfig, tau_px: f64, inlier_threshold_px: f64) -> anyhow::Result<Instance> {
    let s = synth_ba::<f64>(cfg)?;
    let hash = BalData::from_problem(&s.problem, &s.theta_init)?.content_hash();
    Ok(Instance {
        problem: Box::new(s.problem),
        theta0: s.theta_init,
        tau: tau_px / cfg.focal,
        inlier_threshold: Some(inlier_threshold_px),
        content_hash: hash,
    })
}

pub fn bal_instance(data: &BalData, mode: ResidualMode, tau_px: f64, inlier_threshold_px: f64) -> anyhow::Result<Instance> {
    let (problem, theta0) = data.to_problem(mode)?;
    let unit = match mode {
        ResidualMode::Bal => 1.0,
        ResidualMode::Metric => {
            let mut f: Vec<f64> = data.cameras.iter().map(|c| c[6]).collect();
            f.sort_by(f64::total_cmp);
            f[f.len() / 2]
        }
    };
    Ok(Instance {
        problem: Box::new(problem),
        theta0,
        tau: tau_px / unit,
        inlier_threshold: Some(inlier_threshold_px),
        content_hash: data.content_hash(),
    })
}
