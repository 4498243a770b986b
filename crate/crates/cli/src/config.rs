//! Run configuration: a TOML file with one section per concern.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fbvie::builtin;
use fbvie::monotonicity::SamplerConfig;
use fbvie::problem::{LqSpec, NonlinearSpec, RunningCost, TerminalCost};
use fbvie::{ContinuationParams, Grid, Problem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::tabular::MatrixTable;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `sampler.seed`; the probe uses the same seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub continuation: ContinuationParams,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `A = 0`, `B = Q = R = 1`, `G0 = 0` with a constant initial state.
    LqScalar {
        #[serde(default = "one")]
        x0: f64,
    },
    /// Two states, one control, rotation drift plus an exponential memory of strength `kappa`.
    LqMatrix {
        #[serde(default = "half")]
        kappa: f64,
    },
    NonlinearExample {
        #[serde(default)]
        variant: NonlinearVariant,
        /// Replaces the monotone part of `h` by `λx` and the declared `λ`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
    },
    CustomTabular(TabularConfig),
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearVariant {
    #[default]
    Extremal,
    Smooth,
    Broken,
}

/// LQ instance with `A(t,s)` and `B(t,s)` read from CSV tables and constant `Q`, `R`, `G0`, `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    pub state_dim: usize,
    pub control_dim: usize,
    /// CSV path, relative to the config file.
    pub a: PathBuf,
    pub b: PathBuf,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub g0: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub probe_starts: usize,
    /// Constant initial states of the two bridge solves; defaults to `x0(0)` and zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge_a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge_b: Option<Vec<f64>>,
    /// Grid used to resolve the value-identity factor on the scalar reference instance.
    pub convention_intervals: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { probe_starts: 5, bridge_a: None, bridge_b: None, convention_intervals: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub intervals: Vec<usize>,
    /// Required observed order on smooth builtin instances.
    pub min_order: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { intervals: vec![25, 50, 100, 200], min_order: 1.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("fbvie-out") }
    }
}

/// A parsed configuration together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let config = Self::parse(&text, &path.display().to_string())?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    /// Applies a command-line seed and copies the effective seed into the sampler.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.sampler.seed = s;
        }
        if let Some(dir) = out {
            self.output.dir = dir;
        }
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.sampler.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            return invalid(format!("grid.horizon must be positive and finite, got {}", g.horizon));
        }
        if g.intervals == 0 {
            return invalid("grid.intervals must be at least 1");
        }
        self.continuation.validate().or_else(|e| invalid(format!("[continuation] {e}")))?;
        self.sampler.validate().or_else(|e| invalid(format!("[sampler] {e}")))?;
        if self.verify.probe_starts < 2 {
            return invalid("verify.probe_starts must be at least 2");
        }
        if self.verify.convention_intervals < 2 {
            return invalid("verify.convention_intervals must be at least 2");
        }
        let c = &self.convergence;
        if c.intervals.len() < 2 || c.intervals.contains(&0) {
            return invalid("convergence.intervals needs at least two positive entries");
        }
        if c.intervals.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("convergence.intervals must be strictly increasing");
        }
        match &self.problem {
            ProblemConfig::LqScalar { x0 } if !x0.is_finite() => invalid("problem.x0 must be finite"),
            ProblemConfig::LqMatrix { kappa } if !kappa.is_finite() => invalid("problem.kappa must be finite"),
            ProblemConfig::NonlinearExample { lambda: Some(l), .. } if !l.is_finite() => {
                invalid("problem.lambda must be finite")
            }
            ProblemConfig::CustomTabular(t) => t.validate(),
            _ => Ok(()),
        }
    }

    /// Whether the problem comes with closed-form or smooth builtin coefficients.
    pub fn is_smooth_builtin(&self) -> bool {
        !matches!(self.problem, ProblemConfig::CustomTabular(_))
    }
}

fn matrix(rows: &[Vec<f64>], n: usize, m: usize, name: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return invalid(format!("problem.{name} must be a {n} × {m} array of rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return invalid(format!("problem.{name} has a non-finite entry"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl TabularConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let (n, m) = (self.state_dim, self.control_dim);
        if n == 0 || m == 0 {
            return invalid("problem.state_dim and problem.control_dim must be positive");
        }
        let q = matrix(&self.q, n, n, "q")?;
        let r = matrix(&self.r, m, m, "r")?;
        let g0 = matrix(&self.g0, n, n, "g0")?;
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return invalid(format!("problem.x0 must have {n} finite entries"));
        }
        for (name, mat) in [("q", &q), ("r", &r), ("g0", &g0)] {
            if (mat - mat.transpose()).amax() > 1e-12 * (1.0 + mat.amax()) {
                return invalid(format!("problem.{name} must be symmetric"));
            }
        }
        if min_eigenvalue(&q) <= 0.0 || min_eigenvalue(&r) <= 0.0 {
            return invalid("problem.q and problem.r must be positive definite");
        }
        if min_eigenvalue(&g0) < -1e-12 {
            return invalid("problem.g0 must be positive semidefinite");
        }
        Ok(())
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// The problem described by a configuration, with its control-problem data when it has one.
#[derive(Clone)]
pub struct BuiltProblem {
    pub problem: Problem,
    pub lq: Option<LqSpec<f64>>,
}

impl LoadedConfig {
    pub fn grid(&self) -> Result<Grid, ConfigError> {
        self.grid_with(self.config.grid.intervals)
    }

    pub fn grid_with(&self, intervals: usize) -> Result<Grid, ConfigError> {
        Grid::new(self.config.grid.horizon, intervals).or_else(|e| invalid(e.to_string()))
    }

    pub fn lq_spec(&self) -> Result<Option<LqSpec<f64>>, ConfigError> {
        Ok(match &self.config.problem {
            ProblemConfig::LqScalar { x0 } => Some(builtin::lq_scalar_spec(*x0)),
            ProblemConfig::LqMatrix { kappa } => Some(builtin::lq_matrix_spec(*kappa)),
            ProblemConfig::CustomTabular(t) => Some(self.tabular_spec(t)?),
            ProblemConfig::NonlinearExample { .. } => None,
        })
    }

    pub fn nonlinear_spec(&self) -> Option<NonlinearSpec<f64>> {
        let ProblemConfig::NonlinearExample { variant, lambda } = &self.config.problem else {
            return None;
        };
        let mut spec = match variant {
            NonlinearVariant::Extremal => builtin::nonlinear_extremal_spec(),
            NonlinearVariant::Smooth => builtin::nonlinear_smooth_spec(),
            NonlinearVariant::Broken => builtin::nonlinear_broken_spec(),
        };
        if let Some(l) = *lambda {
            spec.lambda = l;
            spec.l_b = l.abs();
            spec.b_map = Arc::new(move |_, x: &DVector<f64>| x * l);
        }
        Some(spec)
    }

    pub fn build(&self, grid: &Grid) -> Result<BuiltProblem, ConfigError> {
        let to_cfg = |e: fbvie::FbvieError| ConfigError::Invalid(e.to_string());
        if let Some(spec) = self.nonlinear_spec() {
            let problem = fbvie::build_nonlinear_problem(&spec, grid).map_err(to_cfg)?;
            return Ok(BuiltProblem { problem, lq: None });
        }
        let spec = self.lq_spec()?.expect("every non-nonlinear problem is LQ");
        let problem = fbvie::build_lq_problem(&spec, grid).map_err(to_cfg)?;
        Ok(BuiltProblem { problem, lq: Some(spec) })
    }

    fn tabular_spec(&self, t: &TabularConfig) -> Result<LqSpec<f64>, ConfigError> {
        let (n, m) = (t.state_dim, t.control_dim);
        let read = |p: &Path, rows, cols| {
            MatrixTable::from_csv(&self.base_dir.join(p), rows, cols).map_err(|e| ConfigError::Invalid(e.to_string()))
        };
        let a = Arc::new(read(&t.a, n, n)?);
        let b = Arc::new(read(&t.b, n, m)?);
        let q = matrix(&t.q, n, n, "q")?;
        let r = matrix(&t.r, m, m, "r")?;
        let g0 = matrix(&t.g0, n, n, "g0")?;
        let x0 = DVector::from_column_slice(&t.x0);
        let lipschitz = 1.0 + a.max_abs().max(b.max_abs());
        let (qm, rm) = (q.clone(), r.clone());
        let (ta, tb) = (a.clone(), b.clone());
        Ok(LqSpec {
            state_dim: n,
            control_dim: m,
            a: Arc::new(move |t, s| ta.eval(t, s)),
            b: Arc::new(move |t, s| tb.eval(t, s)),
            running: RunningCost::Quadratic(Arc::new(move |_| qm.clone())),
            r: Arc::new(move |_| rm.clone()),
            terminal: TerminalCost::Quadratic,
            delta: 2.0 * min_eigenvalue(&q),
            r_floor: min_eigenvalue(&r),
            k_g: 2.0 * max_eigenvalue(&g0).max(1.0).sqrt(),
            g0,
            x0: Arc::new(move |_| x0.clone()),
            lipschitz,
            label: "custom-tabular".into(),
        })
    }
}
