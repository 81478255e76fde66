//! Run configuration: a JSON document with optional `system`, `task` and
//! `output` blocks. Matrices are nested arrays in row-major order.

use crate::CliError;
use mfcontrol::signal::{rows_to_matrix, ControlDocument};
use mfcontrol::{GaussianLaw, MeanFieldSystem, RealMatrix, RealVector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Coefficients of the reduced system. Omitted matrices are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "A1", default)]
    pub a1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A2", default)]
    pub a2: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B1", default)]
    pub b1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B2", default)]
    pub b2: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C", default)]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D1", default)]
    pub d1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D2", default)]
    pub d2: Option<Vec<Vec<f64>>>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<MeanFieldSystem, CliError> {
        let (d, n) = (self.d, self.n);
        if d == 0 || n == 0 {
            return Err(CliError::config("system", "d and n must be positive"));
        }
        let square = |rows: &Option<Vec<Vec<f64>>>, name| matrix_field(rows, name, d, d);
        let input = |rows: &Option<Vec<Vec<f64>>>, name| matrix_field(rows, name, d, n);
        MeanFieldSystem::builder(d, n, self.horizon)
            .a1(square(&self.a1, "A1")?)
            .a2(square(&self.a2, "A2")?)
            .b1(input(&self.b1, "B1")?)
            .b2(input(&self.b2, "B2")?)
            .c(square(&self.c, "C")?)
            .d1(input(&self.d1, "D1")?)
            .d2(input(&self.d2, "D2")?)
            .build()
            .map_err(|e| CliError::config("system", e.to_string()))
    }
}

fn matrix_field(rows: &Option<Vec<Vec<f64>>>, name: &str, r: usize, c: usize) -> Result<RealMatrix, CliError> {
    let Some(rows) = rows else {
        return Ok(RealMatrix::zeros(r, c));
    };
    let field = format!("system.{name}");
    let m = rows_to_matrix(rows, name).map_err(|e| CliError::config(&field, e.to_string()))?;
    if m.nrows() != r || m.ncols() != c {
        return Err(CliError::config(
            &field,
            format!("expected a {r}×{c} matrix, found {}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m)
}

/// Gaussian law; a missing covariance means a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl LawConfig {
    pub fn build(&self, field: &str, dim: usize) -> Result<GaussianLaw, CliError> {
        if self.mean.len() != dim {
            return Err(CliError::config(
                &format!("{field}.mean"),
                format!("expected length {dim}, found {}", self.mean.len()),
            ));
        }
        let mean = RealVector::from_vec(self.mean.clone());
        let cov = match &self.covariance {
            None => RealMatrix::zeros(dim, dim),
            Some(rows) => {
                let f = format!("{field}.covariance");
                let m = rows_to_matrix(rows, &f).map_err(|e| CliError::config(&f, e.to_string()))?;
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(CliError::config(
                        &f,
                        format!("expected a {dim}×{dim} matrix, found {}×{}", m.nrows(), m.ncols()),
                    ));
                }
                m
            }
        };
        GaussianLaw::new(mean, cov).map_err(|e| CliError::config(field, e.to_string()))
    }
}

/// Exactly one of `constant`, `document` or `file` selects the control.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub constant: Option<Vec<f64>>,
    #[serde(default)]
    pub document: Option<ControlDocument>,
    /// Path to a `control.json`, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordConfig {
    All,
    Endpoints,
    Every(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    L2,
    Etcnl,
    Gramian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub particles: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HermiteConfig {
    /// `coefficients[i][k]` multiplies `h_k(W(t'), t')` in component `i`.
    pub coefficients: Vec<Vec<f64>>,
    pub t_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Analyze {
        /// Properties whose failure counts as a negative verdict under `--strict`.
        #[serde(default)]
        require: Option<Vec<Property>>,
    },
    Synthesize {
        target: LawConfig,
        #[serde(default)]
        grid_points: Option<usize>,
        #[serde(default)]
        monte_carlo: Option<MonteCarloConfig>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Exactctrl {
        x0: Vec<f64>,
        target: HermiteConfig,
        #[serde(default)]
        steps: Option<usize>,
        #[serde(default)]
        paths: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Simulate {
        initial: LawConfig,
        control: ControlConfig,
        steps: usize,
        particles: usize,
        #[serde(default)]
        record: Option<RecordConfig>,
        #[serde(default)]
        target: Option<LawConfig>,
        #[serde(default)]
        raw_rows: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Wbsde {
        a1: f64,
        a2: f64,
        b: f64,
        #[serde(rename = "T")]
        horizon: f64,
        mu: ScalarLawConfig,
        s: f64,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        sigma_points: Option<usize>,
    },
    Repro {
        #[serde(default)]
        case: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskConfig::Analyze { .. } => "analyze",
            TaskConfig::Synthesize { .. } => "synthesize",
            TaskConfig::Exactctrl { .. } => "exactctrl",
            TaskConfig::Simulate { .. } => "simulate",
            TaskConfig::Wbsde { .. } => "wbsde",
            TaskConfig::Repro { .. } => "repro",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            TaskConfig::Synthesize { seed, .. }
            | TaskConfig::Exactctrl { seed, .. }
            | TaskConfig::Simulate { seed, .. }
            | TaskConfig::Repro { seed, .. } => *seed,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarLawConfig {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<Format>>,
}

/// Parses a config document, reporting the line, column and field path of the first error.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        syntax_error(&inner, Some(path))
    })?;
    de.end().map_err(|e| syntax_error(&e, None))?;
    Ok(cfg)
}

fn syntax_error(e: &serde_json::Error, path: Option<String>) -> CliError {
    let full = e.to_string();
    let message = full.split(" at line ").next().unwrap_or(&full).to_string();
    CliError::Config {
        line: Some(e.line()),
        column: Some(e.column()),
        field: path.filter(|p| p != "."),
        message,
    }
}
