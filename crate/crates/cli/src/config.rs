use crate::error::{CliError, CliResult};
use o2n_core::problem::problem_by_name;
use o2n_core::{Problem, Vector};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[clap(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyName {
    OptionI,
    OptionII,
    Anchoring,
    OptionIii,
    SfSgdDirect,
}

impl StrategyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::OptionI => "OPTION_I",
            StrategyName::OptionII => "OPTION_II",
            StrategyName::Anchoring => "ANCHORING",
            StrategyName::OptionIii => "OPTION_III",
            StrategyName::SfSgdDirect => "SF_SGD_DIRECT",
        }
    }

    /// Stability bound the parameter choice assumes.
    pub fn cx_bound(self) -> f64 {
        match self {
            StrategyName::OptionI => 1.0,
            StrategyName::OptionII | StrategyName::Anchoring => 0.0,
            StrategyName::OptionIii | StrategyName::SfSgdDirect => 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    /// No trace file.
    Off,
    /// Every step, certificates at log-spaced checkpoints.
    #[default]
    Checkpoints,
    /// Every step with its certificate.
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub beta: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    /// Dimension for dimension-generic problems.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Custom piecewise-linear problem; overrides `problem`.
    #[serde(default)]
    pub problem_file: Option<PathBuf>,
    pub strategy: StrategyName,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    /// Anchoring epochs.
    #[serde(rename = "N", default = "one_usize")]
    pub epochs: usize,
    #[serde(default = "one_usize")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub trace: TraceLevel,
}

fn default_dim() -> usize {
    10
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl RunConfig {
    pub fn new(problem: &str, strategy: StrategyName, epsilon: f64, sigma: f64, steps: usize) -> Self {
        Self {
            problem: problem.to_string(),
            dim: default_dim(),
            problem_file: None,
            strategy,
            epsilon,
            lambda: 1.0,
            sigma,
            steps,
            epochs: 1,
            seeds: 1,
            master_seed: 0,
            x0: None,
            overrides: Overrides::default(),
            output_dir: None,
            trace: TraceLevel::Off,
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.steps == 0 {
            return bad("T must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("N must be at least 1".into());
        }
        if self.epochs > 1 && self.strategy != StrategyName::Anchoring {
            return bad(format!("N = {} is only meaningful for ANCHORING", self.epochs));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and nonnegative, got {}", self.sigma));
        }
        let o = &self.overrides;
        if o.gamma.is_some() && self.strategy != StrategyName::SfSgdDirect {
            return bad(format!("gamma is derived for {}; it can only be set for SF_SGD_DIRECT", self.strategy.as_str()));
        }
        if o.gamma.is_some() && o.eta.is_some() {
            return bad("supply at most one of eta and gamma".into());
        }
        for (name, v) in [("beta", o.beta), ("D", o.d), ("mu", o.mu), ("eta", o.eta), ("gamma", o.gamma)] {
            if let Some(v) = v {
                let ok = v.is_finite() && if name == "mu" { v >= 0.0 } else { v > 0.0 };
                if !ok || (name == "beta" && v >= 1.0) {
                    return bad(format!("override {name} = {v} is out of range"));
                }
            }
        }
        Ok(())
    }

    pub fn load_problem(&self) -> CliResult<Problem> {
        let p = match &self.problem_file {
            Some(path) => Problem::from_json(&std::fs::read_to_string(path)?)?,
            None => problem_by_name(&self.problem, self.dim)?,
        };
        Ok(p)
    }

    pub fn start(&self, problem: &Problem) -> CliResult<Vector> {
        match &self.x0 {
            Some(v) if v.len() != problem.dim() => {
                Err(CliError::Config(format!("x0 has {} entries but the problem has dimension {}", v.len(), problem.dim())))
            }
            Some(v) => Ok(Vector::from(v.clone())),
            None => Ok(problem.default_start()),
        }
    }
}
