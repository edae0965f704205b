//! Experiment configuration: TOML files with command-line overrides.

use std::path::{Path, PathBuf};

use dpmest::data::{simulate_linear, simulate_logistic, Dataset, LinearDesign, LogisticDesign};
use dpmest::losses::{
    build_clipped_logistic_model, build_linear_huber_model, build_logistic_model,
    build_schweppe_model, schweppe_default_weight, LossModel, ScalarLoss,
};
use dpmest::nalgebra::DVector;
use dpmest::SeedTree;
use serde::Deserialize;

use crate::CliError;

/// Default iteration budget per sample size.
pub fn iteration_schedule(n: usize) -> usize {
    if n <= 500 {
        50
    } else if n <= 2000 {
        75
    } else {
        100
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fit,
    Ci,
    Trajectory,
    Consistency,
    ClippingBias,
    Coverage,
    GdVsNewton,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Fit => "fit",
            ExperimentKind::Ci => "ci",
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::ClippingBias => "clipping_bias",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::GdVsNewton => "gd_vs_newton",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Gd,
    Newton,
}

/// Model family plus its tuning constants. Unspecified fields fall back to
/// the defaults used throughout the test battery.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    LinearHuber {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default)]
        h: f64,
        #[serde(default = "default_leverage_linear")]
        b: f64,
    },
    Logistic {
        #[serde(default = "default_leverage_logistic")]
        b: f64,
    },
    SchweppeLogcosh {
        #[serde(default = "default_one")]
        c: f64,
        #[serde(default = "default_schweppe_bound")]
        bound: f64,
    },
    ClippedLogistic {
        #[serde(default = "default_one")]
        clip: f64,
    },
}

fn default_c() -> f64 {
    1.345
}
fn default_leverage_linear() -> f64 {
    2.0
}
fn default_leverage_logistic() -> f64 {
    25.0
}
fn default_one() -> f64 {
    1.0
}
fn default_schweppe_bound() -> f64 {
    4.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::LinearHuber {
            c: default_c(),
            h: 0.0,
            b: default_leverage_linear(),
        }
    }
}

impl ModelSpec {
    pub fn from_cli(
        family: &str,
        c: Option<f64>,
        h: Option<f64>,
        b: Option<f64>,
        clip: Option<f64>,
    ) -> Result<Self, CliError> {
        let spec = match family {
            "linear_huber" => ModelSpec::LinearHuber {
                c: c.unwrap_or_else(default_c),
                h: h.unwrap_or(0.0),
                b: b.unwrap_or_else(default_leverage_linear),
            },
            "logistic" => ModelSpec::Logistic {
                b: b.unwrap_or_else(default_leverage_logistic),
            },
            "schweppe_logcosh" => ModelSpec::SchweppeLogcosh {
                c: c.unwrap_or_else(default_one),
                bound: b.unwrap_or_else(default_schweppe_bound),
            },
            "clipped_logistic" => ModelSpec::ClippedLogistic {
                clip: clip.unwrap_or_else(default_one),
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown model family '{other}' (expected linear_huber, logistic, \
                     schweppe_logcosh, or clipped_logistic)"
                )))
            }
        };
        Ok(spec)
    }

    pub fn build(&self, data: &Dataset) -> Result<Box<dyn LossModel>, dpmest::Error> {
        Ok(match self {
            ModelSpec::LinearHuber { c, h, b } => Box::new(build_linear_huber_model(*c, *h, *b)?),
            ModelSpec::Logistic { b } => Box::new(build_logistic_model(*b)?),
            ModelSpec::SchweppeLogcosh { c, bound } => Box::new(build_schweppe_model(
                ScalarLoss::log_cosh(*c)?,
                *bound,
                schweppe_default_weight(*bound),
                data,
            )?),
            ModelSpec::ClippedLogistic { clip } => Box::new(build_clipped_logistic_model(*clip)?),
        })
    }

    /// Whether the parameter vector carries a trailing concomitant scale.
    pub fn has_scale(&self) -> bool {
        matches!(self, ModelSpec::LinearHuber { .. })
    }

    pub fn param_names(&self, data: &Dataset) -> Vec<String> {
        let mut names = data.names().to_vec();
        if self.has_scale() {
            names.push("sigma".to_string());
        }
        names
    }

    /// Conventional starting point: zero coefficients, unit scale.
    pub fn theta0(&self, data: &Dataset) -> DVector<f64> {
        let mut theta = DVector::zeros(data.dim());
        if self.has_scale() {
            theta = theta.push(1.0);
        }
        theta
    }

    /// Simulation design matching the family, with the stock parameters.
    pub fn simulate(&self, n: usize, seeds: &SeedTree) -> Result<Dataset, dpmest::Error> {
        match self {
            ModelSpec::LinearHuber { .. } | ModelSpec::SchweppeLogcosh { .. } => {
                simulate_linear(n, &LinearDesign::default(), seeds)
            }
            ModelSpec::Logistic { .. } | ModelSpec::ClippedLogistic { .. } => {
                simulate_logistic(n, &LogisticDesign::default(), seeds)
            }
        }
    }

    /// The simulated-data parameter the estimators target.
    pub fn truth(&self) -> DVector<f64> {
        match self {
            ModelSpec::LinearHuber { .. } => {
                let design = LinearDesign::default();
                let mut t = DVector::from_vec(design.beta.clone());
                t = t.push(design.sigma);
                t
            }
            ModelSpec::SchweppeLogcosh { .. } => {
                DVector::from_vec(LinearDesign::default().beta.clone())
            }
            ModelSpec::Logistic { .. } | ModelSpec::ClippedLogistic { .. } => {
                DVector::from_vec(LogisticDesign::default().beta.clone())
            }
        }
    }

    /// Stepsizes tuned per family against the stock simulation designs.
    pub fn default_eta(&self, algo: Algo) -> f64 {
        match algo {
            Algo::Newton => 0.5,
            Algo::Gd => match self {
                ModelSpec::LinearHuber { .. } => 2.5,
                ModelSpec::SchweppeLogcosh { .. } => 1.0,
                ModelSpec::Logistic { .. } | ModelSpec::ClippedLogistic { .. } => 2.0,
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_algo")]
    pub algo: Algo,
    /// Stepsize (GD) or damped stepsize (Newton); family default when absent.
    pub eta: Option<f64>,
    /// Iteration budget; the sample-size schedule applies when absent.
    pub iters: Option<usize>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub eps_floor: Option<f64>,
    #[serde(default)]
    pub switch_rule: SwitchRuleSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchRuleSpec {
    /// Self-concordant rule when the model certifies a constant, fixed
    /// stepsize otherwise.
    #[default]
    Auto,
    SelfConcordant,
    LscHeuristic,
    FixedEta,
}

fn default_algo() -> Algo {
    Algo::Gd
}
fn default_mu() -> f64 {
    1.0
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algo: default_algo(),
            eta: None,
            iters: None,
            mu: default_mu(),
            eps_floor: None,
            switch_rule: SwitchRuleSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    /// Output stem; the run writes `<out>.csv` and `<out>.json`.
    pub out: PathBuf,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Disabling noise removes every privacy guarantee; testing only.
    #[serde(default = "default_true")]
    pub noise: bool,
    /// Gradient clip threshold for the clipping-bias comparison arm.
    #[serde(default = "default_one")]
    pub clip: f64,
}

fn default_reps() -> usize {
    100
}
fn default_n_grid() -> Vec<usize> {
    vec![1000]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps == 0 {
            return Err(CliError::Config("reps must be >= 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n == 0) {
            return Err(CliError::Config("n_grid needs positive sample sizes".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.optimizer.mu.is_finite() || self.optimizer.mu <= 0.0 {
            return Err(CliError::Config(format!(
                "mu must be positive, got {}",
                self.optimizer.mu
            )));
        }
        if let Some(eta) = self.optimizer.eta {
            if !eta.is_finite() || eta <= 0.0 {
                return Err(CliError::Config(format!("eta must be positive, got {eta}")));
            }
        }
        if self.optimizer.iters == Some(0) {
            return Err(CliError::Config("iters must be >= 1".into()));
        }
        if !self.clip.is_finite() || self.clip <= 0.0 {
            return Err(CliError::Config(format!(
                "clip must be positive, got {}",
                self.clip
            )));
        }
        Ok(())
    }
}
