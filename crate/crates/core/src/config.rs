//! Topic configuration: every tunable constant of the combination and
//! forecasting pipeline lives here, with validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Base of all logarithms used for losses and regrets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    #[serde(rename = "e")]
    E,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    pub fn log(self, v: f64) -> f64 {
        match self {
            LogBase::E => v.ln(),
            LogBase::Ten => v.log10(),
        }
    }
}

/// Forecaster target variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Loss,
    Regret,
    Zscore,
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetKind::Loss => write!(f, "loss"),
            TargetKind::Regret => write!(f, "regret"),
            TargetKind::Zscore => write!(f, "zscore"),
        }
    }
}

/// Forecaster model structure: one model over all workers (inferer ID as a
/// feature) or one model per worker with a global fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Global,
    PerInferer,
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Structure::Global => write!(f, "global"),
            Structure::PerInferer => write!(f, "per_inferer"),
        }
    }
}

/// Role of a worker within a topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Inferer,
    Forecaster,
}

/// Opaque worker identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkerId {
    pub id: String,
    pub kind: WorkerKind,
}

impl WorkerId {
    pub fn inferer(id: impl Into<String>) -> Self {
        WorkerId { id: id.into(), kind: WorkerKind::Inferer }
    }

    pub fn forecaster(id: impl Into<String>) -> Self {
        WorkerId { id: id.into(), kind: WorkerKind::Forecaster }
    }
}

/// All fiducial constants of a topic in one validated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    /// Sigmoid steepness.
    pub p: f64,
    /// Sigmoid transition point.
    pub c: f64,
    /// EMA smoothing factor for historical regrets.
    pub alpha: f64,
    /// Division guard added to standard deviations.
    pub epsilon: f64,
    /// Offset applied to forecasted z-scores before the weight function.
    pub delta_z: f64,
    /// Training epochs.
    pub n_train: usize,
    /// Testing epochs.
    pub n_test: usize,
    /// Window lengths for EMA/rolling feature transforms.
    pub span_set: Vec<usize>,
    /// Optional per-family spans, ordered [gradients, rolling windows, EMAs].
    pub adaptive_spans: Option<[usize; 3]>,
    /// Forecaster target variable.
    pub target_kind: TargetKind,
    /// Forecaster structure.
    pub structure: Structure,
    /// Base of all logarithms.
    pub log_base: LogBase,
    /// Trial seed.
    pub seed: u64,
    /// Normalize EMA regrets before the weight function in the network
    /// combination.
    pub normalize_ema_regrets: bool,
    /// Lag search ceiling for autocorrelation feature selection.
    pub max_lag: usize,
    /// Floor applied to losses before taking logs.
    pub loss_floor: f64,
    /// Forecasting workers in the topic; 0 disables the forecast-implied
    /// inference and the network combination reduces to the naive one.
    pub n_forecasters: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig {
            p: 3.0,
            c: 0.75,
            alpha: 0.1,
            epsilon: 1e-8,
            delta_z: -1.0,
            n_train: 1000,
            n_test: 100,
            span_set: vec![3, 14],
            adaptive_spans: None,
            target_kind: TargetKind::Zscore,
            structure: Structure::PerInferer,
            log_base: LogBase::Ten,
            seed: 0,
            normalize_ema_regrets: false,
            max_lag: 60,
            loss_floor: 1e-12,
            n_forecasters: 1,
        }
    }
}

impl TopicConfig {
    pub fn max_span(&self) -> usize {
        let from_set = self.span_set.iter().copied().max().unwrap_or(0);
        let from_adaptive = self
            .adaptive_spans
            .map(|s| s.into_iter().max().unwrap())
            .unwrap_or(0);
        from_set.max(from_adaptive)
    }
}

/// Checks every `TopicConfig` invariant, returning the config unchanged when
/// all hold and a validation error naming the first violation otherwise.
pub fn validate_config(cfg: TopicConfig) -> Result<TopicConfig> {
    if !(cfg.p > 0.0) {
        return Err(Error::Validation("p must be > 0".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        return Err(Error::Validation("alpha out of range (0,1]".into()));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Validation("epsilon must be > 0".into()));
    }
    if !(cfg.loss_floor > 0.0) {
        return Err(Error::Validation("loss_floor must be > 0".into()));
    }
    if cfg.span_set.is_empty() {
        return Err(Error::Validation("span_set must be nonempty".into()));
    }
    if cfg.span_set.iter().any(|&s| s < 2) {
        return Err(Error::Validation("spans must be >= 2".into()));
    }
    if cfg.span_set.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("spans not increasing".into()));
    }
    if let Some(adaptive) = cfg.adaptive_spans {
        if adaptive.iter().any(|&s| s < 2) {
            return Err(Error::Validation("adaptive spans must be >= 2".into()));
        }
    }
    if cfg.n_train < cfg.max_span() + cfg.max_lag {
        return Err(Error::Validation(
            "n_train must cover max span + max lag".into(),
        ));
    }
    Ok(cfg)
}
