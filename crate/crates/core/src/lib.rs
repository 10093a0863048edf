//! Context-aware combination of multi-worker time-series inferences.
//!
//! Workers submit inferences each epoch; a forecasting model predicts each
//! worker's performance (log loss, regret or regret z-score), which a sigmoid
//! gate converts into combination weights. The crate ships the combination
//! math, feature engineering, a built-in gradient-boosted tree learner,
//! synthetic benchmarks, an evaluation harness and a CLI.

pub mod combiner;
pub mod features;
pub mod learner;
pub mod replay;
pub mod report;
pub mod rng;
pub mod config;
pub mod error;
pub mod eval;
pub mod panel;
pub mod scalar;
pub mod synth;

pub use config::{LogBase, Structure, TargetKind, TopicConfig, WorkerId, WorkerKind};
pub use error::{Error, Result};
pub use panel::{EpochPanel, ForecastPanel, MarketSeries};

/// Default scalar used by the pipeline.
pub type Value = f64;

/// Weight vector at the default scalar.
pub type WeightVector = combiner::WeightVector<Value>;
