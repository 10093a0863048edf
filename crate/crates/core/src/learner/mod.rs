//! Pluggable regression learner (built-in gradient-boosted trees),
//! randomized hyperparameter tuning, and forecaster orchestration.

pub mod forecaster;
pub mod gbt;
pub mod tune;

pub use forecaster::{
    build_targets, forecast_epoch, train_forecaster, Forecaster, TargetGrid, TrainOptions,
    FORECASTER_FORMAT_VERSION, MIN_TRAIN_ROWS,
};
pub use gbt::{column_medians, fit_gbt, GbtHyperparams, GbtModel};
pub use tune::tune;
