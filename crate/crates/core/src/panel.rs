//! Epoch-indexed ledgers: worker inferences, truths, losses, regrets and the
//! EMA regret bookkeeping. Cells are `Option<f64>`; `None` marks a worker
//! absent at that epoch (absent cells never enter cross-sectional sums).

use crate::config::WorkerId;
use crate::error::{Error, Result};

/// Per-epoch matrix of worker inferences, truths, losses and regrets.
/// Append-only in the epoch index.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPanel {
    pub workers: Vec<WorkerId>,
    /// Ground truth per epoch (target units).
    pub truth: Vec<Option<f64>>,
    /// inference[i][j]: worker j's inference at epoch i.
    pub inference: Vec<Vec<Option<f64>>>,
    /// loss[i][j]: true loss of worker j at epoch i (squared target units).
    pub loss: Vec<Vec<Option<f64>>>,
    /// log_loss[i][j]: log of loss (configured base).
    pub log_loss: Vec<Vec<Option<f64>>>,
    /// regret[i][j] = network_log_loss[i] - log_loss[i][j].
    pub regret: Vec<Vec<Option<f64>>>,
    /// Loss of the combined (naive) network inference per epoch.
    pub network_loss: Vec<Option<f64>>,
    /// Log of the network loss per epoch.
    pub network_log_loss: Vec<Option<f64>>,
    /// ema_regret[i][j]: EMA of worker j's regret up to and including epoch i.
    pub ema_regret: Vec<Vec<Option<f64>>>,
    /// Times a zero loss was clamped to the loss floor before taking logs.
    pub loss_floor_hits: usize,
}

impl EpochPanel {
    pub fn new(workers: Vec<WorkerId>) -> Self {
        EpochPanel {
            workers,
            truth: Vec::new(),
            inference: Vec::new(),
            loss: Vec::new(),
            log_loss: Vec::new(),
            regret: Vec::new(),
            network_loss: Vec::new(),
            network_log_loss: Vec::new(),
            ema_regret: Vec::new(),
            loss_floor_hits: 0,
        }
    }

    pub fn n_epochs(&self) -> usize {
        self.inference.len()
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn worker_index(&self, id: &str) -> Option<usize> {
        self.workers.iter().position(|w| w.id == id)
    }

    /// Appends one epoch of cells; every matrix grows by one row.
    #[allow(clippy::too_many_arguments)]
    pub fn push_epoch(
        &mut self,
        truth: Option<f64>,
        inference: Vec<Option<f64>>,
        loss: Vec<Option<f64>>,
        log_loss: Vec<Option<f64>>,
        regret: Vec<Option<f64>>,
        network_loss: Option<f64>,
        network_log_loss: Option<f64>,
        ema_regret: Vec<Option<f64>>,
    ) {
        debug_assert_eq!(inference.len(), self.n_workers());
        self.truth.push(truth);
        self.inference.push(inference);
        self.loss.push(loss);
        self.log_loss.push(log_loss);
        self.regret.push(regret);
        self.network_loss.push(network_loss);
        self.network_log_loss.push(network_log_loss);
        self.ema_regret.push(ema_regret);
    }

    /// Builds a regret-only panel (no truth/loss layer), as used by the
    /// periodic benchmarks where regrets are supplied directly.
    pub fn from_regrets(workers: Vec<WorkerId>, regrets: Vec<Vec<Option<f64>>>) -> Self {
        let n = regrets.len();
        let w = workers.len();
        EpochPanel {
            workers,
            truth: vec![None; n],
            inference: vec![vec![None; w]; n],
            loss: vec![vec![None; w]; n],
            log_loss: vec![vec![None; w]; n],
            regret: regrets,
            network_loss: vec![None; n],
            network_log_loss: vec![None; n],
            ema_regret: vec![vec![None; w]; n],
            loss_floor_hits: 0,
        }
    }

    /// Column view of one worker's series.
    pub fn worker_series<'a>(
        &'a self,
        matrix: &'a [Vec<Option<f64>>],
        worker: usize,
    ) -> impl Iterator<Item = Option<f64>> + 'a {
        matrix.iter().map(move |row| row[worker])
    }
}

/// OHLCV market history; only the close series is required.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketSeries {
    pub open: Vec<Option<f64>>,
    pub high: Vec<Option<f64>>,
    pub low: Vec<Option<f64>>,
    pub close: Vec<f64>,
    pub volume: Vec<Option<f64>>,
}

impl MarketSeries {
    pub fn from_close(close: Vec<f64>) -> Self {
        let n = close.len();
        MarketSeries {
            open: vec![None; n],
            high: vec![None; n],
            low: vec![None; n],
            close,
            volume: vec![None; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.close.len();
        for v in [&self.open, &self.high, &self.low, &self.volume] {
            if v.len() != n {
                return Err(Error::Validation("market columns misaligned".into()));
            }
        }
        for i in 0..n {
            let close = self.close[i];
            if let Some(high) = self.high[i] {
                if high < self.open[i].unwrap_or(close).max(close) {
                    return Err(Error::Validation(format!("high < max(open, close) at epoch {i}")));
                }
            }
            if let Some(low) = self.low[i] {
                if low > self.open[i].unwrap_or(close).min(close) {
                    return Err(Error::Validation(format!("low > min(open, close) at epoch {i}")));
                }
            }
            if let Some(vol) = self.volume[i] {
                if vol < 0.0 {
                    return Err(Error::Validation(format!("negative volume at epoch {i}")));
                }
            }
        }
        Ok(())
    }
}

/// One forecaster's per-epoch outputs: predicted targets, weights and the
/// forecast-implied inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastPanel {
    /// predicted[i][j]: forecasted target (log loss, regret or z-score).
    pub predicted: Vec<Vec<Option<f64>>>,
    /// weights[i][j]: sigmoid-gated weight, in (0, p).
    pub weights: Vec<Vec<Option<f64>>>,
    /// implied[i]: forecast-implied inference.
    pub implied: Vec<Option<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regret_only_panel_shape() {
        let workers = vec![WorkerId::inferer("a"), WorkerId::inferer("b")];
        let regrets = vec![vec![Some(0.1), Some(-0.1)]; 5];
        let panel = EpochPanel::from_regrets(workers, regrets);
        assert_eq!(panel.n_epochs(), 5);
        assert_eq!(panel.n_workers(), 2);
        assert!(panel.truth.iter().all(|t| t.is_none()));
    }

    #[test]
    fn market_invariants_checked() {
        let mut mkt = MarketSeries::from_close(vec![10.0, 11.0]);
        mkt.high = vec![Some(9.5), Some(11.5)];
        assert!(mkt.validate().is_err());
        mkt.high = vec![Some(10.5), Some(11.5)];
        mkt.low = vec![Some(9.0), Some(10.0)];
        assert!(mkt.validate().is_ok());
        mkt.volume = vec![Some(-1.0), None];
        assert!(mkt.validate().is_err());
    }
}
