//! Deterministic combination math: losses to regrets to sigmoid-gated
//! weights to forecast-implied, network and naive inferences, plus the EMA
//! regret update. Everything here is a pure function over a [`Real`] scalar.

use crate::config::{LogBase, TargetKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Where a weight vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromForecast,
    FromEma,
}

/// Per-worker combination weights, all finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<F> {
    pub weights: Vec<F>,
    pub provenance: Provenance,
}

/// Per-epoch squared-error loss of a scalar inference.
pub fn epoch_loss<F: Real>(inference: F, truth: F) -> F {
    let d = inference - truth;
    d * d
}

/// Log of a loss in the configured base, with a floor applied to keep
/// zero-loss epochs finite. Returns the log and whether the floor fired.
pub fn to_log_loss<F: Real>(loss: F, floor: F, base: LogBase) -> (F, bool) {
    let clamped = loss < floor;
    let loss = if clamped { floor } else { loss };
    let v = match base {
        LogBase::E => loss.ln(),
        LogBase::Ten => loss.log10(),
    };
    (v, clamped)
}

/// Approximate forecasted regret: previous epoch's network log loss minus
/// the forecasted log loss.
pub fn regret_from_forecast_loss<F: Real>(prev_network_log_loss: F, forecast_log_loss: F) -> F {
    prev_network_log_loss - forecast_log_loss
}

/// Population mean of a slice.
pub fn mean<F: Real>(values: &[F]) -> F {
    values.iter().copied().sum::<F>() / F::from_usize_lossy(values.len())
}

/// Population standard deviation of a slice.
pub fn population_std<F: Real>(values: &[F]) -> F {
    let m = mean(values);
    let var = values
        .iter()
        .map(|&v| (v - m) * (v - m))
        .sum::<F>()
        / F::from_usize_lossy(values.len());
    var.sqrt()
}

/// Divides each regret by the cross-worker population standard deviation
/// plus `epsilon` (no mean centering).
pub fn normalize_regrets<F: Real>(regrets: &[F], epsilon: F) -> Vec<F> {
    let denom = population_std(regrets) + epsilon;
    regrets.iter().map(|&r| r / denom).collect()
}

/// Cross-worker z-scores: mean-centered and sigma-scaled. Invariant to a
/// uniform shift of all regrets, so the network loss cancels out.
pub fn zscores<F: Real>(regrets: &[F], epsilon: F) -> Vec<F> {
    let m = mean(regrets);
    let denom = population_std(regrets) + epsilon;
    regrets.iter().map(|&r| (r - m) / denom).collect()
}

/// Sigmoid weight function: p / (e^{-p(x - c)} + 1). Strictly increasing,
/// range (0, p).
pub fn weight_fn<F: Real>(x: F, p: F, c: F) -> F {
    p / ((-p * (x - c)).exp() + F::one())
}

/// Converts forecasted targets into combination weights, dispatching on the
/// target kind: losses go through the regret conversion and normalization,
/// regrets are normalized directly, z-scores are offset by delta_z and fed
/// straight to the sigmoid.
pub fn weights_from_forecast<F: Real>(
    target_kind: TargetKind,
    forecasts: &[F],
    prev_network_log_loss: F,
    p: F,
    c: F,
    epsilon: F,
    delta_z: F,
) -> WeightVector<F> {
    let gated: Vec<F> = match target_kind {
        TargetKind::Loss => {
            let regrets: Vec<F> = forecasts
                .iter()
                .map(|&f| regret_from_forecast_loss(prev_network_log_loss, f))
                .collect();
            normalize_regrets(&regrets, epsilon)
                .into_iter()
                .map(|r| weight_fn(r, p, c))
                .collect()
        }
        TargetKind::Regret => normalize_regrets(forecasts, epsilon)
            .into_iter()
            .map(|r| weight_fn(r, p, c))
            .collect(),
        TargetKind::Zscore => forecasts
            .iter()
            .map(|&z| weight_fn(z + delta_z, p, c))
            .collect(),
    };
    WeightVector { weights: gated, provenance: Provenance::FromForecast }
}

/// Weighted mean of inferences; a convex combination of the inputs.
pub fn forecast_implied_inference<F: Real>(
    inferences: &[F],
    weights: &WeightVector<F>,
) -> Result<F> {
    weighted_mean(inferences, &weights.weights)
}

fn weighted_mean<F: Real>(values: &[F], weights: &[F]) -> Result<F> {
    if values.is_empty() {
        return Err(Error::Combine("no contributing workers".into()));
    }
    debug_assert_eq!(values.len(), weights.len());
    let mut num = F::zero();
    let mut den = F::zero();
    for (&v, &w) in values.iter().zip(weights) {
        num = num + w * v;
        den = den + w;
    }
    Ok(num / den)
}

/// EMA regret update; the first observation initializes the EMA.
pub fn update_ema_regret<F: Real>(prev_ema: Option<F>, regret: F, alpha: F) -> F {
    match prev_ema {
        Some(prev) => alpha * regret + (F::one() - alpha) * prev,
        None => regret,
    }
}

/// Network inference: weighted mean over raw and forecast-implied inferences
/// with weights set by the sigmoid of (optionally normalized) EMA regrets.
/// `ema_regrets` covers raw workers first, then implied, in order.
#[allow(clippy::too_many_arguments)]
pub fn network_inference<F: Real>(
    raw_inferences: &[F],
    implied_inferences: &[F],
    ema_regrets: &[F],
    p: F,
    c: F,
    epsilon: F,
    normalize_ema_regrets: bool,
) -> Result<F> {
    let values: Vec<F> = raw_inferences
        .iter()
        .chain(implied_inferences.iter())
        .copied()
        .collect();
    if values.is_empty() {
        return Err(Error::Combine("no contributing workers".into()));
    }
    debug_assert_eq!(values.len(), ema_regrets.len());
    let gated: Vec<F> = if normalize_ema_regrets {
        normalize_regrets(ema_regrets, epsilon)
    } else {
        ema_regrets.to_vec()
    };
    let weights: Vec<F> = gated.into_iter().map(|r| weight_fn(r, p, c)).collect();
    weighted_mean(&values, &weights)
}

/// Naive network inference: the network combination restricted to raw
/// inferences only.
pub fn naive_network_inference<F: Real>(
    raw_inferences: &[F],
    ema_regrets: &[F],
    p: F,
    c: F,
    epsilon: F,
    normalize_ema_regrets: bool,
) -> Result<F> {
    network_inference(
        raw_inferences,
        &[],
        ema_regrets,
        p,
        c,
        epsilon,
        normalize_ema_regrets,
    )
}
