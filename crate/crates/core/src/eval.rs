//! Evaluation harness: metrics, robust regression diagnostics, trial
//! execution and sweep orchestration. A trial rolls a scenario forward,
//! trains a forecaster on the training window and scores the forecast-implied
//! inference against the naive combination over the test window.

use crate::combiner::{
    epoch_loss, forecast_implied_inference, mean, naive_network_inference, network_inference,
    to_log_loss, update_ema_regret, weights_from_forecast,
};
use crate::config::{validate_config, Structure, TargetKind, TopicConfig, WorkerId};
use crate::error::{Error, Result};
use crate::features::{
    attach_market_columns, build_baseline_features, build_market_features,
    inference_return_column, inference_return_cross_columns, FeatureMatrix, LagPolicy, SpanPlan,
};
use crate::learner::{build_targets, forecast_epoch, train_forecaster, TargetGrid, TrainOptions};
use crate::panel::{EpochPanel, MarketSeries};
use crate::rng::{derive_rng, derive_seed};
use crate::synth::{gen_contextual_inferers, gen_fixed_interval, gen_gbm_truth, gen_sinusoidal,
    SineSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Lag-selection confidence used by the default feature pipeline.
pub const LAG_CONFIDENCE: f64 = 0.99;

/// Bootstrap resamples for Huber confidence intervals.
pub const DEFAULT_BOOTSTRAP_N: usize = 1000;

/// Data source for a trial: a synthetic benchmark regenerated per seed or a
/// recorded dataset replayed as-is.
#[derive(Debug, Clone)]
pub enum Scenario {
    /// Regret panel with sinusoidal outperformers plus random inferers.
    Sine { n_epochs: usize, specs: Vec<SineSpec>, n_random: usize },
    /// Regret panel with one fixed-interval outperformer plus random inferers.
    Periodic { n_epochs: usize, spike: (f64, usize), base_half_width: f64, n_random: usize },
    /// GBM truth with archetypal inferers; full truth/loss pipeline.
    Contextual { n_epochs: usize },
    /// Recorded inference/truth data; optional market history.
    Replay { panel: EpochPanel, market: Option<MarketSeries> },
}

impl Scenario {
    pub fn sine(n_epochs: usize) -> Scenario {
        Scenario::Sine {
            n_epochs,
            specs: vec![
                SineSpec { amplitude: 1.0, period: 10, noise_half_width: 1.0 },
                SineSpec { amplitude: 1.5, period: 17, noise_half_width: 1.0 },
            ],
            n_random: 8,
        }
    }

    pub fn periodic(n_epochs: usize) -> Scenario {
        Scenario::Periodic {
            n_epochs,
            spike: (1.0, 10),
            base_half_width: 0.5,
            n_random: 8,
        }
    }

    pub fn contextual(n_epochs: usize) -> Scenario {
        Scenario::Contextual { n_epochs }
    }

    /// True when the scenario supplies regrets directly with no truth/loss
    /// layer; evaluation is then forecast RMSE only.
    pub fn regret_only(&self) -> bool {
        matches!(self, Scenario::Sine { .. } | Scenario::Periodic { .. })
    }
}

/// Root mean square error of two aligned series.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Eval(format!(
            "rmse length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let ms = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(ms.sqrt())
}

/// Mean log loss of an inference series against truth; the flag reports that
/// at least one epoch loss was clamped to the floor (degenerate fit).
pub fn mean_log_loss(
    inference: &[f64],
    truth: &[f64],
    cfg: &TopicConfig,
) -> Result<(f64, bool)> {
    if inference.is_empty() || inference.len() != truth.len() {
        return Err(Error::Eval(format!(
            "mean_log_loss length mismatch: {} vs {}",
            inference.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut degenerate = false;
    for (&i, &t) in inference.iter().zip(truth) {
        let (ll, hit) = to_log_loss(epoch_loss(i, t), cfg.loss_floor, cfg.log_base);
        sum += ll;
        degenerate |= hit;
    }
    Ok((sum / inference.len() as f64, degenerate))
}

/// Huber linear fit with a bootstrap slope confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberFit {
    pub slope: f64,
    pub intercept: f64,
    /// 16th/84th percentile bootstrap slope band (1 sigma).
    pub slope_ci: (f64, f64),
}

fn weighted_least_squares(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sw += w[i];
        swx += w[i] * x[i];
        swy += w[i] * y[i];
        swxx += w[i] * x[i] * x[i];
        swxy += w[i] * x[i] * y[i];
    }
    let det = sw * swxx - swx * swx;
    if det.abs() <= 1e-12 * sw * sw.max(swxx) {
        return Err(Error::Eval("degenerate x variance in linear fit".into()));
    }
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;
    Ok((intercept, slope))
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated percentile, q in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

/// Huber delta: standardized-residual threshold between the quadratic and
/// linear loss branches.
const HUBER_DELTA: f64 = 1.345;

fn huber_irls(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    let ones = vec![1.0; n];
    let (mut intercept, mut slope) = weighted_least_squares(x, y, &ones)?;
    for _ in 0..100 {
        let residuals: Vec<f64> = (0..n).map(|i| y[i] - intercept - slope * x[i]).collect();
        let med = median_of(residuals.clone());
        let mad = median_of(residuals.iter().map(|r| (r - med).abs()).collect());
        let scale = mad / 0.6745;
        if scale <= 1e-12 {
            break; // exact fit
        }
        let w: Vec<f64> = residuals
            .iter()
            .map(|r| {
                let z = r.abs() / scale;
                if z <= HUBER_DELTA { 1.0 } else { HUBER_DELTA / z }
            })
            .collect();
        let (i2, s2) = weighted_least_squares(x, y, &w)?;
        let delta = (i2 - intercept).abs() + (s2 - slope).abs();
        intercept = i2;
        slope = s2;
        if delta < 1e-8 {
            break;
        }
    }
    Ok((intercept, slope))
}

/// Robust linear regression of y on x (iteratively reweighted least squares
/// with the Huber loss), plus a bootstrap 1-sigma slope band.
pub fn huber_fit(x: &[f64], y: &[f64], bootstrap_n: usize, seed: u64) -> Result<HuberFit> {
    if x.len() < 3 || x.len() != y.len() {
        return Err(Error::Eval(format!("huber_fit needs >= 3 aligned points, got {}", x.len())));
    }
    let (intercept, slope) = huber_irls(x, y)?;
    let mut rng = derive_rng(seed, "huber:bootstrap");
    let mut slopes = Vec::with_capacity(bootstrap_n);
    let n = x.len();
    for _ in 0..bootstrap_n {
        let mut bx = Vec::with_capacity(n);
        let mut by = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            bx.push(x[i]);
            by.push(y[i]);
        }
        if let Ok((_, s)) = huber_irls(&bx, &by) {
            slopes.push(s);
        }
    }
    let slope_ci = if slopes.is_empty() {
        (slope, slope)
    } else {
        (percentile(&slopes, 0.16), percentile(&slopes, 0.84))
    };
    Ok(HuberFit { slope, intercept, slope_ci })
}

/// One test epoch of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub truth: Option<f64>,
    /// Forecasted target per worker (absent workers get none).
    pub forecasts: Vec<Option<f64>>,
    /// Sigmoid-gated combination weight per worker.
    pub weights: Vec<Option<f64>>,
    pub implied: Option<f64>,
    pub naive: Option<f64>,
    pub network: Option<f64>,
}

/// Trial summaries; all recomputable from the per-epoch records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    /// Forecast RMSE per worker over the test window.
    pub per_worker_rmse: Vec<Option<f64>>,
    pub implied_mean_log_loss: Option<f64>,
    pub naive_mean_log_loss: Option<f64>,
    /// Any epoch loss hit the floor while scoring.
    pub log_loss_degenerate: bool,
    /// Predicted-vs-true target fit per worker.
    pub huber: Vec<Option<HuberFit>>,
}

/// Full record of one trial: test-window epochs, true forecast targets,
/// summaries, seed and the exact configuration used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub workers: Vec<WorkerId>,
    pub test_start: usize,
    pub epochs: Vec<EpochRecord>,
    /// True target values over the test window, aligned with `epochs`.
    pub true_targets: Vec<Vec<Option<f64>>>,
    pub summary: TrialSummary,
    pub seed: u64,
    pub config: TopicConfig,
}

impl TrialResult {
    /// Long-format export: one row per test epoch.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,truth,naive,implied,network")?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for rec in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                rec.epoch,
                fmt(rec.truth),
                fmt(rec.naive),
                fmt(rec.implied),
                fmt(rec.network)
            )?;
        }
        Ok(())
    }
}

/// Panel plus the naive combination series computed while rolling.
#[derive(Debug, Clone)]
pub struct Rolled {
    pub panel: EpochPanel,
    pub naive: Vec<Option<f64>>,
}

/// Missing entries take the cross-sectional mean of the present ones (a new
/// worker starts at a neutral weight), or zero when nothing is present.
fn fill_missing(values: &[Option<f64>]) -> Vec<f64> {
    let present: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    let fill = if present.is_empty() { 0.0 } else { mean(&present) };
    values.iter().map(|v| v.unwrap_or(fill)).collect()
}

/// Rolls a raw (inference + truth) panel forward epoch by epoch: naive
/// combination, losses, regrets against the naive network loss, and EMA
/// regrets. The naive inference defines the network loss so forecaster
/// quality never feeds back into its own targets.
fn roll_panel(
    workers: Vec<WorkerId>,
    truth: &[Option<f64>],
    inference: &[Vec<Option<f64>>],
    cfg: &TopicConfig,
) -> Result<Rolled> {
    let n_workers = workers.len();
    let mut panel = EpochPanel::new(workers);
    let mut naive_series = Vec::with_capacity(truth.len());
    let mut ema_state: Vec<Option<f64>> = vec![None; n_workers];
    let mut floor_hits = 0usize;

    for (e, row) in inference.iter().enumerate() {
        let present: Vec<usize> = (0..n_workers).filter(|&w| row[w].is_some()).collect();
        let naive = if present.is_empty() {
            None
        } else {
            let raw: Vec<f64> = present.iter().map(|&w| row[w].unwrap()).collect();
            let emas: Vec<Option<f64>> = present.iter().map(|&w| ema_state[w]).collect();
            Some(naive_network_inference(
                &raw,
                &fill_missing(&emas),
                cfg.p,
                cfg.c,
                cfg.epsilon,
                cfg.normalize_ema_regrets,
            )?)
        };
        naive_series.push(naive);

        let (network_loss, network_log_loss) = match (naive, truth[e]) {
            (Some(n), Some(t)) => {
                let loss = epoch_loss(n, t);
                let (ll, hit) = to_log_loss(loss, cfg.loss_floor, cfg.log_base);
                floor_hits += hit as usize;
                (Some(loss), Some(ll))
            }
            _ => (None, None),
        };

        let mut loss = vec![None; n_workers];
        let mut log_loss = vec![None; n_workers];
        let mut regret = vec![None; n_workers];
        for &w in &present {
            if let Some(t) = truth[e] {
                let l = epoch_loss(row[w].unwrap(), t);
                let (ll, hit) = to_log_loss(l, cfg.loss_floor, cfg.log_base);
                floor_hits += hit as usize;
                loss[w] = Some(l);
                log_loss[w] = Some(ll);
                if let Some(net_ll) = network_log_loss {
                    let r = net_ll - ll;
                    regret[w] = Some(r);
                    ema_state[w] = Some(update_ema_regret(ema_state[w], r, cfg.alpha));
                }
            }
        }
        panel.push_epoch(
            truth[e],
            row.clone(),
            loss,
            log_loss,
            regret,
            network_loss,
            network_log_loss,
            ema_state.clone(),
        );
    }
    panel.loss_floor_hits = floor_hits;
    Ok(Rolled { panel, naive: naive_series })
}

/// Instantiates the scenario's data for one seed.
pub fn materialize(scenario: &Scenario, cfg: &TopicConfig, seed: u64) -> Result<Rolled> {
    match scenario {
        Scenario::Sine { n_epochs, specs, n_random } => {
            let panel = gen_sinusoidal(*n_epochs, specs, *n_random, seed);
            let naive = vec![None; *n_epochs];
            Ok(Rolled { panel, naive })
        }
        Scenario::Periodic { n_epochs, spike, base_half_width, n_random } => {
            let panel = gen_fixed_interval(*n_epochs, *spike, *base_half_width, *n_random, seed);
            let naive = vec![None; *n_epochs];
            Ok(Rolled { panel, naive })
        }
        Scenario::Contextual { n_epochs } => {
            let (prices, regime) =
                gen_gbm_truth(*n_epochs, 1000.0, 0.01, [-0.01, 0.0, 0.01], 5.0, 3.0, seed);
            let (workers, inference) = gen_contextual_inferers(&prices, &regime, 0.01, seed);
            let truth: Vec<Option<f64>> = prices.iter().map(|&p| Some(p)).collect();
            roll_panel(workers, &truth, &inference, cfg)
        }
        Scenario::Replay { panel, .. } => {
            roll_panel(panel.workers.clone(), &panel.truth, &panel.inference, cfg)
        }
    }
}

fn scenario_market(scenario: &Scenario, panel: &EpochPanel) -> Option<MarketSeries> {
    match scenario {
        Scenario::Contextual { .. } => {
            let close: Vec<f64> = panel.truth.iter().map(|t| t.unwrap()).collect();
            Some(MarketSeries::from_close(close))
        }
        Scenario::Replay { market, .. } => market.clone(),
        _ => None,
    }
}

fn span_plan(cfg: &TopicConfig) -> SpanPlan {
    match cfg.adaptive_spans {
        Some([gradient, rolling, ema]) => SpanPlan::Adaptive { gradient, rolling, ema },
        None => SpanPlan::Uniform(cfg.span_set.clone()),
    }
}

fn build_features(
    panel: &EpochPanel,
    market: Option<&MarketSeries>,
    cfg: &TopicConfig,
    test_start: usize,
) -> Result<FeatureMatrix> {
    let plan = span_plan(cfg);
    let lag_policy = (cfg.max_lag > 0).then_some(LagPolicy {
        max_lag: cfg.max_lag,
        confidence: LAG_CONFIDENCE,
        train_end: test_start,
    });
    let mut matrix = build_baseline_features(panel, &plan, lag_policy, cfg.epsilon)?;
    if let Some(mkt) = market {
        let cols = build_market_features(mkt, &plan)?;
        attach_market_columns(&mut matrix, &cols);
        if panel.inference.iter().flatten().any(|v| v.is_some()) {
            let rows = matrix.rows.clone();
            matrix
                .columns
                .push(inference_return_column(&panel.inference, &mkt.close, &rows));
            matrix
                .columns
                .extend(inference_return_cross_columns(&panel.inference, &mkt.close, &rows));
        }
    }
    Ok(matrix)
}

/// Test-window outputs of one forecaster over a rolled panel.
struct ForecastRun {
    epochs: Vec<EpochRecord>,
}

/// Forecasts every test epoch, forms weights and the implied inference, and
/// scores the network combination (raw + implied, gated by EMA regrets).
fn run_forecast_window(
    rolled: &Rolled,
    features: &FeatureMatrix,
    targets: &TargetGrid,
    cfg: &TopicConfig,
    test_start: usize,
    opts: TrainOptions,
) -> Result<ForecastRun> {
    let panel = &rolled.panel;
    let n_epochs = panel.n_epochs();
    let n_workers = panel.n_workers();
    let forecaster = train_forecaster(panel, features, targets, cfg, test_start, opts)?;

    let mut epochs = Vec::with_capacity(n_epochs - test_start);
    let mut implied_ema: Option<f64> = None;
    for t in test_start..n_epochs {
        // a worker is present when it participates at t; regret-only panels
        // carry no inference layer
        let present: Vec<bool> = (0..n_workers)
            .map(|w| panel.inference[t][w].is_some() || panel.regret[t][w].is_some())
            .collect();
        let forecasts = forecast_epoch(&forecaster, features, t, &present);
        // only workers with a raw inference enter the combination
        let idx: Vec<usize> = (0..n_workers)
            .filter(|&w| forecasts[w].is_some() && panel.inference[t][w].is_some())
            .collect();

        let mut weights = vec![None; n_workers];
        let mut implied = None;
        let mut network = None;
        if !idx.is_empty() {
            let f: Vec<f64> = idx.iter().map(|&w| forecasts[w].unwrap()).collect();
            let raw: Vec<f64> = idx.iter().map(|&w| panel.inference[t][w].unwrap()).collect();
            let prev_net_ll = (t >= 1)
                .then(|| panel.network_log_loss[t - 1])
                .flatten()
                .unwrap_or(0.0);
            let wv = weights_from_forecast(
                cfg.target_kind,
                &f,
                prev_net_ll,
                cfg.p,
                cfg.c,
                cfg.epsilon,
                cfg.delta_z,
            );
            for (k, &w) in idx.iter().enumerate() {
                weights[w] = Some(wv.weights[k]);
            }
            let implied_value = forecast_implied_inference(&raw, &wv)?;
            implied = Some(implied_value);

            // network combination: raw workers first, then the implied one
            let mut emas: Vec<Option<f64>> = idx
                .iter()
                .map(|&w| (t >= 1).then(|| panel.ema_regret[t - 1][w]).flatten())
                .collect();
            emas.push(implied_ema);
            network = Some(network_inference(
                &raw,
                &[implied_value],
                &fill_missing(&emas),
                cfg.p,
                cfg.c,
                cfg.epsilon,
                cfg.normalize_ema_regrets,
            )?);

            // regret bookkeeping for the implied inference
            if let (Some(truth), Some(net_ll)) = (panel.truth[t], panel.network_log_loss[t]) {
                let (ll, _) = to_log_loss(
                    epoch_loss(implied_value, truth),
                    cfg.loss_floor,
                    cfg.log_base,
                );
                implied_ema =
                    Some(update_ema_regret(implied_ema, net_ll - ll, cfg.alpha));
            }
        }
        epochs.push(EpochRecord {
            epoch: t,
            truth: panel.truth[t],
            forecasts,
            weights,
            implied,
            naive: rolled.naive[t],
            network,
        });
    }
    Ok(ForecastRun { epochs })
}

fn summarize(
    epochs: &[EpochRecord],
    true_targets: &[Vec<Option<f64>>],
    cfg: &TopicConfig,
    seed: u64,
) -> Result<TrialSummary> {
    let n_workers = true_targets.first().map_or(0, |r| r.len());
    let mut per_worker_rmse = vec![None; n_workers];
    let mut huber = vec![None; n_workers];
    for w in 0..n_workers {
        let mut pred = Vec::new();
        let mut actual = Vec::new();
        for (rec, targets) in epochs.iter().zip(true_targets) {
            if let (Some(p), Some(a)) = (rec.forecasts[w], targets[w]) {
                pred.push(p);
                actual.push(a);
            }
        }
        if !pred.is_empty() {
            per_worker_rmse[w] = Some(rmse(&pred, &actual)?);
        }
        if pred.len() >= 3 {
            huber[w] = huber_fit(
                &actual,
                &pred,
                DEFAULT_BOOTSTRAP_N,
                derive_seed(seed, &format!("huber:{w}")),
            )
            .ok();
        }
    }

    let score = |pick: fn(&EpochRecord) -> Option<f64>| -> Result<Option<(f64, bool)>> {
        let mut inf = Vec::new();
        let mut tr = Vec::new();
        for rec in epochs {
            if let (Some(v), Some(t)) = (pick(rec), rec.truth) {
                inf.push(v);
                tr.push(t);
            }
        }
        if inf.is_empty() {
            Ok(None)
        } else {
            mean_log_loss(&inf, &tr, cfg).map(Some)
        }
    };
    let implied = score(|r| r.implied)?;
    let naive = score(|r| r.naive)?;
    Ok(TrialSummary {
        per_worker_rmse,
        implied_mean_log_loss: implied.map(|(v, _)| v),
        naive_mean_log_loss: naive.map(|(v, _)| v),
        log_loss_degenerate: implied.map_or(false, |(_, d)| d) || naive.map_or(false, |(_, d)| d),
        huber,
    })
}

/// Runs one full trial: roll the scenario, build features, train, forecast
/// the test window and assemble summaries.
pub fn run_trial(scenario: &Scenario, cfg: &TopicConfig, seed: u64) -> Result<TrialResult> {
    let cfg = validate_config(TopicConfig { seed, ..cfg.clone() })?;
    let rolled = materialize(scenario, &cfg, seed)?;
    let n_epochs = rolled.panel.n_epochs();
    if n_epochs < cfg.n_train + cfg.n_test {
        return Err(Error::Validation(format!(
            "scenario supplies {n_epochs} epochs, need n_train + n_test = {}",
            cfg.n_train + cfg.n_test
        )));
    }
    let test_start = n_epochs - cfg.n_test;
    let market = scenario_market(scenario, &rolled.panel);
    let targets = build_targets(&rolled.panel, cfg.target_kind, cfg.epsilon);
    let true_targets: Vec<Vec<Option<f64>>> = targets[test_start..].to_vec();

    let epochs = if cfg.n_forecasters == 0 {
        // no forecasting workers: implied absent, network == naive
        (test_start..n_epochs)
            .map(|t| EpochRecord {
                epoch: t,
                truth: rolled.panel.truth[t],
                forecasts: vec![None; rolled.panel.n_workers()],
                weights: vec![None; rolled.panel.n_workers()],
                implied: None,
                naive: rolled.naive[t],
                network: rolled.naive[t],
            })
            .collect()
    } else {
        let features = build_features(&rolled.panel, market.as_ref(), &cfg, test_start)?;
        run_forecast_window(&rolled, &features, &targets, &cfg, test_start, TrainOptions::default())
            .map_err(|e| Error::Eval(format!("trial seed {seed}: {e}")))?
            .epochs
    };

    let summary = summarize(&epochs, &true_targets, &cfg, seed)?;
    Ok(TrialResult {
        workers: rolled.panel.workers.clone(),
        test_start,
        epochs,
        true_targets,
        summary,
        seed,
        config: cfg,
    })
}

/// Sweep axes; the cross product defines the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub targets: Vec<TargetKind>,
    pub structures: Vec<Structure>,
    pub span_sets: Vec<Vec<usize>>,
    pub n_trains: Vec<usize>,
}

/// The nine span sets of the default sweep.
pub fn default_span_sets() -> Vec<Vec<usize>> {
    vec![
        vec![3],
        vec![7],
        vec![14],
        vec![3, 7],
        vec![3, 14],
        vec![7, 14],
        vec![3, 30],
        vec![14, 30],
        vec![3, 14, 60],
    ]
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            targets: vec![TargetKind::Loss, TargetKind::Regret, TargetKind::Zscore],
            structures: vec![Structure::Global, Structure::PerInferer],
            span_sets: default_span_sets(),
            n_trains: vec![1000],
        }
    }
}

/// Cell identity within a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub target: TargetKind,
    pub structure: Structure,
    pub spans: Vec<usize>,
    pub n_train: usize,
}

impl CellKey {
    pub fn spans_label(&self) -> String {
        self.spans
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// One sweep cell: the trial distribution and its median, with the naive
/// baseline alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: CellKey,
    /// Mean implied log loss per trial, in trial order.
    pub losses: Vec<f64>,
    /// Naive baseline per trial (identical across cells for a given trial).
    pub naive: Vec<f64>,
    pub median: f64,
    pub naive_median: f64,
}

/// Full sweep output, cells in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub n_repeats: usize,
    pub base_seed: u64,
}

impl SweepTable {
    pub fn cell(&self, key: &CellKey) -> Option<&SweepCell> {
        self.cells.iter().find(|c| &c.key == key)
    }

    /// Long format: one row per (cell, trial).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "target,structure,spans,n_train,trial,seed,mean_log_loss,naive_log_loss"
        )?;
        for cell in &self.cells {
            for (trial, (&loss, &naive)) in cell.losses.iter().zip(&cell.naive).enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    cell.key.target,
                    cell.key.structure,
                    cell.key.spans_label(),
                    cell.key.n_train,
                    trial,
                    self.base_seed + trial as u64,
                    loss,
                    naive
                )?;
            }
        }
        Ok(())
    }
}

/// Runs the sweep: `n_repeats` trials per cell with seeds base_seed + trial
/// index. Trials parallelize; the panel roll and feature matrices are shared
/// across the cells of one trial (they do not depend on the cell axes), so
/// the naive baseline is identical across cells by construction.
pub fn run_sweep(
    scenario: &Scenario,
    grid: &SweepGrid,
    n_repeats: usize,
    base_seed: u64,
    cfg: &TopicConfig,
) -> Result<SweepTable> {
    if grid.targets.is_empty()
        || grid.structures.is_empty()
        || grid.span_sets.is_empty()
        || grid.n_trains.is_empty()
    {
        return Err(Error::Validation("sweep grid has an empty axis".into()));
    }
    let keys: Vec<CellKey> = grid
        .targets
        .iter()
        .flat_map(|&target| {
            grid.structures.iter().flat_map(move |&structure| {
                grid.span_sets.iter().flat_map(move |spans| {
                    grid.n_trains.iter().map(move |&n_train| CellKey {
                        target,
                        structure,
                        spans: spans.clone(),
                        n_train,
                    })
                })
            })
        })
        .collect();

    // per-trial results, keyed so assembly is independent of thread order
    let per_trial: Result<Vec<Vec<(f64, f64)>>> = (0..n_repeats)
        .into_par_iter()
        .map(|trial| {
            let seed = base_seed + trial as u64;
            sweep_trial(scenario, &keys, cfg, seed)
        })
        .collect();
    let per_trial = per_trial?;

    let cells = keys
        .iter()
        .enumerate()
        .map(|(k, key)| {
            let losses: Vec<f64> = per_trial.iter().map(|t| t[k].0).collect();
            let naive: Vec<f64> = per_trial.iter().map(|t| t[k].1).collect();
            SweepCell {
                key: key.clone(),
                median: median_of(losses.clone()),
                naive_median: median_of(naive.clone()),
                losses,
                naive,
            }
        })
        .collect();
    Ok(SweepTable { cells, n_repeats, base_seed })
}

/// One seed's pass over every cell, sharing the rolled panel and reusing the
/// feature matrix per distinct span configuration.
fn sweep_trial(
    scenario: &Scenario,
    keys: &[CellKey],
    cfg: &TopicConfig,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let max_n_train = keys.iter().map(|k| k.n_train).max().unwrap();
    let base_cfg = validate_config(TopicConfig {
        seed,
        n_train: max_n_train,
        ..cfg.clone()
    })?;
    let rolled = materialize(scenario, &base_cfg, seed)?;
    let n_epochs = rolled.panel.n_epochs();
    if n_epochs < max_n_train + base_cfg.n_test {
        return Err(Error::Validation(format!(
            "scenario supplies {n_epochs} epochs, need {}",
            max_n_train + base_cfg.n_test
        )));
    }
    let test_start = n_epochs - base_cfg.n_test;
    let market = scenario_market(scenario, &rolled.panel);

    // naive baseline: shared by every cell of this trial
    let mut naive = Vec::new();
    let mut truth = Vec::new();
    for t in test_start..n_epochs {
        if let (Some(v), Some(tr)) = (rolled.naive[t], rolled.panel.truth[t]) {
            naive.push(v);
            truth.push(tr);
        }
    }
    let (naive_ll, _) = mean_log_loss(&naive, &truth, &base_cfg)?;

    let mut feature_cache: Vec<(Vec<usize>, FeatureMatrix)> = Vec::new();
    let mut target_cache: Vec<(TargetKind, TargetGrid)> = Vec::new();
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let cell_cfg = TopicConfig {
            target_kind: key.target,
            structure: key.structure,
            span_set: key.spans.clone(),
            n_train: key.n_train,
            ..base_cfg.clone()
        };
        if !feature_cache.iter().any(|(s, _)| s == &key.spans) {
            let matrix = build_features(&rolled.panel, market.as_ref(), &cell_cfg, test_start)?;
            feature_cache.push((key.spans.clone(), matrix));
        }
        let features =
            &feature_cache.iter().find(|(s, _)| s == &key.spans).unwrap().1;
        if !target_cache.iter().any(|(k, _)| *k == key.target) {
            let grid = build_targets(&rolled.panel, key.target, cell_cfg.epsilon);
            target_cache.push((key.target, grid));
        }
        let targets = &target_cache.iter().find(|(k, _)| *k == key.target).unwrap().1;

        let run = run_forecast_window(
            &rolled,
            features,
            targets,
            &cell_cfg,
            test_start,
            TrainOptions::default(),
        )
        .map_err(|e| Error::Eval(format!("sweep cell {key:?} seed {seed}: {e}")))?;
        let mut implied = Vec::new();
        let mut truth = Vec::new();
        for rec in &run.epochs {
            if let (Some(v), Some(t)) = (rec.implied, rec.truth) {
                implied.push(v);
                truth.push(t);
            }
        }
        let (implied_ll, _) = mean_log_loss(&implied, &truth, &base_cfg)?;
        out.push((implied_ll, naive_ll));
    }
    Ok(out)
}

/// Per-worker context-awareness diagnostics of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub worker: WorkerId,
    pub fit: HuberFit,
    /// Slope strictly positive over the whole 1-sigma bootstrap band.
    pub positive_at_1sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub rows: Vec<SlopeRow>,
    pub median_slope: Option<f64>,
}

/// Huber fits of predicted vs true targets per worker: the slope measures
/// whether the forecaster tracks per-epoch out/underperformance.
pub fn context_awareness_report(trial: &TrialResult) -> ContextReport {
    let mut rows = Vec::new();
    for (w, fit) in trial.summary.huber.iter().enumerate() {
        if let Some(fit) = *fit {
            rows.push(SlopeRow {
                worker: trial.workers[w].clone(),
                fit,
                positive_at_1sigma: fit.slope_ci.0 > 0.0,
            });
        }
    }
    let median_slope = (!rows.is_empty())
        .then(|| median_of(rows.iter().map(|r| r.fit.slope).collect()));
    ContextReport { rows, median_slope }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(
            rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(),
            12.5f64.sqrt(),
            max_relative = 1e-12
        );
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_log_loss_examples() {
        let cfg = TopicConfig::default();
        // exact inference: clamped to floor and flagged
        let (ll, degenerate) = mean_log_loss(&[5.0], &[5.0], &cfg).unwrap();
        assert_relative_eq!(ll, 1e-12f64.log10(), max_relative = 1e-12);
        assert!(degenerate);
        // constant absolute error e -> 2 log10 e
        let (ll, degenerate) = mean_log_loss(&[3.0, 13.0], &[0.0, 10.0], &cfg).unwrap();
        assert_relative_eq!(ll, 2.0 * 3f64.log10(), max_relative = 1e-12);
        assert!(!degenerate);
        // alternating +-sqrt(10): each loss 10, log 1
        let e = 10f64.sqrt();
        let (ll, _) = mean_log_loss(&[e, -e, e, -e], &[0.0; 4], &cfg).unwrap();
        assert_relative_eq!(ll, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn huber_exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = huber_fit(&x, &y, 50, 1).unwrap();
        assert_relative_eq!(fit.slope, 2.0, max_relative = 1e-9);
        assert!(fit.intercept.abs() < 1e-9);
    }

    #[test]
    fn huber_resists_outliers_where_ols_fails() {
        let mut rng = derive_rng(3, "huber-test");
        let n = 100;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        let mut y: Vec<f64> = x.iter().map(|v| v + 0.05 * rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n / 10 {
            y[i * 10] = 100.0;
        }
        let ones = vec![1.0; n];
        let (_, ols_slope) = weighted_least_squares(&x, &y, &ones).unwrap();
        assert!((ols_slope - 1.0).abs() > 0.5, "ols slope {ols_slope}");
        let fit = huber_fit(&x, &y, 50, 1).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.1, "huber slope {}", fit.slope);
    }

    #[test]
    fn huber_rejects_constant_x() {
        let x = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(huber_fit(&x, &y, 10, 1).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_relative_eq!(percentile(&v, 0.25), 2.0, max_relative = 1e-12);
    }

    fn small_contextual_cfg(seed: u64) -> TopicConfig {
        TopicConfig {
            n_train: 260,
            n_test: 40,
            max_lag: 0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_forecasters_network_equals_naive() {
        let cfg = TopicConfig { n_forecasters: 0, ..small_contextual_cfg(5) };
        let scenario = Scenario::contextual(300);
        let trial = run_trial(&scenario, &cfg, 5).unwrap();
        for rec in &trial.epochs {
            assert!(rec.implied.is_none());
            assert_eq!(rec.naive, rec.network); // bit-identical
        }
        assert!(trial.summary.implied_mean_log_loss.is_none());
        assert!(trial.summary.naive_mean_log_loss.is_some());
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = small_contextual_cfg(9);
        let scenario = Scenario::contextual(300);
        let a = run_trial(&scenario, &cfg, 9).unwrap();
        let b = run_trial(&scenario, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trial_summaries_match_recomputation() {
        let cfg = small_contextual_cfg(4);
        let scenario = Scenario::contextual(300);
        let trial = run_trial(&scenario, &cfg, 4).unwrap();
        let again = summarize(&trial.epochs, &trial.true_targets, &trial.config, 4).unwrap();
        for (a, b) in trial.summary.per_worker_rmse.iter().zip(&again.per_worker_rmse) {
            match (a, b) {
                (Some(x), Some(y)) => assert_relative_eq!(x, y, max_relative = 1e-12),
                (None, None) => {}
                _ => panic!("presence mismatch"),
            }
        }
        assert_relative_eq!(
            trial.summary.implied_mean_log_loss.unwrap(),
            again.implied_mean_log_loss.unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn regret_only_trial_reports_rmse_only() {
        let cfg = TopicConfig {
            n_train: 200,
            n_test: 30,
            max_lag: 30,
            target_kind: TargetKind::Regret,
            ..Default::default()
        };
        let scenario = Scenario::sine(230);
        let trial = run_trial(&scenario, &cfg, 3).unwrap();
        assert!(trial.summary.implied_mean_log_loss.is_none());
        assert!(trial.summary.naive_mean_log_loss.is_none());
        assert!(trial.summary.per_worker_rmse.iter().all(|r| r.is_some()));
        assert!(trial.epochs.iter().all(|r| r.implied.is_none() && r.naive.is_none()));
    }

    #[test]
    fn trial_rejects_short_scenario() {
        let cfg = small_contextual_cfg(1);
        let scenario = Scenario::contextual(100);
        let err = run_trial(&scenario, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn sweep_single_repeat_medians_equal_values() {
        let grid = SweepGrid {
            targets: vec![TargetKind::Zscore],
            structures: vec![Structure::Global],
            span_sets: vec![vec![3]],
            n_trains: vec![200],
        };
        let cfg = TopicConfig { n_test: 30, max_lag: 0, ..Default::default() };
        let scenario = Scenario::contextual(230);
        let table = run_sweep(&scenario, &grid, 1, 11, &cfg).unwrap();
        assert_eq!(table.cells.len(), 1);
        assert_eq!(table.cells[0].losses.len(), 1);
        assert_eq!(table.cells[0].median, table.cells[0].losses[0]);
        assert_eq!(table.cells[0].naive_median, table.cells[0].naive[0]);
    }

    #[test]
    fn sweep_naive_baseline_identical_across_cells() {
        let grid = SweepGrid {
            targets: vec![TargetKind::Regret, TargetKind::Zscore],
            structures: vec![Structure::Global],
            span_sets: vec![vec![3], vec![3, 7]],
            n_trains: vec![200],
        };
        let cfg = TopicConfig { n_test: 30, max_lag: 0, ..Default::default() };
        let scenario = Scenario::contextual(230);
        let table = run_sweep(&scenario, &grid, 2, 21, &cfg).unwrap();
        assert_eq!(table.cells.len(), 4);
        for cell in &table.cells {
            assert_eq!(cell.naive, table.cells[0].naive);
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let table = SweepTable {
            cells: vec![SweepCell {
                key: CellKey {
                    target: TargetKind::Zscore,
                    structure: Structure::PerInferer,
                    spans: vec![3, 14],
                    n_train: 1000,
                },
                losses: vec![1.5, 1.6],
                naive: vec![2.0, 2.1],
                median: 1.55,
                naive_median: 2.05,
            }],
            n_repeats: 2,
            base_seed: 7,
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "target,structure,spans,n_train,trial,seed,mean_log_loss,naive_log_loss"
        );
        assert_eq!(lines.next().unwrap(), "zscore,per_inferer,3-14,1000,0,7,1.5,2");
        assert_eq!(lines.next().unwrap(), "zscore,per_inferer,3-14,1000,1,8,1.6,2.1");
    }

    #[test]
    fn context_report_perfect_forecaster() {
        let cfg = small_contextual_cfg(8);
        let scenario = Scenario::contextual(300);
        let mut trial = run_trial(&scenario, &cfg, 8).unwrap();
        // overwrite forecasts with the true targets: slopes all one
        for (rec, targets) in trial.epochs.iter_mut().zip(&trial.true_targets) {
            rec.forecasts = targets.clone();
        }
        trial.summary = summarize(&trial.epochs, &trial.true_targets, &trial.config, 8).unwrap();
        let report = context_awareness_report(&trial);
        assert!(!report.rows.is_empty());
        for row in &report.rows {
            assert_relative_eq!(row.fit.slope, 1.0, max_relative = 1e-6);
        }
        assert_relative_eq!(report.median_slope.unwrap(), 1.0, max_relative = 1e-6);
    }
}
