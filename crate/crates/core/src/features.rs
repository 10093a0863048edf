//! Leakage-safe feature engineering: per-series transforms (gradients,
//! momentum, EWM/rolling statistics), autocorrelation-driven lag features,
//! cross-sectional statistics and correlation pruning.
//!
//! Every column carries an availability offset: 0 means the current epoch's
//! value may be used (inferences), 1 means only strictly earlier history
//! (anything derived from truth, losses or regrets).

use crate::combiner::{mean, population_std};
use crate::error::{Error, Result};
use crate::panel::{EpochPanel, MarketSeries};
use std::io::Write;

/// Window lengths per transform family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanPlan {
    /// One span set applied to all families.
    Uniform(Vec<usize>),
    /// Per-family spans, ordered [gradients, rolling windows, EMAs].
    Adaptive { gradient: usize, rolling: usize, ema: usize },
}

impl SpanPlan {
    pub fn gradient_spans(&self) -> Vec<usize> {
        match self {
            SpanPlan::Uniform(s) => s.clone(),
            SpanPlan::Adaptive { gradient, .. } => vec![*gradient],
        }
    }

    pub fn rolling_spans(&self) -> Vec<usize> {
        match self {
            SpanPlan::Uniform(s) => s.clone(),
            SpanPlan::Adaptive { rolling, .. } => vec![*rolling],
        }
    }

    pub fn ema_spans(&self) -> Vec<usize> {
        match self {
            SpanPlan::Uniform(s) => s.clone(),
            SpanPlan::Adaptive { ema, .. } => vec![*ema],
        }
    }

    pub fn max_span(&self) -> usize {
        match self {
            SpanPlan::Uniform(s) => s.iter().copied().max().unwrap_or(2),
            SpanPlan::Adaptive { gradient, rolling, ema } => {
                (*gradient).max(*rolling).max(*ema)
            }
        }
    }
}

/// Lags significant in both ACF and PACF at the stated confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSet {
    pub lags: Vec<usize>,
    pub confidence: f64,
}

/// How lags are searched when building baseline features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagPolicy {
    pub max_lag: usize,
    pub confidence: f64,
    /// Lag selection only sees epochs strictly before this index.
    pub train_end: usize,
}

/// One named feature column aligned with the matrix rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// 0 = current epoch allowed, 1 = previous epoch only.
    pub offset: u8,
    pub values: Vec<Option<f64>>,
}

/// Feature rows keyed by (epoch, worker) with named, availability-tagged
/// columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    /// (epoch, worker index) per row, in epoch-major order.
    pub rows: Vec<(usize, usize)>,
    pub columns: Vec<Column>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> FeatureMatrix {
        let columns = names
            .iter()
            .filter_map(|n| self.column(n).cloned())
            .collect();
        FeatureMatrix { rows: self.rows.clone(), columns }
    }

    /// Row indices whose epoch falls in [start, end).
    pub fn row_range(&self, start: usize, end: usize) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, (e, _))| *e >= start && *e < end)
            .map(|(i, _)| i)
            .collect()
    }

    /// CSV export with an availability tag in the header, for debugging.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["epoch".to_string(), "worker".to_string()];
        header.extend(self.columns.iter().map(|c| format!("{}@{}", c.name, c.offset)));
        writeln!(w, "{}", header.join(","))?;
        for (ri, (epoch, worker)) in self.rows.iter().enumerate() {
            let mut fields = vec![epoch.to_string(), worker.to_string()];
            for col in &self.columns {
                fields.push(match col.values[ri] {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn opt2(a: Option<f64>, b: Option<f64>, f: impl Fn(f64, f64) -> f64) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(f(x, y)),
        _ => None,
    }
}

/// Applies the engineered transforms to one series, emitting named columns.
/// Warm-up rows without sufficient history are absent-valued.
pub fn transform_series(
    x: &[Option<f64>],
    plan: &SpanPlan,
) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let n = x.len();
    if n < plan.max_span() + 2 {
        return Err(Error::Feature(format!(
            "series length {n} below max span {} + 2",
            plan.max_span()
        )));
    }
    let mut out: Vec<(String, Vec<Option<f64>>)> = Vec::new();

    // first difference
    let gradient: Vec<Option<f64>> = (0..n)
        .map(|t| if t >= 1 { opt2(x[t], x[t - 1], |a, b| a - b) } else { None })
        .collect();
    out.push(("gradient".into(), gradient));

    // second difference
    let accel: Vec<Option<f64>> = (0..n)
        .map(|t| {
            if t >= 2 {
                match (x[t], x[t - 1], x[t - 2]) {
                    (Some(a), Some(b), Some(c)) => Some(a - 2.0 * b + c),
                    _ => None,
                }
            } else {
                None
            }
        })
        .collect();
    out.push(("acceleration".into(), accel));

    for &s in &plan.gradient_spans() {
        let momentum: Vec<Option<f64>> = (0..n)
            .map(|t| if t >= s { opt2(x[t], x[t - s], |a, b| a - b) } else { None })
            .collect();
        out.push((format!("momentum_{s}"), momentum));
    }

    for &s in &plan.ema_spans() {
        let alpha = 2.0 / (s as f64 + 1.0);
        let mut ewm_mean = vec![None; n];
        let mut ewm_std = vec![None; n];
        let mut m: Option<f64> = None;
        let mut m2: Option<f64> = None;
        for t in 0..n {
            if let Some(v) = x[t] {
                m = Some(match m {
                    Some(prev) => alpha * v + (1.0 - alpha) * prev,
                    None => v,
                });
                m2 = Some(match m2 {
                    Some(prev) => alpha * v * v + (1.0 - alpha) * prev,
                    None => v * v,
                });
            }
            if let (Some(mv), Some(m2v)) = (m, m2) {
                if x[t].is_some() {
                    ewm_mean[t] = Some(mv);
                    ewm_std[t] = Some((m2v - mv * mv).max(0.0).sqrt());
                }
            }
        }
        out.push((format!("ewm_mean_{s}"), ewm_mean));
        out.push((format!("ewm_std_{s}"), ewm_std));
    }

    for &s in &plan.rolling_spans() {
        let mut roll_mean = vec![None; n];
        let mut roll_std = vec![None; n];
        let mut diff_ma = vec![None; n];
        for t in 0..n {
            if t + 1 >= s {
                let window: Option<Vec<f64>> = x[t + 1 - s..=t].iter().copied().collect();
                if let Some(w) = window {
                    let m = mean(&w);
                    roll_mean[t] = Some(m);
                    roll_std[t] = Some(population_std(&w));
                    diff_ma[t] = x[t].map(|v| v - m);
                }
            }
        }
        out.push((format!("roll_mean_{s}"), roll_mean));
        out.push((format!("roll_std_{s}"), roll_std));
        out.push((format!("diff_ma_{s}"), diff_ma));
    }

    Ok(out)
}

/// Sample autocorrelation r_k for k in 0..=max_lag. The flag reports a
/// zero-variance (degenerate) series, for which all lags are zero.
pub fn acf(x: &[f64], max_lag: usize) -> Result<(Vec<f64>, bool)> {
    let n = x.len();
    if n < max_lag + 2 {
        return Err(Error::Feature(format!(
            "series length {n} too short for max lag {max_lag}"
        )));
    }
    let m = mean(x);
    let denom: f64 = x.iter().map(|&v| (v - m) * (v - m)).sum();
    if denom <= 0.0 {
        let mut r = vec![0.0; max_lag + 1];
        r[0] = 1.0;
        return Ok((r, true));
    }
    let mut r = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let num: f64 = (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum();
        r.push(num / denom);
    }
    Ok((r, false))
}

/// Partial autocorrelations for lags 1..=max_lag via the Durbin-Levinson
/// recursion on the ACF sequence.
pub fn pacf(x: &[f64], max_lag: usize) -> Result<(Vec<f64>, bool)> {
    let (r, degenerate) = acf(x, max_lag)?;
    if degenerate {
        return Ok((vec![0.0; max_lag], true));
    }
    let mut pacf_out = Vec::with_capacity(max_lag);
    let mut phi_prev: Vec<f64> = Vec::new();
    let mut err = 1.0f64;
    for k in 1..=max_lag {
        let mut num = r[k];
        for (j, &p) in phi_prev.iter().enumerate() {
            num -= p * r[k - 1 - j];
        }
        let phi_kk = if err.abs() > 1e-300 { num / err } else { 0.0 };
        let mut phi = Vec::with_capacity(k);
        for j in 0..k - 1 {
            phi.push(phi_prev[j] - phi_kk * phi_prev[k - 2 - j]);
        }
        phi.push(phi_kk);
        err *= 1.0 - phi_kk * phi_kk;
        pacf_out.push(phi_kk);
        phi_prev = phi;
    }
    Ok((pacf_out, false))
}

/// Inverse standard-normal CDF (Acklam's rational approximation; absolute
/// error below 1.2e-9, ample for significance bands).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Lags >= 2 whose ACF and PACF both exceed the two-sided normal band at the
/// given confidence level.
pub fn select_lags(x: &[f64], max_lag: usize, confidence: f64) -> Result<LagSet> {
    if max_lag < 2 {
        return Ok(LagSet { lags: vec![], confidence });
    }
    let (r, degenerate_a) = acf(x, max_lag)?;
    let (pr, degenerate_p) = pacf(x, max_lag)?;
    if degenerate_a || degenerate_p {
        return Ok(LagSet { lags: vec![], confidence });
    }
    let band = normal_quantile((1.0 + confidence) / 2.0) / (x.len() as f64).sqrt();
    let lags = (2..=max_lag)
        .filter(|&k| r[k].abs() > band && pr[k - 1].abs() > band)
        .collect();
    Ok(LagSet { lags, confidence })
}

/// Population mean, std and per-worker z-scores over present workers at one
/// epoch.
pub fn cross_sectional_stats(
    values: &[Option<f64>],
    epsilon: f64,
) -> (Option<f64>, Option<f64>, Vec<Option<f64>>) {
    let present: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if present.is_empty() {
        return (None, None, vec![None; values.len()]);
    }
    let m = mean(&present);
    let sd = population_std(&present);
    let z = values
        .iter()
        .map(|v| v.map(|x| (x - m) / (sd + epsilon)))
        .collect();
    (Some(m), Some(sd), z)
}

fn shift1(x: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = vec![None; x.len()];
    for t in 1..x.len() {
        out[t] = x[t - 1];
    }
    out
}

fn push_series_columns(
    columns: &mut Vec<Column>,
    prefix: &str,
    offset: u8,
    per_worker: &[Vec<(String, Vec<Option<f64>>)>],
    rows: &[(usize, usize)],
) {
    if per_worker.is_empty() {
        return;
    }
    for ci in 0..per_worker[0].len() {
        let name = format!("{prefix}_{}", per_worker[0][ci].0);
        let values = rows
            .iter()
            .map(|&(e, w)| per_worker[w][ci].1[e])
            .collect();
        columns.push(Column { name, offset, values });
    }
}

/// Builds the baseline (network-derived) feature matrix: identity, raw and
/// transformed inference/loss/regret series, network loss history,
/// significant-lag regret features and cross-sectional statistics.
pub fn build_baseline_features(
    panel: &EpochPanel,
    plan: &SpanPlan,
    lag_policy: Option<LagPolicy>,
    epsilon: f64,
) -> Result<FeatureMatrix> {
    let n_epochs = panel.n_epochs();
    let n_workers = panel.n_workers();
    if n_epochs < plan.max_span() + 2 {
        return Err(Error::Feature("panel shorter than feature warm-up".into()));
    }
    let rows: Vec<(usize, usize)> = (0..n_epochs)
        .flat_map(|e| (0..n_workers).map(move |w| (e, w)))
        .collect();
    let mut columns: Vec<Column> = Vec::new();

    // inferer identity, label-encoded
    columns.push(Column {
        name: "inferer_id".into(),
        offset: 0,
        values: rows.iter().map(|&(_, w)| Some(w as f64)).collect(),
    });

    let has = |matrix: &[Vec<Option<f64>>]| matrix.iter().flatten().any(|c| c.is_some());
    let worker_series = |matrix: &[Vec<Option<f64>>], w: usize| -> Vec<Option<f64>> {
        matrix.iter().map(|row| row[w]).collect()
    };

    // raw values at their availability offsets
    if has(&panel.inference) {
        columns.push(Column {
            name: "inference".into(),
            offset: 0,
            values: rows.iter().map(|&(e, w)| panel.inference[e][w]).collect(),
        });
    }
    if has(&panel.log_loss) {
        columns.push(Column {
            name: "log_loss_prev".into(),
            offset: 1,
            values: rows
                .iter()
                .map(|&(e, w)| if e >= 1 { panel.log_loss[e - 1][w] } else { None })
                .collect(),
        });
    }
    if has(&panel.regret) {
        columns.push(Column {
            name: "regret_prev".into(),
            offset: 1,
            values: rows
                .iter()
                .map(|&(e, w)| if e >= 1 { panel.regret[e - 1][w] } else { None })
                .collect(),
        });
    }
    if panel.network_log_loss.iter().any(|v| v.is_some()) {
        columns.push(Column {
            name: "network_log_loss_prev".into(),
            offset: 1,
            values: rows
                .iter()
                .map(|&(e, _)| if e >= 1 { panel.network_log_loss[e - 1] } else { None })
                .collect(),
        });
        let shifted = shift1(&panel.network_log_loss);
        let cols = transform_series(&shifted, plan)?;
        for (suffix, values) in cols {
            columns.push(Column {
                name: format!("network_log_loss_{suffix}"),
                offset: 1,
                values: rows.iter().map(|&(e, _)| values[e]).collect(),
            });
        }
    }

    // per-worker series transforms; offset-1 series are shifted before
    // transforming so nothing at the current epoch leaks in
    let series_specs: [(&str, &Vec<Vec<Option<f64>>>, u8); 3] = [
        ("inference", &panel.inference, 0),
        ("log_loss", &panel.log_loss, 1),
        ("regret", &panel.regret, 1),
    ];
    for (prefix, matrix, offset) in series_specs {
        if !has(matrix) {
            continue;
        }
        let mut per_worker = Vec::with_capacity(n_workers);
        for w in 0..n_workers {
            let mut series = worker_series(matrix, w);
            if offset == 1 {
                series = shift1(&series);
            }
            per_worker.push(transform_series(&series, plan)?);
        }
        push_series_columns(&mut columns, prefix, offset, &per_worker, &rows);
    }

    // autocorrelation-selected lags of the regret series
    if let (Some(policy), true) = (lag_policy, has(&panel.regret)) {
        let mut union: Vec<usize> = Vec::new();
        for w in 0..n_workers {
            let series: Vec<f64> = (0..policy.train_end.min(n_epochs))
                .filter_map(|e| panel.regret[e][w])
                .collect();
            if series.len() < policy.max_lag + 2 {
                continue;
            }
            let set = select_lags(&series, policy.max_lag, policy.confidence)?;
            for lag in set.lags {
                if !union.contains(&lag) {
                    union.push(lag);
                }
            }
        }
        union.sort_unstable();
        union.truncate(10);
        for lag in union {
            columns.push(Column {
                name: format!("regret_lag_{lag}"),
                offset: 1,
                values: rows
                    .iter()
                    .map(|&(e, w)| if e >= lag { panel.regret[e - lag][w] } else { None })
                    .collect(),
            });
        }
    }

    // cross-sectional statistics at the previous epoch
    for (prefix, matrix) in [("log_loss", &panel.log_loss), ("regret", &panel.regret)] {
        if !has(matrix) {
            continue;
        }
        let mut means = vec![None; n_epochs];
        let mut stds = vec![None; n_epochs];
        let mut zs = vec![vec![None; n_workers]; n_epochs];
        for e in 1..n_epochs {
            let (m, sd, z) = cross_sectional_stats(&matrix[e - 1], epsilon);
            means[e] = m;
            stds[e] = sd;
            zs[e] = z;
        }
        columns.push(Column {
            name: format!("cs_{prefix}_mean"),
            offset: 1,
            values: rows.iter().map(|&(e, _)| means[e]).collect(),
        });
        columns.push(Column {
            name: format!("cs_{prefix}_std"),
            offset: 1,
            values: rows.iter().map(|&(e, _)| stds[e]).collect(),
        });
        columns.push(Column {
            name: format!("cs_{prefix}_z"),
            offset: 1,
            values: rows.iter().map(|&(e, w)| zs[e][w]).collect(),
        });
        // the full cross-worker z pattern at the previous epoch, broadcast to
        // every row: which worker led last epoch is context for all of them
        if prefix == "regret" {
            for k in 0..n_workers {
                columns.push(Column {
                    name: format!("cs_{prefix}_z_w{k}"),
                    offset: 1,
                    values: rows.iter().map(|&(e, _)| zs[e][k]).collect(),
                });
            }
            // own-z rolling means smooth single-epoch noise in the z pattern
            for &s in &plan.rolling_spans() {
                let values = rows
                    .iter()
                    .map(|&(e, w)| {
                        if e < s {
                            return None;
                        }
                        let window: Vec<f64> =
                            (e + 1 - s..=e).filter_map(|ep| zs[ep][w]).collect();
                        if window.is_empty() {
                            None
                        } else {
                            Some(window.iter().sum::<f64>() / window.len() as f64)
                        }
                    })
                    .collect();
                columns.push(Column {
                    name: format!("cs_{prefix}_z_roll_{s}"),
                    offset: 1,
                    values,
                });
            }
            // EWM-smoothed z damps single-epoch noise in the pattern while
            // still reacting quickly after regime switches
            for &s in &plan.ema_spans() {
                let alpha = 2.0 / (s as f64 + 1.0);
                let mut ema = vec![None; n_epochs];
                let mut state: Option<Vec<Option<f64>>> = None;
                for e in 0..n_epochs {
                    let mut cur = state.take().unwrap_or_else(|| vec![None; n_workers]);
                    for k in 0..n_workers {
                        if let Some(v) = zs[e][k] {
                            cur[k] = Some(match cur[k] {
                                Some(prev) => alpha * v + (1.0 - alpha) * prev,
                                None => v,
                            });
                        }
                    }
                    ema[e] = Some(cur.clone());
                    state = Some(cur);
                }
                columns.push(Column {
                    name: format!("cs_{prefix}_z_ewm_{s}"),
                    offset: 1,
                    values: rows
                        .iter()
                        .map(|&(e, w)| ema[e].as_ref().and_then(|row| row[w]))
                        .collect(),
                });
            }
        }
    }

    // drop columns with no present value at all
    columns.retain(|c| c.values.iter().any(|v| v.is_some()));
    Ok(FeatureMatrix { rows, columns })
}

/// Market (private) feature columns: transforms of the close price plus
/// percentage change, rolling volatility of log returns, Bollinger band
/// position and price/moving-average ratio. All offset 1: row at epoch i
/// only sees closes through i-1.
pub fn build_market_features(mkt: &MarketSeries, plan: &SpanPlan) -> Result<Vec<Column>> {
    let n = mkt.close.len();
    if n < plan.max_span() + 2 {
        return Err(Error::Feature("market series shorter than warm-up".into()));
    }
    // value at index t describes close[t]; rows read index i-1
    let close_opt: Vec<Option<f64>> = mkt.close.iter().map(|&v| Some(v)).collect();
    let mut per_close: Vec<(String, Vec<Option<f64>>)> = transform_series(&close_opt, plan)?
        .into_iter()
        .map(|(s, v)| (format!("close_{s}"), v))
        .collect();

    let pct: Vec<Option<f64>> = (0..n)
        .map(|t| {
            if t >= 1 && mkt.close[t - 1] != 0.0 {
                Some(mkt.close[t] / mkt.close[t - 1] - 1.0)
            } else {
                None
            }
        })
        .collect();
    per_close.push(("close_pct_change".into(), pct));

    let log_ret: Vec<Option<f64>> = (0..n)
        .map(|t| {
            if t >= 1 && mkt.close[t - 1] > 0.0 && mkt.close[t] > 0.0 {
                Some((mkt.close[t] / mkt.close[t - 1]).ln())
            } else {
                None
            }
        })
        .collect();
    for &s in &plan.rolling_spans() {
        let mut vol = vec![None; n];
        let mut boll = vec![None; n];
        let mut ratio = vec![None; n];
        for t in 0..n {
            if t + 1 >= s {
                let rets: Option<Vec<f64>> = log_ret[t + 1 - s..=t].iter().copied().collect();
                vol[t] = rets.map(|r| population_std(&r));
                let window = &mkt.close[t + 1 - s..=t];
                let m = mean(window);
                let sd = population_std(window);
                boll[t] = Some(if sd > 0.0 { (mkt.close[t] - m) / (2.0 * sd) } else { 0.0 });
                ratio[t] = if m != 0.0 { Some(mkt.close[t] / m) } else { None };
            }
        }
        per_close.push((format!("close_volatility_{s}"), vol));
        per_close.push((format!("close_bollinger_{s}"), boll));
        per_close.push((format!("close_ratio_ma_{s}"), ratio));
    }

    // shift to offset 1
    Ok(per_close
        .into_iter()
        .map(|(name, values)| Column { name, offset: 1, values: shift1(&values) })
        .collect())
}

/// Per-row log return implied by each worker's current inference against the
/// previous close: ln(inference_i / close_{i-1}). Offset 0 — the inference is
/// available at the current epoch, the close is strictly historical.
pub fn inference_return_column(
    inference: &[Vec<Option<f64>>],
    close: &[f64],
    rows: &[(usize, usize)],
) -> Column {
    let values = rows
        .iter()
        .map(|&(e, w)| {
            if e == 0 {
                return None;
            }
            let inf = inference[e][w]?;
            let prev = close[e - 1];
            if inf > 0.0 && prev > 0.0 {
                Some((inf / prev).ln())
            } else {
                None
            }
        })
        .collect();
    Column { name: "inference_log_return".into(), offset: 0, values }
}

/// Broadcast copies of every worker's current implied log return: the
/// cross-section of predicted moves at the epoch is context for each row.
pub fn inference_return_cross_columns(
    inference: &[Vec<Option<f64>>],
    close: &[f64],
    rows: &[(usize, usize)],
) -> Vec<Column> {
    let n_workers = inference.first().map_or(0, |r| r.len());
    (0..n_workers)
        .map(|k| {
            let values = rows
                .iter()
                .map(|&(e, _)| {
                    if e == 0 {
                        return None;
                    }
                    let inf = inference[e][k]?;
                    let prev = close[e - 1];
                    if inf > 0.0 && prev > 0.0 {
                        Some((inf / prev).ln())
                    } else {
                        None
                    }
                })
                .collect();
            Column { name: format!("inference_log_return_w{k}"), offset: 0, values }
        })
        .collect()
}

/// Broadcasts per-epoch market columns onto the (epoch, worker) rows of a
/// baseline matrix.
pub fn attach_market_columns(matrix: &mut FeatureMatrix, market_cols: &[Column]) {
    for col in market_cols {
        matrix.columns.push(Column {
            name: col.name.clone(),
            offset: col.offset,
            values: matrix.rows.iter().map(|&(e, _)| col.values[e]).collect(),
        });
    }
}

fn pearson(xs: &[Option<f64>], ys: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter_map(|(a, b)| Some((((*a)?), ((*b)?))))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Drops zero-variance columns, then for each highly correlated pair keeps
/// the member more correlated with the target. Restricted to the given
/// training rows; deterministic by column-name order.
pub fn prune_features(
    matrix: &FeatureMatrix,
    target: &[Option<f64>],
    train_rows: &[usize],
    var_floor: f64,
    corr_cap: f64,
) -> FeatureMatrix {
    let restrict = |vals: &[Option<f64>]| -> Vec<Option<f64>> {
        train_rows.iter().map(|&r| vals[r]).collect()
    };
    let y = restrict(target);

    // name-ordered iteration for determinism
    let mut order: Vec<usize> = (0..matrix.columns.len()).collect();
    order.sort_by(|&a, &b| matrix.columns[a].name.cmp(&matrix.columns[b].name));

    let mut kept: Vec<usize> = Vec::new();
    let mut kept_vals: Vec<Vec<Option<f64>>> = Vec::new();
    let mut kept_target_corr: Vec<f64> = Vec::new();

    for &ci in &order {
        let vals = restrict(&matrix.columns[ci].values);
        let present: Vec<f64> = vals.iter().filter_map(|v| *v).collect();
        if present.len() < 2 {
            continue;
        }
        let var = {
            let sd = population_std(&present);
            sd * sd
        };
        if var <= var_floor {
            continue;
        }
        let target_corr = pearson(&vals, &y).map(f64::abs).unwrap_or(0.0);

        let mut drop_new = false;
        let mut drop_kept: Option<usize> = None;
        for (ki, kvals) in kept_vals.iter().enumerate() {
            if let Some(rho) = pearson(&vals, kvals) {
                if rho.abs() > corr_cap {
                    // keep the stronger |corr with target|; ties drop the
                    // lexicographically later name (the new one, since we
                    // iterate in name order)
                    if target_corr > kept_target_corr[ki] {
                        drop_kept = Some(ki);
                    } else {
                        drop_new = true;
                    }
                    break;
                }
            }
        }
        if drop_new {
            continue;
        }
        if let Some(ki) = drop_kept {
            kept.remove(ki);
            kept_vals.remove(ki);
            kept_target_corr.remove(ki);
        }
        kept.push(ci);
        kept_vals.push(vals);
        kept_target_corr.push(target_corr);
    }

    // restore the original column order among the kept set
    kept.sort_unstable();
    FeatureMatrix {
        rows: matrix.rows.clone(),
        columns: kept.into_iter().map(|ci| matrix.columns[ci].clone()).collect(),
    }
}
