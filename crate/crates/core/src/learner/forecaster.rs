//! Forecaster orchestration: target construction, training-window
//! management, global vs. per-inferer structures with global fallback, and
//! per-epoch prediction.

use super::gbt::{column_medians, fit_gbt, GbtModel, GbtHyperparams};
use super::tune::tune;
use crate::combiner::zscores;
use crate::config::{Structure, TargetKind, TopicConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::panel::EpochPanel;
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Rows a worker needs before a per-inferer model replaces the global
/// fallback.
pub const MIN_TRAIN_ROWS: usize = 50;

/// Artifact format version for serialized forecasters.
pub const FORECASTER_FORMAT_VERSION: u32 = 1;

/// Per-(epoch, worker) forecaster targets.
pub type TargetGrid = Vec<Vec<Option<f64>>>;

/// Builds the target grid for the given kind: log losses, regrets, or
/// cross-sectional regret z-scores.
pub fn build_targets(panel: &EpochPanel, kind: TargetKind, epsilon: f64) -> TargetGrid {
    match kind {
        TargetKind::Loss => panel.log_loss.clone(),
        TargetKind::Regret => panel.regret.clone(),
        TargetKind::Zscore => panel
            .regret
            .iter()
            .map(|row| {
                let present: Vec<f64> = row.iter().filter_map(|v| *v).collect();
                if present.is_empty() {
                    return vec![None; row.len()];
                }
                let z = zscores(&present, epsilon);
                let mut zi = z.into_iter();
                row.iter().map(|v| v.map(|_| zi.next().unwrap())).collect()
            })
            .collect(),
    }
}

/// Trained predictor bundle: structure, target kind, per-worker models and
/// the always-present global fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub format_version: u32,
    pub structure: Structure,
    pub target_kind: TargetKind,
    /// Pruned feature schema of the global model (includes inferer_id).
    pub schema: Vec<String>,
    pub global: GbtModel,
    /// Per-worker models keyed by worker index; schema excludes inferer_id.
    pub per_worker: BTreeMap<usize, GbtModel>,
    /// Training window [first_epoch, last_epoch).
    pub train_window: (usize, usize),
    pub seed: u64,
}

impl Forecaster {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Learn(format!("serialize forecaster: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Forecaster> {
        let text = std::fs::read_to_string(path)?;
        let f: Forecaster = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("forecaster artifact: {e}")))?;
        if f.format_version != FORECASTER_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported forecaster format version {}",
                f.format_version
            )));
        }
        Ok(f)
    }
}

fn gather_columns(
    matrix: &FeatureMatrix,
    schema: &[String],
    rows: &[usize],
    medians: &[f64],
) -> Vec<Vec<f64>> {
    schema
        .iter()
        .zip(medians)
        .map(|(name, &median)| {
            let col = matrix.column(name).expect("schema column present");
            rows.iter().map(|&r| col.values[r].unwrap_or(median)).collect()
        })
        .collect()
}

/// Options for [`train_forecaster`] beyond the topic config.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    /// Randomized-search budget; `None` trains with default hyperparameters.
    pub tune_budget: Option<usize>,
}

/// Trains a forecaster on the last `cfg.n_train` epochs before `test_start`:
/// prunes features against the target on training rows only, fits the global
/// model over all rows (inferer ID included) and, for the per-inferer
/// structure, one model per worker with enough rows (inferer ID excluded).
pub fn train_forecaster(
    panel: &EpochPanel,
    features: &FeatureMatrix,
    targets: &TargetGrid,
    cfg: &TopicConfig,
    test_start: usize,
    opts: TrainOptions,
) -> Result<Forecaster> {
    let train_start = test_start.saturating_sub(cfg.n_train);
    let target_rows: Vec<Option<f64>> = features
        .rows
        .iter()
        .map(|&(e, w)| targets[e][w])
        .collect();
    let train_rows: Vec<usize> = features
        .row_range(train_start, test_start)
        .into_iter()
        .filter(|&r| target_rows[r].is_some())
        .collect();
    if train_rows.is_empty() {
        return Err(Error::Learn("no usable training rows".into()));
    }

    let pruned = crate::features::prune_features(features, &target_rows, &train_rows, 0.0, 0.95);
    let mut schema = pruned.column_names();
    if !schema.iter().any(|n| n == "inferer_id") && features.column("inferer_id").is_some() {
        schema.insert(0, "inferer_id".to_string());
    }

    let opt_columns: Vec<Vec<Option<f64>>> = schema
        .iter()
        .map(|name| {
            let col = features.column(name).expect("schema column present");
            train_rows.iter().map(|&r| col.values[r]).collect()
        })
        .collect();
    let medians = column_medians(&opt_columns);
    let y: Vec<f64> = train_rows.iter().map(|&r| target_rows[r].unwrap()).collect();
    let columns = gather_columns(features, &schema, &train_rows, &medians);

    let hp = match opts.tune_budget {
        Some(budget) => tune(&columns, &y, budget, derive_seed(cfg.seed, "tune"))?,
        None => GbtHyperparams::default(),
    };

    let global = fit_gbt(
        &columns,
        &y,
        schema.clone(),
        medians.clone(),
        &hp,
        derive_seed(cfg.seed, "model:global"),
    )?;

    let mut per_worker = BTreeMap::new();
    if cfg.structure == Structure::PerInferer {
        let worker_schema: Vec<String> =
            schema.iter().filter(|n| n.as_str() != "inferer_id").cloned().collect();
        let worker_medians: Vec<f64> = schema
            .iter()
            .zip(&medians)
            .filter(|(n, _)| n.as_str() != "inferer_id")
            .map(|(_, &m)| m)
            .collect();
        for w in 0..panel.n_workers() {
            let rows_w: Vec<usize> = train_rows
                .iter()
                .copied()
                .filter(|&r| features.rows[r].1 == w)
                .collect();
            if rows_w.len() < MIN_TRAIN_ROWS {
                continue;
            }
            let cols_w = gather_columns(features, &worker_schema, &rows_w, &worker_medians);
            let y_w: Vec<f64> = rows_w.iter().map(|&r| target_rows[r].unwrap()).collect();
            let model = fit_gbt(
                &cols_w,
                &y_w,
                worker_schema.clone(),
                worker_medians.clone(),
                &hp,
                derive_seed(cfg.seed, &format!("model:worker:{}", panel.workers[w].id)),
            )?;
            per_worker.insert(w, model);
        }
    }

    Ok(Forecaster {
        format_version: FORECASTER_FORMAT_VERSION,
        structure: cfg.structure,
        target_kind: cfg.target_kind,
        schema,
        global,
        per_worker,
        train_window: (train_start, test_start),
        seed: cfg.seed,
    })
}

/// One prediction per present worker at the given epoch, from the worker's
/// own model when trained and the global fallback otherwise. Absent feature
/// values are imputed with training medians.
pub fn forecast_epoch(
    forecaster: &Forecaster,
    features: &FeatureMatrix,
    epoch: usize,
    present: &[bool],
) -> Vec<Option<f64>> {
    let n_workers = present.len();
    let mut out = vec![None; n_workers];
    for w in 0..n_workers {
        if !present[w] {
            continue;
        }
        let Some(row) = features
            .rows
            .iter()
            .position(|&(e, wi)| e == epoch && wi == w)
        else {
            continue;
        };
        let model = forecaster.per_worker.get(&w).unwrap_or(&forecaster.global);
        let values: Vec<f64> = model
            .schema
            .iter()
            .zip(&model.medians)
            .map(|(name, &median)| {
                features
                    .column(name)
                    .and_then(|c| c.values[row])
                    .unwrap_or(median)
            })
            .collect();
        out[w] = Some(model.predict_row(&values));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorkerId;
    use crate::features::{build_baseline_features, SpanPlan};

    fn panel_with_losses(n_epochs: usize, n_workers: usize) -> EpochPanel {
        let workers = (0..n_workers)
            .map(|w| WorkerId::inferer(format!("allo{w}")))
            .collect();
        let mut panel = EpochPanel::new(workers);
        for e in 0..n_epochs {
            let truth = 100.0 + (e as f64 * 0.17).sin() * 3.0;
            let infs: Vec<Option<f64>> = (0..n_workers)
                .map(|w| Some(truth + 0.4 * (w as f64 + 1.0) * ((e + w) as f64 * 0.39).sin()))
                .collect();
            let losses: Vec<Option<f64>> =
                infs.iter().map(|i| i.map(|v| (v - truth).powi(2))).collect();
            let log_losses: Vec<Option<f64>> =
                losses.iter().map(|l| l.map(|v| v.max(1e-12).log10())).collect();
            let net_ll = -0.5 + 0.05 * (e as f64 * 0.23).cos();
            let regrets: Vec<Option<f64>> =
                log_losses.iter().map(|l| l.map(|v| net_ll - v)).collect();
            panel.push_epoch(
                Some(truth),
                infs,
                losses,
                log_losses,
                regrets,
                Some(10f64.powf(net_ll)),
                Some(net_ll),
                vec![None; n_workers],
            );
        }
        panel
    }

    fn small_cfg(n_train: usize, structure: Structure) -> TopicConfig {
        TopicConfig {
            n_train,
            n_test: 20,
            max_lag: 0,
            span_set: vec![3, 14],
            structure,
            ..Default::default()
        }
    }

    #[test]
    fn zscore_targets_center_at_zero() {
        let panel = panel_with_losses(60, 4);
        let targets = build_targets(&panel, TargetKind::Zscore, 1e-8);
        for row in &targets {
            let present: Vec<f64> = row.iter().filter_map(|v| *v).collect();
            if present.is_empty() {
                continue;
            }
            let m: f64 = present.iter().sum::<f64>() / present.len() as f64;
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn regret_targets_pass_through() {
        let panel = panel_with_losses(40, 3);
        let targets = build_targets(&panel, TargetKind::Regret, 1e-8);
        assert_eq!(targets, panel.regret);
    }

    #[test]
    fn zscore_invariant_to_network_shift() {
        let panel = panel_with_losses(40, 3);
        let mut shifted = panel.clone();
        for row in &mut shifted.regret {
            for cell in row.iter_mut() {
                *cell = cell.map(|v| v + 3.5);
            }
        }
        let a = build_targets(&panel, TargetKind::Zscore, 1e-8);
        let b = build_targets(&shifted, TargetKind::Zscore, 1e-8);
        for (ra, rb) in a.iter().zip(&b) {
            for (ca, cb) in ra.iter().zip(rb) {
                match (ca, cb) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-9),
                    (None, None) => {}
                    _ => panic!("presence mismatch"),
                }
            }
        }
    }

    #[test]
    fn global_structure_trains_no_worker_models() {
        let panel = panel_with_losses(140, 3);
        let features =
            build_baseline_features(&panel, &SpanPlan::Uniform(vec![3, 14]), None, 1e-8).unwrap();
        let cfg = small_cfg(100, Structure::Global);
        let targets = build_targets(&panel, cfg.target_kind, cfg.epsilon);
        let f = train_forecaster(&panel, &features, &targets, &cfg, 120, TrainOptions::default())
            .unwrap();
        assert!(f.per_worker.is_empty());
        assert_eq!(f.train_window, (20, 120));
    }

    #[test]
    fn sparse_worker_uses_global_fallback() {
        let mut panel = panel_with_losses(140, 3);
        // worker 2 only present for the last 10 epochs
        for e in 0..130 {
            panel.inference[e][2] = None;
            panel.loss[e][2] = None;
            panel.log_loss[e][2] = None;
            panel.regret[e][2] = None;
        }
        let features =
            build_baseline_features(&panel, &SpanPlan::Uniform(vec![3, 14]), None, 1e-8).unwrap();
        let cfg = small_cfg(100, Structure::PerInferer);
        let targets = build_targets(&panel, cfg.target_kind, cfg.epsilon);
        let f = train_forecaster(&panel, &features, &targets, &cfg, 120, TrainOptions::default())
            .unwrap();
        assert!(f.per_worker.contains_key(&0));
        assert!(f.per_worker.contains_key(&1));
        assert!(!f.per_worker.contains_key(&2));
        // fallback totality: every present worker gets one forecast
        let preds = forecast_epoch(&f, &features, 135, &[true, true, true]);
        assert!(preds.iter().all(|p| p.map_or(false, |v| v.is_finite())));
        // absent worker gets none
        let preds = forecast_epoch(&f, &features, 135, &[true, false, true]);
        assert!(preds[1].is_none());
    }

    #[test]
    fn deterministic_and_serializable() {
        let panel = panel_with_losses(140, 3);
        let features =
            build_baseline_features(&panel, &SpanPlan::Uniform(vec![3, 14]), None, 1e-8).unwrap();
        let cfg = small_cfg(100, Structure::PerInferer);
        let targets = build_targets(&panel, cfg.target_kind, cfg.epsilon);
        let a = train_forecaster(&panel, &features, &targets, &cfg, 120, TrainOptions::default())
            .unwrap();
        let b = train_forecaster(&panel, &features, &targets, &cfg, 120, TrainOptions::default())
            .unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forecaster.json");
        a.save(&path).unwrap();
        let back = Forecaster::load(&path).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn training_window_hygiene() {
        let panel = panel_with_losses(140, 3);
        let features =
            build_baseline_features(&panel, &SpanPlan::Uniform(vec![3, 14]), None, 1e-8).unwrap();
        let cfg = small_cfg(1000, Structure::Global); // wider than available
        let cfg = TopicConfig { max_lag: 0, ..cfg };
        let targets = build_targets(&panel, cfg.target_kind, cfg.epsilon);
        let f = train_forecaster(&panel, &features, &targets, &cfg, 120, TrainOptions::default())
            .unwrap();
        assert_eq!(f.train_window.1, 120);
        assert!(f.train_window.0 < f.train_window.1);
    }
}
