//! Seeded generators for the synthetic benchmarks: sinusoidal regrets,
//! fixed-interval periodic outperformance, and the GBM contextual
//! outperformance scenario with archetypal inferers. Every generator is a
//! pure function of (config, seed); each worker draws from its own RNG
//! stream keyed by worker id, so results do not depend on iteration order.

use crate::config::WorkerId;
use crate::panel::EpochPanel;
use crate::rng::derive_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sinusoidal regret outperformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineSpec {
    pub amplitude: f64,
    pub period: usize,
    pub noise_half_width: f64,
}

/// Drift regime label per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    Down,
    None,
    Up,
}

/// Contiguous drift regimes over the epoch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRegime {
    pub labels: Vec<RegimeLabel>,
    pub drift: Vec<f64>,
}

/// Inferer archetypes of the contextual benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    SpecialistDown,
    SpecialistUp,
    SpecialistNone,
    Random,
    EmaFollower { span: usize },
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.gen_range(-half_width..half_width)
    }
}

/// Standard normal via Box-Muller (deterministic per stream).
fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    // Knuth's method; fine for small lambda
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen_range(0.0f64..1.0);
        if p <= l {
            return k;
        }
        k += 1;
    }
}

/// Regret panel with sinusoidal outperformers plus purely random inferers.
/// Outperformer regret: amplitude * sin(2 pi i / period) + noise; random
/// inferers draw uniform regrets in [-1, 1].
pub fn gen_sinusoidal(
    n_epochs: usize,
    specs: &[SineSpec],
    n_random: usize,
    seed: u64,
) -> EpochPanel {
    let mut workers = Vec::new();
    for i in 0..specs.len() + n_random {
        workers.push(WorkerId::inferer(format!("allo{i}")));
    }
    let mut regrets = vec![vec![None; workers.len()]; n_epochs];
    for (w, spec) in specs.iter().enumerate() {
        let mut rng = derive_rng(seed, &format!("sine:allo{w}"));
        for (i, row) in regrets.iter_mut().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / spec.period as f64;
            row[w] = Some(spec.amplitude * phase.sin() + uniform(&mut rng, spec.noise_half_width));
        }
    }
    for r in 0..n_random {
        let w = specs.len() + r;
        let mut rng = derive_rng(seed, &format!("sine:allo{w}"));
        for row in regrets.iter_mut() {
            row[w] = Some(uniform(&mut rng, 1.0));
        }
    }
    EpochPanel::from_regrets(workers, regrets)
}

/// Regret panel with one fixed-interval outperformer (regret = height at
/// epochs divisible by the period, uniform noise otherwise) plus random
/// inferers with the same baseline noise.
pub fn gen_fixed_interval(
    n_epochs: usize,
    spike: (f64, usize),
    base_half_width: f64,
    n_random: usize,
    seed: u64,
) -> EpochPanel {
    let (height, period) = spike;
    assert!(period >= 2, "spike period must be >= 2");
    let mut workers = vec![WorkerId::inferer("allo0")];
    for r in 0..n_random {
        workers.push(WorkerId::inferer(format!("allo{}", r + 1)));
    }
    let mut regrets = vec![vec![None; workers.len()]; n_epochs];
    let mut rng = derive_rng(seed, "periodic:allo0");
    for (i, row) in regrets.iter_mut().enumerate() {
        row[0] = Some(if i % period == 0 {
            height
        } else {
            uniform(&mut rng, base_half_width)
        });
    }
    for r in 0..n_random {
        let w = r + 1;
        let mut rng = derive_rng(seed, &format!("periodic:allo{w}"));
        for row in regrets.iter_mut() {
            row[w] = Some(uniform(&mut rng, base_half_width));
        }
    }
    EpochPanel::from_regrets(workers, regrets)
}

/// Geometric Brownian motion truth with randomly modulated drift regimes.
/// Regime labels are drawn with probabilities {1, none_weight, 1} /
/// (none_weight + 2) and lengths max(1, Poisson(mean_len)); within a regime
/// the per-epoch log return is drift + sigma * N(0,1).
#[allow(clippy::too_many_arguments)]
pub fn gen_gbm_truth(
    n_epochs: usize,
    init: f64,
    sigma: f64,
    drift_values: [f64; 3],
    mean_len: f64,
    none_weight: f64,
    seed: u64,
) -> (Vec<f64>, DriftRegime) {
    let mut regime_rng = derive_rng(seed, "gbm:regimes");
    let mut labels = Vec::with_capacity(n_epochs);
    let mut drift = Vec::with_capacity(n_epochs);
    while labels.len() < n_epochs {
        let total = none_weight + 2.0;
        let u: f64 = regime_rng.gen_range(0.0..1.0);
        let label = if u < 1.0 / total {
            RegimeLabel::Down
        } else if u < (1.0 + none_weight) / total {
            RegimeLabel::None
        } else {
            RegimeLabel::Up
        };
        let len = poisson(&mut regime_rng, mean_len).max(1);
        let d = match label {
            RegimeLabel::Down => drift_values[0],
            RegimeLabel::None => drift_values[1],
            RegimeLabel::Up => drift_values[2],
        };
        for _ in 0..len {
            if labels.len() >= n_epochs {
                break;
            }
            labels.push(label);
            drift.push(d);
        }
    }

    let mut ret_rng = derive_rng(seed, "gbm:returns");
    let mut prices = Vec::with_capacity(n_epochs);
    prices.push(init);
    for t in 1..n_epochs {
        let r = drift[t] + sigma * std_normal(&mut ret_rng);
        prices.push(prices[t - 1] * r.exp());
    }
    (prices, DriftRegime { labels, drift })
}

/// The ten contextual-benchmark inferers and their archetypes.
pub fn contextual_archetypes() -> Vec<(String, Archetype)> {
    let mut out = vec![
        ("allo0".to_string(), Archetype::SpecialistDown),
        ("allo1".to_string(), Archetype::SpecialistUp),
        ("allo2".to_string(), Archetype::SpecialistNone),
    ];
    for i in 3..7 {
        out.push((format!("allo{i}"), Archetype::Random));
    }
    for (i, span) in [(7usize, 5usize), (8, 7), (9, 9)] {
        out.push((format!("allo{i}"), Archetype::EmaFollower { span }));
    }
    out
}

/// Per-epoch price-space inferences for the contextual benchmark. Each
/// worker predicts a log return (specialists track the true return in their
/// regime, EMA followers revert toward a lagging average, others are noise)
/// which is converted to price space on top of the previous truth.
/// Volatility factors are drawn once per worker per trial.
pub fn gen_contextual_inferers(
    truth: &[f64],
    regime: &DriftRegime,
    sigma: f64,
    seed: u64,
) -> (Vec<WorkerId>, Vec<Vec<Option<f64>>>) {
    let archetypes = contextual_archetypes();
    let n_epochs = truth.len();
    let n_workers = archetypes.len();
    let workers: Vec<WorkerId> = archetypes
        .iter()
        .map(|(id, _)| WorkerId::inferer(id.clone()))
        .collect();
    let mut inference = vec![vec![None; n_workers]; n_epochs];

    for (w, (id, archetype)) in archetypes.iter().enumerate() {
        let mut rng = derive_rng(seed, &format!("inferer:{id}"));
        // per-trial volatility factors
        let (f_accurate, f_off) = match archetype {
            Archetype::SpecialistDown | Archetype::SpecialistUp | Archetype::SpecialistNone => {
                (rng.gen_range(0.1..0.3), rng.gen_range(0.5..1.0))
            }
            Archetype::Random => {
                let f = rng.gen_range(0.2..1.2);
                (f, f)
            }
            Archetype::EmaFollower { .. } => {
                let f = rng.gen_range(0.5..1.0);
                (f, f)
            }
        };
        let mut ema: Option<f64> = None;
        let ema_alpha = match archetype {
            Archetype::EmaFollower { span } => 2.0 / (*span as f64 + 1.0),
            _ => 0.0,
        };
        for t in 0..n_epochs {
            if t >= 1 {
                let true_ret = (truth[t] / truth[t - 1]).ln();
                let pred_ret = match archetype {
                    Archetype::SpecialistDown
                    | Archetype::SpecialistUp
                    | Archetype::SpecialistNone => {
                        let matches = matches!(
                            (archetype, regime.labels[t]),
                            (Archetype::SpecialistDown, RegimeLabel::Down)
                                | (Archetype::SpecialistUp, RegimeLabel::Up)
                                | (Archetype::SpecialistNone, RegimeLabel::None)
                        );
                        if matches {
                            true_ret + f_accurate * sigma * std_normal(&mut rng)
                        } else {
                            f_off * sigma * std_normal(&mut rng)
                        }
                    }
                    Archetype::Random => f_accurate * sigma * std_normal(&mut rng),
                    Archetype::EmaFollower { .. } => {
                        // reversion toward the lagging average of past truths
                        let target = (ema.unwrap_or(truth[t - 1]) / truth[t - 1]).ln();
                        target + f_off * sigma * std_normal(&mut rng)
                    }
                };
                inference[t][w] = Some(truth[t - 1] * pred_ret.exp());
            }
            // EMA over truths up to and including t (used from t+1 onward)
            if matches!(archetype, Archetype::EmaFollower { .. }) {
                ema = Some(match ema {
                    Some(prev) => ema_alpha * truth[t] + (1.0 - ema_alpha) * prev,
                    None => truth[t],
                });
            }
        }
    }
    (workers, inference)
}
