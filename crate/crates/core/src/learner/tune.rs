//! Randomized hyperparameter search scored on a time-ordered holdout tail.

use super::gbt::{fit_gbt, GbtHyperparams};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use rand::Rng;

/// Search ranges: n_trees in [50,500], depth in [2,8], learning rate
/// log-uniform in [0.01,0.3], min leaf in [2,20], subsampling in [0.5,1].
fn sample_hyperparams(rng: &mut impl Rng) -> GbtHyperparams {
    GbtHyperparams {
        n_trees: rng.gen_range(50..=500),
        max_depth: rng.gen_range(2..=8),
        learning_rate: (rng.gen_range(0.01f64.ln()..=0.3f64.ln())).exp(),
        min_samples_leaf: rng.gen_range(2..=20),
        row_subsample: rng.gen_range(0.5..=1.0),
        feature_subsample: rng.gen_range(0.5..=1.0),
    }
}

/// Random search over the grid; each trial is scored by squared error on
/// the last 20% of the (time-ordered) rows. Deterministic given the seed.
pub fn tune(
    columns: &[Vec<f64>],
    y: &[f64],
    budget: usize,
    seed: u64,
) -> Result<GbtHyperparams> {
    if budget < 1 {
        return Err(Error::Learn("tuning budget must be >= 1".into()));
    }
    let n = y.len();
    let split = n - (n as f64 * 0.2).ceil() as usize;
    if split == 0 || split == n {
        return Err(Error::Learn("too few rows for a holdout split".into()));
    }
    let train_cols: Vec<Vec<f64>> = columns.iter().map(|c| c[..split].to_vec()).collect();
    let train_y = &y[..split];
    let schema: Vec<String> = (0..columns.len()).map(|i| format!("f{i}")).collect();

    let mut best: Option<(f64, GbtHyperparams)> = None;
    for trial in 0..budget {
        let mut rng = derive_rng(seed, &format!("tune:{trial}"));
        let hp = sample_hyperparams(&mut rng);
        let model = fit_gbt(
            &train_cols,
            train_y,
            schema.clone(),
            vec![0.0; columns.len()],
            &hp,
            seed.wrapping_add(trial as u64),
        )?;
        let mut err = 0.0;
        for r in split..n {
            let row: Vec<f64> = columns.iter().map(|c| c[r]).collect();
            let d = model.predict_row(&row) - y[r];
            err += d * d;
        }
        let better = match &best {
            Some((b, _)) => err < *b,
            None => true,
        };
        if better {
            best = Some((err, hp));
        }
    }
    Ok(best.unwrap().1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.731).sin()).collect();
        let y: Vec<f64> = xs.iter().map(|&x| if x < 0.2 { -1.0 } else { 2.0 }).collect();
        (vec![xs], y)
    }

    #[test]
    fn budget_one_returns_first_sample() {
        let (cols, y) = step_data(200);
        let hp = tune(&cols, &y, 1, 9).unwrap();
        let mut rng = derive_rng(9, "tune:0");
        assert_eq!(hp, sample_hyperparams(&mut rng));
    }

    #[test]
    fn deterministic_per_seed() {
        let (cols, y) = step_data(200);
        assert_eq!(tune(&cols, &y, 5, 3).unwrap(), tune(&cols, &y, 5, 3).unwrap());
    }

    #[test]
    fn zero_budget_errors() {
        let (cols, y) = step_data(100);
        assert!(tune(&cols, &y, 0, 0).is_err());
    }

    #[test]
    fn tuned_at_least_as_good_as_default_most_seeds() {
        // statistical check on the step dataset: the tuned configuration's
        // holdout R^2 should match or beat the default in most seeds
        let (cols, y) = step_data(300);
        let n = y.len();
        let split = n - (n as f64 * 0.2).ceil() as usize;
        let train_cols: Vec<Vec<f64>> = cols.iter().map(|c| c[..split].to_vec()).collect();
        let schema = vec!["f0".to_string()];
        let holdout_mse = |hp: &GbtHyperparams, seed: u64| {
            let model =
                fit_gbt(&train_cols, &y[..split], schema.clone(), vec![0.0], hp, seed).unwrap();
            (split..n)
                .map(|r| {
                    let d = model.predict_row(&[cols[0][r]]) - y[r];
                    d * d
                })
                .sum::<f64>()
        };
        let mut wins = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let tuned = tune(&cols, &y, 10, seed).unwrap();
            if holdout_mse(&tuned, seed) <= holdout_mse(&GbtHyperparams::default(), seed) + 1e-9 {
                wins += 1;
            }
        }
        assert!(wins * 10 >= seeds * 8, "tuned won only {wins}/{seeds}");
    }
}
