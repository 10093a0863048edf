use forecast_combine::config::{Structure, TargetKind, TopicConfig};
use forecast_combine::eval::{run_trial, Scenario};
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: Vec<u64> = if args.len() > 1 {
        args[1..].iter().map(|s| s.parse().unwrap()).collect()
    } else {
        (0..20).collect()
    };
    let gaps: Vec<(u64, f64)> = seeds
        .into_par_iter()
        .map(|seed| {
            let cfg = TopicConfig {
                target_kind: TargetKind::Zscore,
                structure: Structure::PerInferer,
                seed,
                ..Default::default()
            };
            let trial = run_trial(&Scenario::contextual(1100), &cfg, seed).unwrap();
            let gap = trial.summary.naive_mean_log_loss.unwrap()
                - trial.summary.implied_mean_log_loss.unwrap();
            (seed, gap)
        })
        .collect();
    let mut pass = 0;
    for (seed, gap) in &gaps {
        let ok = *gap >= 0.25;
        pass += ok as usize;
        println!("seed {seed}: gap {gap:.3} {}", if ok { "pass" } else { "FAIL" });
    }
    println!("{pass}/{} pass", gaps.len());
}
