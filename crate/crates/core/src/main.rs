//! Command-line entry: synthetic benchmarks, grid sweeps, replay runs on
//! recorded CSV data, and SVG report rendering. All tabular outputs are
//! stamped with the config hash and seed so downstream tooling can refuse
//! mismatched inputs.

use clap::{Args, Parser, Subcommand, ValueEnum};
use forecast_combine::config::{validate_config, Structure, TargetKind, TopicConfig};
use forecast_combine::error::{Error, Result};
use forecast_combine::eval::{
    run_sweep, run_trial, Scenario, SweepGrid, SweepTable, TrialResult,
};
use forecast_combine::replay::{load_replay, ReplayPaths};
use forecast_combine::report::{
    ensure_matching, line_plot_svg, read_sweep_csv, read_trial_csv, violin_svg, FileMeta,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "forecast-combine", version, about = "Context-aware combination of multi-worker time-series inferences")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one synthetic benchmark trial and write trial CSV + JSON summary.
    Bench {
        #[arg(value_enum)]
        benchmark: Benchmark,
        #[command(flatten)]
        common: Common,
    },
    /// Run repeated trials across the target/structure/span grid.
    Sweep {
        /// Trials per grid cell (overrides the config file).
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a trial (or sweep) on a recorded CSV dataset.
    Replay {
        #[arg(long)]
        inferences: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long)]
        rewards: Option<PathBuf>,
        /// Sweep the grid instead of running a single trial.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Render stamped CSV outputs to SVG plots.
    Report {
        /// Trial CSV to render as a truth/naive/implied line plot.
        #[arg(long)]
        trial: Option<PathBuf>,
        /// Sweep CSV to render as violin plots.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy)]
enum Benchmark {
    Sine,
    Periodic,
    Contextual,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// On-disk config: the topic constants flattened at the top level plus
/// optional scenario and sweep blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    topic: TopicConfig,
    scenario: ScenarioBlock,
    sweep: SweepBlock,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct ScenarioBlock {
    /// Panel length; defaults to n_train + n_test.
    n_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct SweepBlock {
    repeats: usize,
    targets: Option<Vec<TargetKind>>,
    structures: Option<Vec<Structure>>,
    span_sets: Option<Vec<Vec<usize>>>,
    n_trains: Option<Vec<usize>>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            repeats: 100,
            targets: None,
            structures: None,
            span_sets: None,
            n_trains: None,
        }
    }
}

impl SweepBlock {
    fn grid(&self) -> SweepGrid {
        let d = SweepGrid::default();
        SweepGrid {
            targets: self.targets.clone().unwrap_or(d.targets),
            structures: self.structures.clone().unwrap_or(d.structures),
            span_sets: self.span_sets.clone().unwrap_or(d.span_sets),
            n_trains: self.n_trains.clone().unwrap_or(d.n_trains),
        }
    }
}

fn load_config(common: &Common) -> Result<FileConfig> {
    let mut file_cfg: FileConfig = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(seed) = common.seed {
        file_cfg.topic.seed = seed;
    }
    file_cfg.topic = validate_config(file_cfg.topic)?;
    Ok(file_cfg)
}

/// Canonical TOML dump of the effective config; load(dump(cfg)) == cfg.
fn dump_config(cfg: &FileConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Validation(format!("config not serializable: {e}")))
}

/// Hash over the scenario label and everything in the config except the
/// seed, which is stamped separately.
fn config_hash(cfg: &FileConfig, label: &str) -> Result<String> {
    let mut unseeded = cfg.clone();
    unseeded.topic.seed = 0;
    let dump = format!("scenario = \"{label}\"\n{}", dump_config(&unseeded)?);
    let digest = Sha256::digest(dump.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn meta_for(cfg: &FileConfig, label: &str, seed: Option<u64>) -> Result<FileMeta> {
    Ok(FileMeta { config_hash: config_hash(cfg, label)?, seed })
}

fn write_stamped(path: &Path, meta: &FileMeta, body: &str) -> Result<()> {
    let content = format!("{}\n{body}", meta.comment_line());
    std::fs::write(path, content)?;
    Ok(())
}

#[derive(Serialize)]
struct TrialJson<'a> {
    config_hash: &'a str,
    seed: u64,
    summary: &'a forecast_combine::eval::TrialSummary,
}

fn write_trial_outputs(out: &Path, meta: &FileMeta, trial: &TrialResult) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    trial.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    write_stamped(&out.join("trial.csv"), meta, &csv)?;
    let json = serde_json::to_string_pretty(&TrialJson {
        config_hash: &meta.config_hash,
        seed: trial.seed,
        summary: &trial.summary,
    })
    .expect("summary serializes");
    std::fs::write(out.join("summary.json"), json + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct SweepJson<'a> {
    config_hash: &'a str,
    base_seed: u64,
    n_repeats: usize,
    table: &'a SweepTable,
}

fn write_sweep_outputs(out: &Path, meta: &FileMeta, table: &SweepTable) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    write_stamped(&out.join("sweep.csv"), meta, &csv)?;
    let json = serde_json::to_string_pretty(&SweepJson {
        config_hash: &meta.config_hash,
        base_seed: table.base_seed,
        n_repeats: table.n_repeats,
        table,
    })
    .expect("table serializes");
    std::fs::write(out.join("sweep.json"), json + "\n")?;
    Ok(())
}

fn synthetic_scenario(benchmark: Benchmark, cfg: &FileConfig) -> Scenario {
    let n_epochs = cfg
        .scenario
        .n_epochs
        .unwrap_or(cfg.topic.n_train + cfg.topic.n_test);
    match benchmark {
        Benchmark::Sine => Scenario::sine(n_epochs),
        Benchmark::Periodic => Scenario::periodic(n_epochs),
        Benchmark::Contextual => Scenario::contextual(n_epochs),
    }
}

fn replay_scenario(
    inferences: PathBuf,
    truth: PathBuf,
    market: Option<PathBuf>,
    rewards: Option<PathBuf>,
) -> Result<Scenario> {
    let dataset = load_replay(&ReplayPaths { inferences, truth, market, rewards })?;
    Ok(Scenario::Replay { panel: dataset.panel, market: dataset.market })
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FORECAST_COMBINE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Validation(format!("FORECAST_COMBINE_THREADS not a count: {v:?}")))?;
        if n == 0 {
            return Err(Error::Validation("FORECAST_COMBINE_THREADS must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.cmd {
        Command::Bench { benchmark, common } => {
            let cfg = load_config(&common)?;
            let label = match benchmark {
                Benchmark::Sine => "sine",
                Benchmark::Periodic => "periodic",
                Benchmark::Contextual => "contextual",
            };
            let scenario = synthetic_scenario(benchmark, &cfg);
            let trial = run_trial(&scenario, &cfg.topic, cfg.topic.seed)?;
            let meta = meta_for(&cfg, label, Some(cfg.topic.seed))?;
            write_trial_outputs(&common.out, &meta, &trial)
        }
        Command::Sweep { repeats, common } => {
            let cfg = load_config(&common)?;
            let scenario = synthetic_scenario(Benchmark::Contextual, &cfg);
            let n_repeats = repeats.unwrap_or(cfg.sweep.repeats);
            let table =
                run_sweep(&scenario, &cfg.sweep.grid(), n_repeats, cfg.topic.seed, &cfg.topic)?;
            let meta = meta_for(&cfg, "contextual", Some(cfg.topic.seed))?;
            write_sweep_outputs(&common.out, &meta, &table)
        }
        Command::Replay { inferences, truth, market, rewards, sweep, repeats, common } => {
            let cfg = load_config(&common)?;
            let scenario = replay_scenario(inferences, truth, market, rewards)?;
            let meta = meta_for(&cfg, "replay", Some(cfg.topic.seed))?;
            if sweep {
                let n_repeats = repeats.unwrap_or(cfg.sweep.repeats);
                let table =
                    run_sweep(&scenario, &cfg.sweep.grid(), n_repeats, cfg.topic.seed, &cfg.topic)?;
                write_sweep_outputs(&common.out, &meta, &table)
            } else {
                let trial = run_trial(&scenario, &cfg.topic, cfg.topic.seed)?;
                write_trial_outputs(&common.out, &meta, &trial)
            }
        }
        Command::Report { trial, sweep, out } => {
            if trial.is_none() && sweep.is_none() {
                return Err(Error::Validation(
                    "report needs --trial and/or --sweep input".into(),
                ));
            }
            let trial_csv = trial.as_deref().map(read_trial_csv).transpose()?;
            let sweep_csv = sweep.as_deref().map(read_sweep_csv).transpose()?;
            let metas: Vec<&FileMeta> = trial_csv
                .iter()
                .map(|t| &t.meta)
                .chain(sweep_csv.iter().map(|s| &s.meta))
                .collect();
            ensure_matching(&metas)?;
            std::fs::create_dir_all(&out)?;
            if let Some(data) = &trial_csv {
                std::fs::write(out.join("trial.svg"), line_plot_svg(data))?;
            }
            if let Some(data) = &sweep_csv {
                std::fs::write(out.join("sweep.svg"), violin_svg(data))?;
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let text = e.to_string();
        let prefix = format!("{}: ", e.code());
        let msg = text.strip_prefix(&prefix).unwrap_or(&text);
        eprintln!("error[{}]: {msg}", e.code());
        std::process::exit(e.exit_code());
    }
}
