//! CSV replay ingestion and export. Recorded datasets (inferences, truths,
//! optional market and rewards files) parse into the same panel types the
//! synthetic benchmarks produce, so both flow through one pipeline.

use crate::config::WorkerId;
use crate::error::{Error, Result};
use crate::panel::{EpochPanel, MarketSeries};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// File paths of one recorded dataset.
#[derive(Debug, Clone, Default)]
pub struct ReplayPaths {
    pub inferences: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub market: Option<std::path::PathBuf>,
    pub rewards: Option<std::path::PathBuf>,
}

/// Per-worker reward rows, parsed but not used by the math.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRow {
    pub epoch: u64,
    pub worker_id: String,
    pub reward: f64,
    pub score: f64,
}

/// A validated recorded dataset: raw panel (inference + truth only), market
/// history aligned to the truth epochs, and optional rewards.
#[derive(Debug, Clone)]
pub struct ReplayDataset {
    pub panel: EpochPanel,
    pub market: Option<MarketSeries>,
    pub rewards: Vec<RewardRow>,
    /// Original epoch values in panel order.
    pub epochs: Vec<u64>,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

fn check_header(reader: &mut csv::Reader<std::fs::File>, path: &Path, expect: &[&str]) -> Result<()> {
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expect {
        return Err(Error::Parse(format!(
            "{}: expected header {}, got {}",
            path.display(),
            expect.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
    line: u64,
    what: &str,
) -> Result<T> {
    record
        .get(idx)
        .ok_or_else(|| Error::Parse(format!("{} line {line}: missing {what}", path.display())))?
        .trim()
        .parse()
        .map_err(|_| {
            Error::Parse(format!(
                "{} line {line}: invalid {what} {:?}",
                path.display(),
                record.get(idx).unwrap_or("")
            ))
        })
}

fn read_rows(path: &Path, expect: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = open_reader(path)?;
    check_header(&mut reader, path, expect)?;
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(rows)
}

/// Loads and validates a recorded dataset. Epochs must be strictly
/// increasing per file, every inference epoch needs a truth row, and
/// duplicate (epoch, worker) inference rows are rejected.
pub fn load_replay(paths: &ReplayPaths) -> Result<ReplayDataset> {
    // truth file defines the epoch axis
    let truth_rows = read_rows(&paths.truth, &["epoch", "truth"])?;
    let mut epochs: Vec<u64> = Vec::with_capacity(truth_rows.len());
    let mut truth: Vec<Option<f64>> = Vec::with_capacity(truth_rows.len());
    for (line, record) in &truth_rows {
        let epoch: u64 = parse_field(record, 0, &paths.truth, *line, "epoch")?;
        let value: f64 = parse_field(record, 1, &paths.truth, *line, "truth")?;
        if let Some(&last) = epochs.last() {
            if epoch <= last {
                return Err(Error::Validation(format!(
                    "{} line {line}: epochs not strictly increasing ({last} then {epoch})",
                    paths.truth.display()
                )));
            }
        }
        epochs.push(epoch);
        truth.push(Some(value));
    }
    let index: BTreeMap<u64, usize> =
        epochs.iter().enumerate().map(|(i, &e)| (e, i)).collect();

    // inference rows; worker set in first-appearance order
    let inf_rows = read_rows(&paths.inferences, &["epoch", "worker_id", "inference"])?;
    let mut workers: Vec<WorkerId> = Vec::new();
    let mut cells: Vec<(usize, usize, f64, u64)> = Vec::new();
    let mut last_epoch: Option<u64> = None;
    for (line, record) in &inf_rows {
        let epoch: u64 = parse_field(record, 0, &paths.inferences, *line, "epoch")?;
        let worker_id: String = parse_field(record, 1, &paths.inferences, *line, "worker_id")?;
        let value: f64 = parse_field(record, 2, &paths.inferences, *line, "inference")?;
        if let Some(last) = last_epoch {
            if epoch < last {
                return Err(Error::Validation(format!(
                    "{} line {line}: epochs not increasing ({last} then {epoch})",
                    paths.inferences.display()
                )));
            }
        }
        last_epoch = Some(epoch);
        let Some(&ei) = index.get(&epoch) else {
            return Err(Error::Validation(format!(
                "{} line {line}: no truth row for epoch {epoch}",
                paths.inferences.display()
            )));
        };
        let wi = match workers.iter().position(|w| w.id == worker_id) {
            Some(wi) => wi,
            None => {
                workers.push(WorkerId::inferer(worker_id));
                workers.len() - 1
            }
        };
        if cells.iter().any(|&(e, w, _, _)| e == ei && w == wi) {
            return Err(Error::Validation(format!(
                "{} line {line}: duplicate inference for epoch {epoch}, worker {}",
                paths.inferences.display(),
                workers[wi].id
            )));
        }
        cells.push((ei, wi, value, *line));
    }
    if workers.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no inference rows",
            paths.inferences.display()
        )));
    }

    let mut panel = EpochPanel::new(workers.clone());
    let mut inference = vec![vec![None; workers.len()]; epochs.len()];
    for (ei, wi, value, _) in cells {
        inference[ei][wi] = Some(value);
    }
    for (e, row) in inference.into_iter().enumerate() {
        let n = workers.len();
        panel.push_epoch(
            truth[e],
            row,
            vec![None; n],
            vec![None; n],
            vec![None; n],
            None,
            None,
            vec![None; n],
        );
    }

    let market = match &paths.market {
        Some(path) => Some(load_market(path, &epochs)?),
        None => None,
    };
    let rewards = match &paths.rewards {
        Some(path) => load_rewards(path)?,
        None => Vec::new(),
    };

    Ok(ReplayDataset { panel, market, rewards, epochs })
}

fn load_market(path: &Path, epochs: &[u64]) -> Result<MarketSeries> {
    let rows = read_rows(path, &["epoch", "open", "high", "low", "close", "volume"])?;
    let index: BTreeMap<u64, usize> =
        epochs.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let n = epochs.len();
    let mut mkt = MarketSeries {
        open: vec![None; n],
        high: vec![None; n],
        low: vec![None; n],
        close: vec![f64::NAN; n],
        volume: vec![None; n],
    };
    let mut last_epoch: Option<u64> = None;
    let opt = |record: &csv::StringRecord, idx: usize, line: u64| -> Result<Option<f64>> {
        let raw = record.get(idx).unwrap_or("").trim();
        if raw.is_empty() {
            Ok(None)
        } else {
            parse_field(record, idx, path, line, "market value").map(Some)
        }
    };
    for (line, record) in &rows {
        let epoch: u64 = parse_field(record, 0, path, *line, "epoch")?;
        if let Some(last) = last_epoch {
            if epoch <= last {
                return Err(Error::Validation(format!(
                    "{} line {line}: epochs not strictly increasing",
                    path.display()
                )));
            }
        }
        last_epoch = Some(epoch);
        let Some(&i) = index.get(&epoch) else {
            return Err(Error::Validation(format!(
                "{} line {line}: no truth row for epoch {epoch}",
                path.display()
            )));
        };
        mkt.open[i] = opt(record, 1, *line)?;
        mkt.high[i] = opt(record, 2, *line)?;
        mkt.low[i] = opt(record, 3, *line)?;
        mkt.close[i] = parse_field(record, 4, path, *line, "close")?;
        mkt.volume[i] = opt(record, 5, *line)?;
    }
    if let Some(i) = mkt.close.iter().position(|c| c.is_nan()) {
        return Err(Error::Validation(format!(
            "{}: no market row for epoch {}",
            path.display(),
            epochs[i]
        )));
    }
    mkt.validate()?;
    Ok(mkt)
}

fn load_rewards(path: &Path) -> Result<Vec<RewardRow>> {
    let rows = read_rows(path, &["epoch", "worker_id", "reward", "score"])?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in &rows {
        out.push(RewardRow {
            epoch: parse_field(record, 0, path, *line, "epoch")?,
            worker_id: parse_field(record, 1, path, *line, "worker_id")?,
            reward: parse_field(record, 2, path, *line, "reward")?,
            score: parse_field(record, 3, path, *line, "score")?,
        });
    }
    Ok(out)
}

/// Writes a panel's inference layer in the replay schema. Float formatting
/// is shortest-round-trip, so a load reproduces the values bit-for-bit.
pub fn write_inferences_csv<W: Write>(panel: &EpochPanel, mut w: W) -> Result<()> {
    writeln!(w, "epoch,worker_id,inference")?;
    for e in 0..panel.n_epochs() {
        for (wi, worker) in panel.workers.iter().enumerate() {
            if let Some(v) = panel.inference[e][wi] {
                writeln!(w, "{e},{},{v}", worker.id)?;
            }
        }
    }
    Ok(())
}

/// Writes a panel's truth series in the replay schema.
pub fn write_truth_csv<W: Write>(panel: &EpochPanel, mut w: W) -> Result<()> {
    writeln!(w, "epoch,truth")?;
    for (e, t) in panel.truth.iter().enumerate() {
        if let Some(t) = t {
            writeln!(w, "{e},{t}")?;
        }
    }
    Ok(())
}

/// Writes a market series in the replay schema.
pub fn write_market_csv<W: Write>(mkt: &MarketSeries, mut w: W) -> Result<()> {
    writeln!(w, "epoch,open,high,low,close,volume")?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for i in 0..mkt.close.len() {
        writeln!(
            w,
            "{i},{},{},{},{},{}",
            fmt(mkt.open[i]),
            fmt(mkt.high[i]),
            fmt(mkt.low[i]),
            mkt.close[i],
            fmt(mkt.volume[i])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn minimal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(
                dir.path(),
                "inf.csv",
                "epoch,worker_id,inference\n0,a,10.5\n0,b,11.0\n1,a,10.7\n1,b,11.2\n",
            ),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.6\n1,10.9\n"),
            market: None,
            rewards: None,
        };
        let ds = load_replay(&paths).unwrap();
        assert_eq!(ds.panel.n_epochs(), 2);
        assert_eq!(ds.panel.n_workers(), 2);
        assert_eq!(ds.panel.inference[1][1], Some(11.2));
        assert_eq!(ds.panel.truth[0], Some(10.6));
        assert!(ds.market.is_none());
    }

    #[test]
    fn missing_truth_epoch_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(
                dir.path(),
                "inf.csv",
                "epoch,worker_id,inference\n0,a,10.5\n7,a,10.7\n",
            ),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.6\n"),
            market: None,
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("epoch 7"), "{err}");
    }

    #[test]
    fn duplicate_inference_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(
                dir.path(),
                "inf.csv",
                "epoch,worker_id,inference\n0,a,10.5\n0,a,10.6\n",
            ),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.6\n"),
            market: None,
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn non_increasing_epochs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(dir.path(), "inf.csv", "epoch,worker_id,inference\n0,a,1\n"),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n1,10.0\n1,10.5\n"),
            market: None,
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(
                dir.path(),
                "inf.csv",
                "epoch,worker_id,inference\n0,a,1.0\n1,a,not_a_number\n",
            ),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.0\n1,10.5\n"),
            market: None,
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(dir.path(), "inf.csv", "epoch,worker,value\n0,a,1.0\n"),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.0\n"),
            market: None,
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("expected header"), "{err}");
    }

    #[test]
    fn market_and_rewards_parse() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(
                dir.path(),
                "inf.csv",
                "epoch,worker_id,inference\n0,a,10.5\n1,a,10.7\n",
            ),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.6\n1,10.9\n"),
            market: Some(write(
                dir.path(),
                "market.csv",
                "epoch,open,high,low,close,volume\n0,10.0,11.0,9.5,10.6,100\n1,,,,10.9,\n",
            )),
            rewards: Some(write(
                dir.path(),
                "rewards.csv",
                "epoch,worker_id,reward,score\n0,a,1.5,0.9\n",
            )),
        };
        let ds = load_replay(&paths).unwrap();
        let mkt = ds.market.unwrap();
        assert_eq!(mkt.close, vec![10.6, 10.9]);
        assert_eq!(mkt.open[0], Some(10.0));
        assert_eq!(mkt.open[1], None);
        assert_eq!(ds.rewards.len(), 1);
        assert_eq!(ds.rewards[0].worker_id, "a");
    }

    #[test]
    fn market_must_cover_truth_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let paths = ReplayPaths {
            inferences: write(dir.path(), "inf.csv", "epoch,worker_id,inference\n0,a,10.5\n"),
            truth: write(dir.path(), "truth.csv", "epoch,truth\n0,10.6\n1,10.9\n"),
            market: Some(write(
                dir.path(),
                "market.csv",
                "epoch,open,high,low,close,volume\n0,,,,10.6,\n",
            )),
            rewards: None,
        };
        let err = load_replay(&paths).unwrap_err();
        assert!(err.to_string().contains("no market row"), "{err}");
    }

    #[test]
    fn export_import_is_lossless() {
        use crate::synth::{gen_contextual_inferers, gen_gbm_truth};
        let (prices, regime) =
            gen_gbm_truth(50, 1000.0, 0.01, [-0.01, 0.0, 0.01], 5.0, 3.0, 3);
        let (workers, inference) = gen_contextual_inferers(&prices, &regime, 0.01, 3);
        let mut panel = EpochPanel::new(workers);
        let n = panel.n_workers();
        for (e, row) in inference.iter().enumerate() {
            panel.push_epoch(
                Some(prices[e]),
                row.clone(),
                vec![None; n],
                vec![None; n],
                vec![None; n],
                None,
                None,
                vec![None; n],
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let inf_path = dir.path().join("inf.csv");
        let truth_path = dir.path().join("truth.csv");
        let mut buf = Vec::new();
        write_inferences_csv(&panel, &mut buf).unwrap();
        fs::write(&inf_path, buf).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&panel, &mut buf).unwrap();
        fs::write(&truth_path, buf).unwrap();
        let ds = load_replay(&ReplayPaths {
            inferences: inf_path,
            truth: truth_path,
            market: None,
            rewards: None,
        })
        .unwrap();
        assert_eq!(ds.panel.inference, panel.inference); // bit-for-bit
        assert_eq!(ds.panel.truth, panel.truth);
        assert_eq!(
            ds.panel.workers.iter().map(|w| &w.id).collect::<Vec<_>>(),
            panel.workers.iter().map(|w| &w.id).collect::<Vec<_>>()
        );
    }
}
