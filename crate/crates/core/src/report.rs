//! SVG report rendering: a line plot of truth vs naive vs forecast-implied
//! inferences from a trial CSV, and violin plots of sweep cell
//! distributions. Output files carry the config hash and seed of their
//! inputs; mismatched inputs are refused.

use crate::config::{Structure, TargetKind};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Provenance stamp carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMeta {
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl FileMeta {
    /// The comment line embedded at the top of CSV outputs.
    pub fn comment_line(&self) -> String {
        match self.seed {
            Some(seed) => format!("# config_hash={} seed={seed}", self.config_hash),
            None => format!("# config_hash={}", self.config_hash),
        }
    }

    fn parse(line: &str) -> Option<FileMeta> {
        let rest = line.strip_prefix('#')?.trim();
        let mut config_hash = None;
        let mut seed = None;
        for token in rest.split_whitespace() {
            if let Some(v) = token.strip_prefix("config_hash=") {
                config_hash = Some(v.to_string());
            } else if let Some(v) = token.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Some(FileMeta { config_hash: config_hash?, seed })
    }
}

/// Refuses inputs whose config hashes disagree.
pub fn ensure_matching(metas: &[&FileMeta]) -> Result<()> {
    if let Some(first) = metas.first() {
        for m in &metas[1..] {
            if m.config_hash != first.config_hash {
                return Err(Error::Validation(format!(
                    "config hash mismatch between inputs: {} vs {}",
                    first.config_hash, m.config_hash
                )));
            }
        }
    }
    Ok(())
}

/// One row of a trial CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub epoch: u64,
    pub truth: Option<f64>,
    pub naive: Option<f64>,
    pub implied: Option<f64>,
    pub network: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialCsv {
    pub meta: FileMeta,
    pub rows: Vec<TrialRow>,
}

/// One row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub target: TargetKind,
    pub structure: Structure,
    pub spans: String,
    pub n_train: usize,
    pub trial: usize,
    pub seed: u64,
    pub mean_log_loss: f64,
    pub naive_log_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsv {
    pub meta: FileMeta,
    pub rows: Vec<SweepRow>,
}

fn read_meta_and_body(path: &Path) -> Result<(FileMeta, String)> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = None;
    let mut body = String::new();
    for line in text.lines() {
        if line.starts_with('#') {
            if meta.is_none() {
                meta = FileMeta::parse(line);
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    let meta = meta.ok_or_else(|| {
        Error::Validation(format!(
            "{}: missing config hash stamp (expected '# config_hash=...' line)",
            path.display()
        ))
    })?;
    Ok((meta, body))
}

fn opt_field(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("invalid number {s:?}")))
    }
}

/// Reads a stamped trial CSV.
pub fn read_trial_csv(path: &Path) -> Result<TrialCsv> {
    let (meta, body) = read_meta_and_body(path)?;
    let mut lines = body.lines();
    let header = lines.next().unwrap_or("");
    if header != "epoch,truth,naive,implied,network" {
        return Err(Error::Parse(format!(
            "{}: unexpected trial header {header:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse(format!("{}: malformed row {line:?}", path.display())));
        }
        rows.push(TrialRow {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("invalid epoch {:?}", f[0])))?,
            truth: opt_field(f[1])?,
            naive: opt_field(f[2])?,
            implied: opt_field(f[3])?,
            network: opt_field(f[4])?,
        });
    }
    Ok(TrialCsv { meta, rows })
}

/// Reads a stamped sweep CSV.
pub fn read_sweep_csv(path: &Path) -> Result<SweepCsv> {
    let (meta, body) = read_meta_and_body(path)?;
    let mut lines = body.lines();
    let header = lines.next().unwrap_or("");
    if header != "target,structure,spans,n_train,trial,seed,mean_log_loss,naive_log_loss" {
        return Err(Error::Parse(format!(
            "{}: unexpected sweep header {header:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("{}: malformed row {line:?}", path.display())));
        }
        let target = match f[0] {
            "loss" => TargetKind::Loss,
            "regret" => TargetKind::Regret,
            "zscore" => TargetKind::Zscore,
            other => return Err(Error::Parse(format!("unknown target {other:?}"))),
        };
        let structure = match f[1] {
            "global" => Structure::Global,
            "per_inferer" => Structure::PerInferer,
            other => return Err(Error::Parse(format!("unknown structure {other:?}"))),
        };
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse(format!("invalid number {s:?}")))
        };
        rows.push(SweepRow {
            target,
            structure,
            spans: f[2].to_string(),
            n_train: num(f[3])? as usize,
            trial: num(f[4])? as usize,
            seed: num(f[5])? as u64,
            mean_log_loss: num(f[6])?,
            naive_log_loss: num(f[7])?,
        });
    }
    Ok(SweepCsv { meta, rows })
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;

struct Scale {
    min: f64,
    max: f64,
    lo: f64,
    hi: f64,
}

impl Scale {
    fn new(min: f64, max: f64, lo: f64, hi: f64) -> Scale {
        let (min, max) = if max > min { (min, max) } else { (min - 1.0, min + 1.0) };
        Scale { min, max, lo, hi }
    }

    fn at(&self, v: f64) -> f64 {
        self.lo + (v - self.min) / (self.max - self.min) * (self.hi - self.lo)
    }
}

fn svg_open(out: &mut String, meta: &FileMeta, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<!-- {} -->", meta.comment_line().trim_start_matches("# "));
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    );
}

fn polyline(points: &[(f64, f64)], color: &str, dash: Option<&str>) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
        pts.join(" ")
    )
}

/// Line plot of truth vs naive vs forecast-implied inferences.
pub fn line_plot_svg(data: &TrialCsv) -> String {
    let mut values: Vec<f64> = Vec::new();
    for r in &data.rows {
        values.extend([r.truth, r.naive, r.implied].iter().flatten());
    }
    let (ymin, ymax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let xmin = data.rows.first().map_or(0.0, |r| r.epoch as f64);
    let xmax = data.rows.last().map_or(1.0, |r| r.epoch as f64);
    let xs = Scale::new(xmin, xmax, MARGIN, WIDTH - MARGIN);
    let ys = Scale::new(ymin, ymax, HEIGHT - MARGIN, MARGIN);

    let series = |pick: fn(&TrialRow) -> Option<f64>| -> Vec<(f64, f64)> {
        data.rows
            .iter()
            .filter_map(|r| pick(r).map(|v| (xs.at(r.epoch as f64), ys.at(v))))
            .collect()
    };

    let mut out = String::new();
    svg_open(&mut out, &data.meta, "truth vs naive vs forecast-implied");
    // axes
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{m}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\">{xmin:.0}</text><text x=\"{r}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{xmax:.0}</text><text x=\"6\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\">{ymin:.2}</text><text x=\"6\" y=\"{t}\" font-family=\"sans-serif\" font-size=\"11\">{ymax:.2}</text>",
        m = MARGIN,
        r = WIDTH - MARGIN,
        y = HEIGHT - MARGIN + 16.0,
        b = HEIGHT - MARGIN,
        t = MARGIN + 4.0
    );
    let _ = writeln!(out, "{}", polyline(&series(|r| r.truth), "#1f77b4", None));
    let _ = writeln!(out, "{}", polyline(&series(|r| r.naive), "#d62728", Some("5,3")));
    let _ = writeln!(out, "{}", polyline(&series(|r| r.implied), "#ff7f0e", None));
    for (i, (label, color)) in
        [("truth", "#1f77b4"), ("naive", "#d62728"), ("implied", "#ff7f0e")].iter().enumerate()
    {
        let x = MARGIN + 10.0 + i as f64 * 110.0;
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"34\" x2=\"{}\" y2=\"34\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"38\" font-family=\"sans-serif\" font-size=\"12\">{label}</text>",
            x + 24.0,
            x + 30.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Gaussian kernel density estimate over a fixed grid (Silverman bandwidth).
fn kde(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let bw = (1.06 * std * n.powf(-0.2)).max(1e-9);
    grid.iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| {
                    let z = (g - v) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                / (n * bw)
        })
        .collect()
}

/// Violin plot of sweep cells: one violin per (target, structure, spans,
/// n_train) group, with the naive baseline as a dashed line.
pub fn violin_svg(data: &SweepCsv) -> String {
    // group rows by cell, preserving first-appearance order
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut naive_all: Vec<f64> = Vec::new();
    for r in &data.rows {
        let label = format!("{}/{}/{}/{}", r.target, r.structure, r.spans, r.n_train);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(r.mean_log_loss),
            None => groups.push((label, vec![r.mean_log_loss])),
        }
        naive_all.push(r.naive_log_loss);
    }
    let mut values: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    values.extend(naive_all.iter().copied());
    let (ymin, ymax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ys = Scale::new(ymin, ymax, HEIGHT - MARGIN - 30.0, MARGIN);

    let mut out = String::new();
    svg_open(&mut out, &data.meta, "sweep log-loss distributions");
    let n_groups = groups.len().max(1) as f64;
    let slot = (WIDTH - 2.0 * MARGIN) / n_groups;
    let half_max = slot * 0.42;

    // naive baseline (median over trials)
    if !naive_all.is_empty() {
        naive_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = naive_all[naive_all.len() / 2];
        let y = ys.at(med);
        let _ = writeln!(
            out,
            "<line x1=\"{m}\" y1=\"{y:.2}\" x2=\"{r}\" y2=\"{y:.2}\" stroke=\"black\" stroke-dasharray=\"6,4\"/><text x=\"{r}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">naive</text>",
            y - 4.0,
            m = MARGIN,
            r = WIDTH - MARGIN
        );
    }

    for (i, (label, vals)) in groups.iter().enumerate() {
        let cx = MARGIN + (i as f64 + 0.5) * slot;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let grid: Vec<f64> = (0..=32)
            .map(|k| lo + (hi - lo).max(1e-9) * k as f64 / 32.0)
            .collect();
        let dens = kde(vals, &grid);
        let dmax = dens.iter().cloned().fold(1e-12, f64::max);
        // mirrored density polygon
        let mut pts: Vec<(f64, f64)> = grid
            .iter()
            .zip(&dens)
            .map(|(&g, &d)| (cx - d / dmax * half_max, ys.at(g)))
            .collect();
        let right: Vec<(f64, f64)> = grid
            .iter()
            .zip(&dens)
            .rev()
            .map(|(&g, &d)| (cx + d / dmax * half_max, ys.at(g)))
            .collect();
        pts.extend(right);
        let pt_str: Vec<String> =
            pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            "<polygon fill=\"#ff7f0e\" fill-opacity=\"0.45\" stroke=\"#ff7f0e\" points=\"{}\"/>",
            pt_str.join(" ")
        );
        // median tick
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sorted[sorted.len() / 2];
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"black\" stroke-width=\"1.5\"/>",
            cx - half_max * 0.5,
            cx + half_max * 0.5,
            y = ys.at(med)
        );
        let _ = writeln!(
            out,
            "<text x=\"{cx:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\" transform=\"rotate(45 {cx:.2} {:.2})\">{label}</text>",
            HEIGHT - MARGIN - 12.0,
            HEIGHT - MARGIN - 12.0
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn meta_round_trip() {
        let meta = FileMeta { config_hash: "abc123".into(), seed: Some(7) };
        let parsed = FileMeta::parse(&meta.comment_line()).unwrap();
        assert_eq!(parsed, meta);
        let no_seed = FileMeta { config_hash: "abc123".into(), seed: None };
        assert_eq!(FileMeta::parse(&no_seed.comment_line()).unwrap(), no_seed);
    }

    #[test]
    fn mismatched_hashes_refused() {
        let a = FileMeta { config_hash: "aaa".into(), seed: Some(1) };
        let b = FileMeta { config_hash: "bbb".into(), seed: Some(1) };
        assert!(ensure_matching(&[&a, &a]).is_ok());
        assert!(ensure_matching(&[&a, &b]).is_err());
    }

    #[test]
    fn trial_csv_round_trip_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        fs::write(
            &path,
            "# config_hash=deadbeef seed=7\nepoch,truth,naive,implied,network\n1000,10.5,10.6,10.4,10.45\n1001,10.7,10.8,10.65,10.7\n",
        )
        .unwrap();
        let data = read_trial_csv(&path).unwrap();
        assert_eq!(data.meta.config_hash, "deadbeef");
        assert_eq!(data.meta.seed, Some(7));
        assert_eq!(data.rows.len(), 2);
        assert_eq!(data.rows[1].implied, Some(10.65));
        let svg = line_plot_svg(&data);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("config_hash=deadbeef"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn unstamped_csv_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        fs::write(&path, "epoch,truth,naive,implied,network\n0,1,1,1,1\n").unwrap();
        let err = read_trial_csv(&path).unwrap_err();
        assert!(err.to_string().contains("config hash"), "{err}");
    }

    #[test]
    fn sweep_csv_round_trip_and_violin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let mut text = String::from(
            "# config_hash=cafe\ntarget,structure,spans,n_train,trial,seed,mean_log_loss,naive_log_loss\n",
        );
        for t in 0..10 {
            text.push_str(&format!("zscore,per_inferer,3-14,1000,{t},{t},{},2.0\n", 1.5 + 0.01 * t as f64));
            text.push_str(&format!("loss,global,3,1000,{t},{t},{},2.0\n", 1.8 + 0.01 * t as f64));
        }
        fs::write(&path, text).unwrap();
        let data = read_sweep_csv(&path).unwrap();
        assert_eq!(data.rows.len(), 20);
        assert_eq!(data.rows[0].target, TargetKind::Zscore);
        let svg = violin_svg(&data);
        assert!(svg.contains("polygon"));
        assert!(svg.contains("zscore/per_inferer/3-14/1000"));
        assert!(svg.contains("loss/global/3/1000"));
    }
}
