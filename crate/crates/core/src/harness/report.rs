//! Report files.
//!
//! `metrics.csv` holds one row per method, trial and setting;
//! `summary.csv` and `summary.txt` aggregate successful rows as mean and
//! sample standard deviation; `forecast_trace.csv` holds per-step
//! predictions; `config.json` is the resolved config whose hash appears in
//! the summary. Nothing in these files depends on wall-clock time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiments::{ExperimentKind, MetricRow, MetricsReport, TraceRow};
use super::metrics::mean_std;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const TRACE_FILE: &str = "forecast_trace.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub group: String,
    pub setting: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub errors_mean: Option<f64>,
    pub errors_std: Option<f64>,
}

fn stat(values: Vec<f64>) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&values);
        (Some(m), Some(s))
    }
}

/// Aggregate over trials, keyed by (method, group, setting) in order of
/// first appearance. Failed rows are counted but excluded from statistics.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, u64)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.group.clone(), r.setting.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, group, bits)| {
            let setting = f64::from_bits(bits);
            let sel: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.method == method && r.group == group && r.setting.to_bits() == bits)
                .collect();
            let ok: Vec<&&MetricRow> = sel.iter().filter(|r| r.ok()).collect();
            let (mae_mean, mae_std) = stat(ok.iter().filter_map(|r| r.mae).collect());
            let (mse_mean, mse_std) = stat(ok.iter().filter_map(|r| r.mse).collect());
            let (errors_mean, errors_std) = stat(ok.iter().filter_map(|r| r.errors.map(|e| e as f64)).collect());
            SummaryRow {
                method,
                group,
                setting,
                succeeded: ok.len(),
                failed: sel.len() - ok.len(),
                mae_mean,
                mae_std,
                mse_mean,
                mse_std,
                errors_mean,
                errors_std,
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    let s = s.trim();
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Parse(format!("bad {what} value `{s}`")))
    }
}

pub fn write_metrics_csv(path: impl AsRef<Path>, kind: ExperimentKind, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "trial", "seed", "group", kind.setting_label(), "mae", "mse", "errors", "status"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.group.clone(),
            r.setting.to_string(),
            opt(r.mae),
            opt(r.mse),
            opt(r.errors),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a metrics table; also returns the experiment implied by its
/// setting column (`fraction` is reported as semi-described).
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<(ExperimentKind, Vec<MetricRow>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() != 9 || header[0] != "method" {
        return Err(Error::Parse(format!("unexpected metrics header {header:?}")));
    }
    let kind = match header[4].as_str() {
        "fraction" => ExperimentKind::SemiDescribed,
        "horizon" => ExperimentKind::Forecast,
        "size" => ExperimentKind::SemiSupervised,
        other => return Err(Error::Parse(format!("unknown setting column `{other}`"))),
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize, what: &str| -> Result<String> {
            rec.get(i).map(str::to_string).ok_or_else(|| Error::Parse(format!("missing {what}")))
        };
        rows.push(MetricRow {
            method: num(0, "method")?,
            trial: parse_opt(&num(1, "trial")?, "trial")?.ok_or_else(|| Error::Parse("empty trial".into()))?,
            seed: parse_opt(&num(2, "seed")?, "seed")?.ok_or_else(|| Error::Parse("empty seed".into()))?,
            group: num(3, "group")?,
            setting: parse_opt(&num(4, "setting")?, "setting")?.ok_or_else(|| Error::Parse("empty setting".into()))?,
            mae: parse_opt(&num(5, "mae")?, "mae")?,
            mse: parse_opt(&num(6, "mse")?, "mse")?,
            errors: parse_opt(&num(7, "errors")?, "errors")?,
            status: num(8, "status")?,
        });
    }
    Ok((kind, rows))
}

pub fn write_summary_csv(path: impl AsRef<Path>, kind: ExperimentKind, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "group",
        kind.setting_label(),
        "succeeded",
        "failed",
        "mae_mean",
        "mae_std",
        "mse_mean",
        "mse_std",
        "errors_mean",
        "errors_std",
    ])?;
    for s in summary {
        w.write_record([
            s.method.clone(),
            s.group.clone(),
            s.setting.to_string(),
            s.succeeded.to_string(),
            s.failed.to_string(),
            opt(s.mae_mean),
            opt(s.mae_std),
            opt(s.mse_mean),
            opt(s.mse_std),
            opt(s.errors_mean),
            opt(s.errors_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces_csv(path: impl AsRef<Path>, traces: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "trial", "seed", "step", "mean", "variance", "truth"])?;
    for t in traces {
        w.write_record([
            t.method.clone(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.step.to_string(),
            t.mean.to_string(),
            t.variance.to_string(),
            t.truth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        _ => "-".into(),
    }
}

/// Plain-text table of the summary.
pub fn render_summary(kind: ExperimentKind, summary: &[SummaryRow], header_lines: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", kind.name());
    for l in header_lines {
        let _ = writeln!(out, "{l}");
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:>9} {:>6} {:>20} {:>20} {:>20}",
        "method",
        "group",
        kind.setting_label(),
        "ok",
        "MAE",
        "MSE",
        "errors"
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>9} {:>6} {:>20} {:>20} {:>20}",
            s.method,
            s.group,
            s.setting,
            format!("{}/{}", s.succeeded, s.succeeded + s.failed),
            cell(s.mae_mean, s.mae_std),
            cell(s.mse_mean, s.mse_std),
            cell(s.errors_mean, s.errors_std),
        );
    }
    out
}

/// Write every report file into `dir` (created if needed); returns the
/// paths written.
pub fn write_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let p = dir.join(METRICS_FILE);
    write_metrics_csv(&p, report.experiment, &report.rows)?;
    written.push(p);
    let p = dir.join(SUMMARY_CSV);
    write_summary_csv(&p, report.experiment, &report.summary)?;
    written.push(p);
    let prov = &report.provenance;
    let header = vec![
        format!("config sha256: {}", prov.config_hash),
        format!(
            "seeds: {}",
            prov.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
        ),
        format!("library version: {}", prov.library_version),
        format!("platform: {}", prov.platform),
    ];
    let p = dir.join(SUMMARY_TXT);
    std::fs::write(&p, render_summary(report.experiment, &report.summary, &header))?;
    written.push(p);
    let p = dir.join(CONFIG_FILE);
    std::fs::write(&p, report.config.to_json()?)?;
    written.push(p);
    if !report.traces.is_empty() {
        let p = dir.join(TRACE_FILE);
        write_traces_csv(&p, &report.traces)?;
        written.push(p);
    }
    Ok(written)
}

/// Recompute the summary files of an existing report directory from its
/// metrics table.
pub fn regenerate_summary(dir: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let dir = dir.as_ref();
    let (kind, rows) = read_metrics_csv(dir.join(METRICS_FILE))?;
    let summary = summarize(&rows);
    write_summary_csv(dir.join(SUMMARY_CSV), kind, &summary)?;
    let header = vec![format!("regenerated from {METRICS_FILE}")];
    std::fs::write(dir.join(SUMMARY_TXT), render_summary(kind, &summary, &header))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, setting: f64, mse: Option<f64>) -> MetricRow {
        MetricRow {
            method: method.into(),
            trial: 0,
            seed: 1,
            group: String::new(),
            setting,
            mae: mse,
            mse,
            errors: None,
            status: if mse.is_some() { "ok".into() } else { "failed: boom".into() },
        }
    }

    #[test]
    fn summary_skips_failures() {
        let rows = vec![row("a", 0.1, Some(1.0)), row("a", 0.1, Some(3.0)), row("a", 0.1, None), row("b", 0.1, None)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mse_mean, Some(2.0));
        assert!((s[0].mse_std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((s[0].succeeded, s[0].failed), (2, 1));
        assert_eq!(s[1].mse_mean, None);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![row("a", 0.1, Some(0.123456789012345)), row("b", 0.7, None)];
        write_metrics_csv(&p, ExperimentKind::SemiDescribed, &rows).unwrap();
        let (kind, back) = read_metrics_csv(&p).unwrap();
        assert_eq!(kind, ExperimentKind::SemiDescribed);
        assert_eq!(back, rows);
    }
}
