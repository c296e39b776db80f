use std::path::Path;
use std::process::Command;

use nalgebra::DMatrix;
use proptest::prelude::*;

use vcgp::harness::experiments::{semi_described_task, Provenance};
use vcgp::harness::io::{read_dataset_csv, write_dataset_csv};
use vcgp::harness::report::{read_metrics_csv, regenerate_summary, summarize, SUMMARY_CSV};
use vcgp::harness::{
    apply_missingness, mackey_glass_simulate, synth_gp_dataset, write_report, ExperimentConfig, ExperimentKind,
    MackeyGlassConfig, MetricRow, MetricsReport, SynthParams,
};
use vcgp::{Mask, MaskedDataset};

fn mg(step: f64, length: usize) -> Vec<f64> {
    mackey_glass_simulate(&MackeyGlassConfig {
        step,
        length,
        ..MackeyGlassConfig::default()
    })
    .unwrap()
}

#[test]
fn mackey_glass_converges_under_step_refinement() {
    let reference = mg(0.00625, 150);
    let deltas: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|h| mg(*h, 150).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    for w in deltas.windows(2) {
        assert!(w[1] < w[0], "{deltas:?}");
    }
    assert!(deltas[0] < 1e-2, "{deltas:?}");
}

#[test]
fn mackey_glass_without_feedback_decays_exponentially() {
    let s = mackey_glass_simulate(&MackeyGlassConfig {
        alpha: 0.0,
        length: 20,
        ..MackeyGlassConfig::default()
    })
    .unwrap();
    for (t, v) in s.iter().enumerate() {
        let exact = 1.2 * (-0.1 * t as f64).exp();
        assert!((v - exact).abs() < 1e-9 * exact, "t={t}: {v} vs {exact}");
    }
}

#[test]
fn mackey_glass_discard_shifts_the_series() {
    let a = mg(0.1, 60);
    let b = mackey_glass_simulate(&MackeyGlassConfig {
        discard: 10,
        length: 50,
        ..MackeyGlassConfig::default()
    })
    .unwrap();
    assert_eq!(&a[10..], &b[..]);
}

#[test]
fn dataset_csv_round_trip() {
    let x = DMatrix::from_row_slice(3, 2, &[0.125, -1.5, 2.0, 0.0, 1e-7, 3.25]);
    let mask = Mask::from_rows(&[vec![true, false], vec![true, true], vec![false, true]]).unwrap();
    let y = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.30000000000000004]);
    let ds = MaskedDataset::new(x, mask, y, vec![true; 3]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let labels = [Some(1), None, Some(-2)];
    write_dataset_csv(&path, &ds, Some(&labels)).unwrap();
    let back = read_dataset_csv(&path).unwrap();
    assert_eq!(back.labels.unwrap(), labels.to_vec());
    let b = back.dataset;
    assert_eq!(b.input_mask, ds.input_mask);
    assert_eq!(b.outputs, ds.outputs);
    for r in 0..3 {
        for c in 0..2 {
            if ds.input_mask.get(r, c) {
                assert_eq!(b.inputs[(r, c)], ds.inputs[(r, c)]);
            } else {
                assert!(b.inputs[(r, c)].is_nan());
            }
        }
    }
}

#[test]
fn malformed_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "x0,y0\n1.0,abc\n").unwrap();
    assert!(read_dataset_csv(&path).is_err());
    std::fs::write(&path, "x0,weird\n1.0,2.0\n").unwrap();
    assert!(read_dataset_csv(&path).is_err());
}

fn row(method: &str, trial: usize, setting: f64, mse: Option<f64>) -> MetricRow {
    MetricRow {
        method: method.into(),
        trial,
        seed: trial as u64,
        group: String::new(),
        setting,
        mae: mse.map(f64::sqrt),
        mse,
        errors: None,
        status: if mse.is_some() { "ok".into() } else { "failed: diverged".into() },
    }
}

#[test]
fn summary_is_recomputable_from_the_metrics_table() {
    let config = ExperimentConfig::preset(ExperimentKind::SemiDescribed);
    let rows = vec![
        row("sd-gp", 0, 0.1, Some(0.5)),
        row("sd-gp", 1, 0.1, Some(0.7)),
        row("gp", 0, 0.1, Some(0.9)),
        row("gp", 1, 0.1, None),
        row("sd-gp", 0, 0.2, Some(0.6)),
    ];
    let report = MetricsReport {
        experiment: ExperimentKind::SemiDescribed,
        summary: summarize(&rows),
        provenance: Provenance::for_config(&config).unwrap(),
        config,
        rows: rows.clone(),
        traces: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    let written = write_report(&report, dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let (kind, back) = read_metrics_csv(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(kind, ExperimentKind::SemiDescribed);
    assert_eq!(back, rows);
    let before = std::fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
    let regen = regenerate_summary(dir.path()).unwrap();
    assert_eq!(regen, report.summary);
    assert_eq!(std::fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap(), before);
    let sd = &regen[0];
    assert_eq!((sd.succeeded, sd.failed), (2, 0));
    assert!((sd.mse_mean.unwrap() - 0.6).abs() < 1e-15);
    assert_eq!((regen[1].succeeded, regen[1].failed), (1, 1));
}

#[test]
fn config_round_trips_and_hashes_stably() {
    let c = ExperimentConfig::from_json(r#"{"experiment": "forecast", "trials": 3}"#).unwrap();
    assert_eq!(c.seeds, vec![0, 1, 2]);
    let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    assert_ne!(c.clone().with_first_seed(7).hash().unwrap(), c.hash().unwrap());
    assert!(ExperimentConfig::from_json(r#"{"experiment": "forecast", "bogus": 1}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"trials": 1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn missingness_hides_exactly_the_requested_count(
        seed in 0u64..1000,
        fraction in 0.0..=1.0f64,
        n in 2usize..30,
        q in 1usize..6,
        first in 0usize..10,
    ) {
        let x = DMatrix::from_fn(n, q, |r, c| (r * q + c) as f64);
        let ds = MaskedDataset::fully_observed(x, DMatrix::zeros(n, 1)).unwrap();
        let first = first.min(n - 1);
        let targets: Vec<usize> = (first..n).collect();
        let out = apply_missingness(&ds, fraction, seed, &targets).unwrap();
        let expect = (fraction * (targets.len() * q) as f64).round() as usize;
        prop_assert_eq!(n * q - out.input_mask.count(), expect);
        for r in 0..first {
            prop_assert!(out.input_mask.row(r).iter().all(|b| *b));
        }
        let again = apply_missingness(&ds, fraction, seed, &targets).unwrap();
        prop_assert_eq!(again.input_mask, out.input_mask);
    }

    #[test]
    fn semi_described_split_is_hygienic(
        seed in 0u64..200,
        observed in 1usize..8,
        partial in 0usize..8,
        test in 1usize..8,
        fraction in 0.0..=1.0f64,
    ) {
        let t = semi_described_task(seed, observed, partial, test, 2, 1, &SynthParams::default(), fraction, seed + 1).unwrap();
        prop_assert!(t.split.disjoint());
        prop_assert_eq!(t.split.observed.len() + t.split.partial.len() + t.split.test.len(), observed + partial + test);
        prop_assert_eq!(t.train.n(), observed + partial);
        prop_assert_eq!(t.test_x.nrows(), test);
        for r in t.observed_train_rows() {
            prop_assert!(t.train.input_mask.row(r).iter().all(|b| *b));
        }
        // Test rows come straight from the generator, never masked.
        let full = synth_gp_dataset(seed, observed + partial + test, 2, 1, &SynthParams::default()).unwrap();
        prop_assert_eq!(t.test_x.clone(), full.inputs.select_rows(&t.split.test));
        prop_assert!(t.test_x.iter().all(|v| v.is_finite()));
    }
}

fn vcgp(dir: &Path, args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vcgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("fit.json"), r#"{"max_iterations": 60, "num_inducing": 10}"#).unwrap();

    let train_dir = dir.join("train");
    let (ok, _, err) = vcgp(dir, &["gen-data", "gp", "--n", "30", "--q", "3", "--d", "2", "--missing", "0.2", "--seed", "1", "--out", "train"]);
    assert!(ok, "{err}");
    let (ok, _, err) = vcgp(dir, &["gen-data", "gp", "--n", "10", "--q", "3", "--d", "2", "--seed", "2", "--out", "test"]);
    assert!(ok, "{err}");
    let ds = read_dataset_csv(train_dir.join("data.csv")).unwrap().dataset;
    assert_eq!((ds.n(), ds.q(), ds.d()), (30, 3, 2));
    assert_eq!(ds.n() * ds.q() - ds.input_mask.count(), 18);

    let (ok, out, err) = vcgp(dir, &["fit", "--data", "train/data.csv", "--config", "fit.json", "--out", "model"]);
    assert!(ok, "{err}");
    assert!(out.contains("bound"));
    assert!(dir.join("model/model.json").exists());
    assert!(dir.join("model/fit_trace.csv").exists());

    let (ok, _, err) = vcgp(dir, &["predict", "--model", "model/model.json", "--data", "test/data.csv", "--input-variance", "0.1", "--out", "pred"]);
    assert!(ok, "{err}");
    let preds = std::fs::read_to_string(dir.join("pred/predictions.csv")).unwrap();
    assert!(preds.starts_with("mean1,mean2,variance1,variance2"));
    assert_eq!(preds.lines().count(), 11);

    let (ok, out, err) = vcgp(dir, &["baselines", "--train", "train/data.csv", "--test", "test/data.csv", "--config", "fit.json", "--out", "base"]);
    assert!(ok, "{err}");
    for m in ["mean,", "mlr,", "nn,", "gplvm,"] {
        assert!(out.contains(m), "{out}");
    }

    let (ok, _, err) = vcgp(dir, &["gen-data", "mackey-glass", "--n", "50", "--out", "mg"]);
    assert!(ok, "{err}");
    assert_eq!(std::fs::read_to_string(dir.join("mg/series.csv")).unwrap().lines().count(), 51);

    std::fs::write(
        dir.join("forecast.json"),
        r#"{"experiment": "forecast",
            "fit": {"max_iterations": 40, "num_inducing": 10},
            "forecast": {"window": 4, "train_points": 30, "horizon": 10, "mackey_glass": {"length": 60}}}"#,
    )
    .unwrap();
    let (ok, out, err) = vcgp(dir, &["forecast", "--config", "forecast.json", "--out", "report"]);
    assert!(ok, "{err}");
    assert!(out.contains("naive"), "{out}");
    let (ok, out, err) = vcgp(dir, &["report", "--out", "report"]);
    assert!(ok, "{err}");
    assert!(out.contains("regenerated"), "{out}");

    let (ok, _, err) = vcgp(dir, &["semi-supervised", "--config", "forecast.json", "--out", "x"]);
    assert!(!ok);
    assert!(err.contains("not `semi-supervised`"), "{err}");
    let (ok, _, _) = vcgp(dir, &["fit", "--data", "missing.csv"]);
    assert!(!ok);
}

#[test]
fn cli_selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let (ok, out, err) = vcgp(tmp.path(), &["selftest"]);
    assert!(ok, "{out}\n{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{out}");
}
