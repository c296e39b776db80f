use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;

use vcgp::baselines::{gplvm_impute, mean_predictor, mlr_fit_predict, nn_predict};
use vcgp::harness::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use vcgp::harness::io::{read_dataset_csv, write_dataset_csv, write_table_csv};
use vcgp::harness::report::{regenerate_summary, write_report, SUMMARY_TXT};
use vcgp::harness::{
    apply_missingness, mackey_glass_simulate, metrics, synth_gp_dataset, synth_manifold_dataset, MackeyGlassConfig,
    ManifoldParams, SynthParams,
};
use vcgp::model::Posterior;
use vcgp::pipelines::semi_described_fit;
use vcgp::{train, Error, FitConfig, MaskedDataset, ModelState, Result};

#[derive(Parser)]
#[command(name = "vcgp", version, about = "Gaussian processes with uncertain and partially observed inputs")]
struct Cli {
    /// JSON config file. Experiments take an experiment config; `fit` takes
    /// a fit config; `gen-data` takes generator parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; for experiments, the first trial seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    /// Inputs and outputs drawn from a two-layer GP.
    Gp,
    /// Labelled observations of a 2-D clustered latent space.
    Manifold,
    /// A Mackey-Glass series.
    MackeyGlass,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    GenData {
        #[arg(value_enum)]
        generator: Generator,
        /// Rows (series length for mackey-glass).
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 15)]
        q: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        /// Fraction of input entries to hide (gp only).
        #[arg(long, default_value_t = 0.0)]
        missing: f64,
    },
    /// Fit a model to a CSV dataset. Rows with missing inputs go through
    /// the semi-described procedure; a file without inputs fits a latent
    /// variable model.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Latent dimension when the data has no input columns.
        #[arg(long)]
        latent_dim: Option<usize>,
    },
    /// Predict at the inputs of a CSV file with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Treat every test input as Gaussian with this variance.
        #[arg(long, default_value_t = 0.0)]
        input_variance: f64,
    },
    /// Mackey-Glass free simulation experiment.
    Forecast,
    /// Regression with partially observed inputs across missing fractions.
    SemiDescribed {
        /// Sweep latent and output dimensions instead.
        #[arg(long)]
        dim_study: bool,
    },
    /// Classification from a latent embedding across labelled-set sizes.
    SemiSupervised,
    /// Baseline regressors on a train/test pair of CSV files.
    Baselines(BaselineArgs),
    /// Recompute the summary of a report directory from its metrics table.
    Report,
    /// Run the oracle suites.
    Selftest,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn gen_data(cli: &Cli, generator: Generator, n: usize, q: usize, d: usize, missing: f64) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let dir = out_dir(cli, ".")?;
    let config = cli.config.as_deref();
    match generator {
        Generator::Gp => {
            let ds = synth_gp_dataset(seed, n, q, d, &load_json::<SynthParams>(config)?)?;
            let rows: Vec<usize> = (0..n).collect();
            let ds = apply_missingness(&ds, missing, seed, &rows)?;
            let path = dir.join("data.csv");
            write_dataset_csv(&path, &ds, None)?;
            println!("{}", path.display());
        }
        Generator::Manifold => {
            let (ds, labels, latent) = synth_manifold_dataset(seed, n, &load_json::<ManifoldParams>(config)?)?;
            let labels: Vec<Option<i64>> = labels.into_iter().map(Some).collect();
            let path = dir.join("data.csv");
            write_dataset_csv(&path, &ds, Some(&labels))?;
            let lpath = dir.join("latent.csv");
            let rows: Vec<Vec<f64>> = latent.row_iter().map(|r| r.iter().copied().collect()).collect();
            write_table_csv(&lpath, &["latent1", "latent2"], &rows)?;
            println!("{}\n{}", path.display(), lpath.display());
        }
        Generator::MackeyGlass => {
            let mg = MackeyGlassConfig {
                length: n,
                ..load_json::<MackeyGlassConfig>(config)?
            };
            let series = mackey_glass_simulate(&mg)?;
            let rows: Vec<Vec<f64>> = series.iter().enumerate().map(|(t, v)| vec![t as f64, *v]).collect();
            let path = dir.join("series.csv");
            write_table_csv(&path, &["t", "value"], &rows)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn fit_config(cli: &Cli) -> Result<FitConfig> {
    let mut cfg: FitConfig = load_json(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fit_command(cli: &Cli, data: &Path, latent_dim: Option<usize>) -> Result<()> {
    let cfg = fit_config(cli)?;
    let ds = read_dataset_csv(data)?.dataset;
    let (model, report) = if ds.q() == 0 {
        let q = latent_dim.ok_or_else(|| Error::InvalidParameter("data has no inputs; pass --latent-dim".into()))?;
        train(&MaskedDataset::latent(ds.n(), q, ds.outputs.clone())?, &cfg)?
    } else {
        let r = semi_described_fit(&ds, &cfg)?;
        (r.model, r.report)
    };
    let dir = out_dir(cli, ".")?;
    model.save(dir.join("model.json"))?;
    let rows: Vec<Vec<f64>> = report.trace.iter().enumerate().map(|(i, b)| vec![i as f64, *b]).collect();
    write_table_csv(dir.join("fit_trace.csv"), &["iteration", "bound"], &rows)?;
    println!(
        "bound {:.6} after {} iterations ({:?}); wrote {}",
        report.final_bound(),
        report.iterations,
        report.termination,
        dir.join("model.json").display()
    );
    Ok(())
}

fn predict_command(cli: &Cli, model: &Path, data: &Path, input_variance: f64) -> Result<()> {
    let state = ModelState::from_json(&std::fs::read_to_string(model)?)?;
    let ds = read_dataset_csv(data)?.dataset;
    if !ds.input_mask.all() {
        return Err(Error::InvalidParameter("prediction inputs must be fully observed".into()));
    }
    let post = Posterior::new(&state)?;
    let var = vec![input_variance; state.q()];
    let mut rows = Vec::with_capacity(ds.n());
    for r in 0..ds.n() {
        let x: Vec<f64> = ds.inputs.row(r).iter().copied().collect();
        let g = post.uncertain(&x, &var, true)?;
        rows.push(g.mean.into_iter().chain(g.variance).collect());
    }
    let d = state.d();
    let names: Vec<String> = (0..d)
        .map(|j| format!("mean{}", j + 1))
        .chain((0..d).map(|j| format!("variance{}", j + 1)))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let path = out_dir(cli, ".")?.join("predictions.csv");
    write_table_csv(&path, &header, &rows)?;
    println!("{}", path.display());
    Ok(())
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(kind),
    };
    if cfg.experiment != kind {
        return Err(Error::InvalidParameter(format!(
            "config is for `{}`, not `{}`",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    if let Some(s) = cli.seed {
        cfg = cfg.with_first_seed(s);
    }
    let report = run_experiment(&cfg)?;
    let dir = out_dir(cli, &format!("reports/{}", kind.name()))?;
    for p in write_report(&report, &dir)? {
        log::info!("wrote {}", p.display());
    }
    print!("{}", std::fs::read_to_string(dir.join(SUMMARY_TXT))?);
    Ok(())
}

fn baselines_command(cli: &Cli, args: &BaselineArgs) -> Result<()> {
    let cfg = fit_config(cli)?;
    let train_ds = read_dataset_csv(&args.train)?.dataset;
    let test = read_dataset_csv(&args.test)?.dataset;
    if !test.input_mask.all() || test.outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("test file needs every input and output".into()));
    }
    // Missing entries are NaN after reading.
    let x_nan = &train_ds.inputs;
    let runs: Vec<(&str, Result<DMatrix<f64>>)> = vec![
        ("mean", mean_predictor(&train_ds.outputs, test.n())),
        ("mlr", mlr_fit_predict(x_nan, &train_ds.outputs, &test.inputs)),
        ("nn", nn_predict(x_nan, &train_ds.input_mask, &train_ds.outputs, &test.inputs)),
        ("gplvm", gplvm_impute(&train_ds, &cfg).and_then(|r| predict_rows(&r.model, &test.inputs))),
    ];
    let path = out_dir(cli, ".")?.join("baselines.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "mae", "mse", "status"])?;
    for (name, pred) in runs {
        let rec = match pred.and_then(|p| metrics(&p, &test.outputs)) {
            Ok(m) => [name.to_string(), m.mae.to_string(), m.mse.to_string(), "ok".into()],
            Err(e) => [name.to_string(), String::new(), String::new(), format!("failed: {e}")],
        };
        println!("{}", rec.join(","));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn predict_rows(state: &ModelState, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let post = Posterior::new(state)?;
    let mut out = DMatrix::zeros(x.nrows(), state.d());
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        let g = post.deterministic(&row, false)?;
        for (j, m) in g.mean.iter().enumerate() {
            out[(r, j)] = *m;
        }
    }
    Ok(out)
}

fn report_command(cli: &Cli) -> Result<()> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::InvalidParameter("pass the report directory with --out".into()))?;
    let summary = regenerate_summary(&dir)?;
    log::info!("{} summary rows", summary.len());
    print!("{}", std::fs::read_to_string(dir.join(SUMMARY_TXT))?);
    Ok(())
}

#[cfg(feature = "selftest")]
fn selftest_command(cli: &Cli) -> Result<bool> {
    let results = vcgp::selftest::run_selftest(cli.seed.unwrap_or(0));
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.pass))
}

#[cfg(not(feature = "selftest"))]
fn selftest_command(_: &Cli) -> Result<bool> {
    Err(Error::InvalidParameter("built without the `selftest` feature".into()))
}

fn run(cli: &Cli) -> Result<bool> {
    let Format::Csv = cli.format;
    match &cli.command {
        Command::GenData {
            generator,
            n,
            q,
            d,
            missing,
        } => gen_data(cli, *generator, *n, *q, *d, *missing)?,
        Command::Fit { data, latent_dim } => fit_command(cli, data, *latent_dim)?,
        Command::Predict {
            model,
            data,
            input_variance,
        } => predict_command(cli, model, data, *input_variance)?,
        Command::Forecast => experiment(cli, ExperimentKind::Forecast)?,
        Command::SemiDescribed { dim_study } => experiment(
            cli,
            if *dim_study {
                ExperimentKind::DimStudy
            } else {
                ExperimentKind::SemiDescribed
            },
        )?,
        Command::SemiSupervised => experiment(cli, ExperimentKind::SemiSupervised)?,
        Command::Baselines(args) => baselines_command(cli, args)?,
        Command::Report => report_command(cli)?,
        Command::Selftest => return selftest_command(cli),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
