use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lora_ranging::datastore::{self, Dataset, OutlierPolicy};
use lora_ranging::geometry::Layout;
use lora_ranging::neural::{self, MlpModel, TrainConfig};
use lora_ranging::simulator::{run_campaign, CampaignConfig};
use lora_ranging::stats;

/// LoRa 2.4 GHz time-of-flight ranging simulator and error-compensation toolkit.
#[derive(Debug, Parser)]
#[command(name = "lora-ranging", version)]
struct Cli {
    /// Seed for every random draw; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress standard-output summaries.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print extra detail (per-RP counts, training epochs).
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a synthetic ranging campaign and write its log CSV.
    Simulate {
        /// Campaign config JSON; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-RP error statistics and plot data.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// k-fold cross-validation of the error model, then a final fit on all data.
    CrossValidate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Training hyper-parameters JSON; built-in defaults when omitted.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Append predicted and residual error columns to a log CSV.
    Compensate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Campaign config JSON providing the layout.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict the absolute ranging error for one environment reading.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        temperature: f64,
        #[arg(long, allow_hyphen_values = true)]
        humidity: f64,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Campaign config JSON providing the layout; default layout when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep records outside the per-RP IQR fences.
    #[arg(long)]
    no_outlier_filter: bool,
}

/// A failure with its process exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure { code: 2, message: e.to_string() }
    }

    fn output(e: impl std::fmt::Display) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

struct Output {
    quiet: bool,
    verbose: bool,
}

impl Output {
    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn detail(&self, text: &str) {
        if self.verbose {
            print!("{text}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Output { quiet: cli.quiet, verbose: cli.verbose };
    let result = match cli.command {
        Command::Simulate { config, out: path } => simulate(config.as_deref(), &path, cli.seed, &out),
        Command::Analyze { input, out_dir, data } => analyze(&input, &out_dir, &data, &out),
        Command::CrossValidate { input, folds, report, model_out, train_config, data } => cross_validate(
            &input,
            folds,
            &report,
            &model_out,
            train_config.as_deref(),
            &data,
            cli.seed,
            &out,
        ),
        Command::Compensate { model, input, out: path, config } => {
            compensate(&model, &input, &path, config.as_deref(), &out)
        }
        Command::Predict { model, temperature, humidity } => predict(&model, temperature, humidity, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {what} {}: {e}", path.display())))
}

fn load_campaign_config(path: Option<&Path>) -> Result<CampaignConfig, Failure> {
    match path {
        None => Ok(CampaignConfig::default()),
        Some(p) => CampaignConfig::from_json(&read_text(p, "config")?)
            .map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
    }
}

fn load_layout(path: Option<&Path>) -> Result<Layout, Failure> {
    Ok(load_campaign_config(path)?.layout)
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    let dataset = datastore::read_csv(path).map_err(Failure::input)?;
    if dataset.is_empty() {
        return Err(Failure::input(format!("{}: no records", path.display())));
    }
    Ok(dataset)
}

fn load_model(path: &Path) -> Result<MlpModel, Failure> {
    let model = MlpModel::from_json(&read_text(path, "model")?)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let net = &model.network;
    if net.input_width() != 2 || net.output_width() != 1 {
        return Err(Failure::input(format!(
            "{}: architecture {:?} does not map (temperature, humidity) to one error value",
            path.display(),
            net.sizes()
        )));
    }
    Ok(model)
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::output(format!("cannot write {}: {e}", path.display())))
}

fn filtered(dataset: Dataset, layout: &Layout, data: &DataArgs) -> Result<(Dataset, usize), Failure> {
    let policy = if data.no_outlier_filter { OutlierPolicy::none() } else { OutlierPolicy::default() };
    datastore::filter_outliers(&dataset, layout, &policy).map_err(Failure::input)
}

fn simulate(config: Option<&Path>, out_path: &Path, seed: Option<u64>, out: &Output) -> CmdResult {
    let mut config = load_campaign_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let records = run_campaign(&config).map_err(Failure::input)?;
    let dataset = Dataset::synthetic(records);
    write_file(out_path, &datastore::format_csv(&dataset))?;

    let mut text = format!("wrote {} records to {}\n", dataset.len(), out_path.display());
    for rp in config.layout.reference_points() {
        let n = dataset.records.iter().filter(|r| r.rp == *rp).count();
        let _ = writeln!(text, "  RP ({}, {}): {n} records", rp.x, rp.y);
    }
    out.say(&text);
    Ok(())
}

fn analyze(input: &Path, out_dir: &Path, data: &DataArgs, out: &Output) -> CmdResult {
    let layout = load_layout(data.config.as_deref())?;
    let dataset = load_dataset(input)?;
    let total = dataset.len();
    let (dataset, removed) = filtered(dataset, &layout, data)?;
    let samples = stats::per_record_errors(&dataset, &layout).map_err(Failure::input)?;
    let rp_stats = stats::per_rp_stats(&samples).map_err(Failure::input)?;

    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::output(format!("cannot create {}: {e}", out_dir.display())))?;
    let written = stats::export_plot_data(&rp_stats, &samples, out_dir).map_err(Failure::output)?;

    let mut summary = format!("records: {total}\noutliers removed: {removed}\nreference points: {}\n", rp_stats.len());
    let _ = writeln!(summary, "{:>10} {:>10} {:>8} {:>14} {:>14}", "x (m)", "y (m)", "n", "mean |e| (m)", "std |e| (m)");
    for s in &rp_stats {
        let _ = writeln!(
            summary,
            "{:>10} {:>10} {:>8} {:>14.4} {:>14.4}",
            s.rp.x, s.rp.y, s.n, s.mean_abs_error_m, s.std_abs_error_m
        );
    }
    let extremes = |get: fn(&stats::RpStats) -> f64| {
        let values = rp_stats.iter().map(get);
        (values.clone().fold(f64::INFINITY, f64::min), values.fold(f64::NEG_INFINITY, f64::max))
    };
    let (mean_min, mean_max) = extremes(|s| s.mean_abs_error_m);
    let (std_min, std_max) = extremes(|s| s.std_abs_error_m);
    let _ = writeln!(summary, "per-RP mean |e|: min {mean_min:.4} m, max {mean_max:.4} m");
    let _ = writeln!(summary, "per-RP std |e|:  min {std_min:.4} m, max {std_max:.4} m");
    write_file(&out_dir.join("summary.txt"), &summary)?;

    out.say(&summary);
    for path in &written {
        out.detail(&format!("wrote {}\n", path.display()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cross_validate(
    input: &Path,
    folds: usize,
    report_path: &Path,
    model_path: &Path,
    train_config: Option<&Path>,
    data: &DataArgs,
    seed: Option<u64>,
    out: &Output,
) -> CmdResult {
    let mut config = match train_config {
        None => TrainConfig::default(),
        Some(p) => serde_json::from_str(&read_text(p, "training config")?)
            .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?,
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate().map_err(Failure::input)?;

    let layout = load_layout(data.config.as_deref())?;
    let dataset = load_dataset(input)?;
    let (dataset, removed) = filtered(dataset, &layout, data)?;
    let (features, targets) = neural::error_features(&dataset, &layout).map_err(Failure::input)?;

    let report = neural::cross_validate(features.view(), &targets, folds, &config).map_err(Failure::input)?;
    let (model, history) = neural::train(features.view(), &targets, &config).map_err(Failure::input)?;

    write_file(report_path, &report.to_json().map_err(Failure::output)?)?;
    write_file(model_path, &model.to_json().map_err(Failure::output)?)?;

    out.say(&format!(
        "{} records ({removed} outliers removed), {folds}-fold cross-validation\n{}",
        targets.len(),
        report.table()
    ));
    for f in &report.folds {
        out.detail(&format!("fold {}: best epoch {} of {}\n", f.fold, f.best_epoch, f.epochs_run));
    }
    out.detail(&format!("final model: best epoch {} of {}\n", history.best_epoch, history.epochs_run));
    Ok(())
}

fn compensate(model: &Path, input: &Path, out_path: &Path, config: Option<&Path>, out: &Output) -> CmdResult {
    let model = load_model(model)?;
    let layout = load_layout(config)?;
    let dataset = load_dataset(input)?;
    let records = neural::compensate(&model, &dataset, &layout).map_err(Failure::input)?;
    datastore::write_compensated_csv(&records, out_path).map_err(Failure::output)?;

    let n = records.len() as f64;
    let (_, errors) = neural::error_features(&dataset, &layout).map_err(Failure::input)?;
    let mean_abs = errors.iter().sum::<f64>() / n;
    let mean_residual = records.iter().map(|r| r.residual_error_m).sum::<f64>() / n;
    out.say(&format!(
        "wrote {} records to {}\nmean |e|: {mean_abs:.4} m, mean residual: {mean_residual:.4} m\n",
        records.len(),
        out_path.display()
    ));
    Ok(())
}

fn predict(model: &Path, temperature: f64, humidity: f64, out: &Output) -> CmdResult {
    if !temperature.is_finite() {
        return Err(Failure::input(format!("temperature {temperature} is not finite")));
    }
    if !(0.0..=100.0).contains(&humidity) {
        return Err(Failure::input(format!("humidity {humidity} outside [0, 100]")));
    }
    let model = load_model(model)?;
    let predicted = model.predict_one(temperature, humidity).map_err(Failure::input)?;
    if out.quiet {
        println!("{predicted}");
    } else {
        println!("predicted absolute error: {predicted} m");
    }
    Ok(())
}
