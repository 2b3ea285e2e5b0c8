//! Command-line front end: train a baseline, print placement plans, run one
//! execution mode, or benchmark all of them side by side.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use edgeflow::edgesim;
use edgeflow::harness::{
    self, load_mnist, load_weights, run_experiment, save_weights, synth, Dataset,
    ExperimentConfig, ExperimentError, RunReport, TrainConfig,
};
use edgeflow::model::lenet5;
use edgeflow::partition::{
    plan_dapp, plan_dasp, plan_sdci, DappSelection, PartitionPlan, PlanMode,
};
use edgeflow::prsim::{DeviceBudget, IpLibrary, PrError};
use edgeflow::quantstream::QuantScheme;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(
    name = "edgeflow",
    about = "Dynamic CNN inference simulator: parameter streaming, partial streaming, and filter-split execution under reconfiguration budgets"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the LeNet-5 baseline and save a weights file.
    Train(TrainArgs),
    /// Print the placement plan for a mode.
    Plan(PlanArgs),
    /// Run one mode over the test set and report.
    Run(RunArgs),
    /// Run every mode over the same batch and compare.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the IDX files (train-images-idx3-ubyte, ...).
    #[arg(long)]
    mnist: Option<PathBuf>,
    /// Generate a deterministic synthetic digit set of this size instead of
    /// loading files.
    #[arg(long, value_name = "N", conflicts_with = "mnist")]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the trained weights.
    #[arg(long)]
    weights: PathBuf,
    /// Training-subset size.
    #[arg(long, default_value_t = 10_000)]
    images: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f32,
    #[arg(long, default_value_t = 32)]
    batch: usize,
}

#[derive(Args)]
struct ModeArgs {
    /// Execution mode.
    #[arg(long, value_parser = parse_mode)]
    mode: PlanMode,
    /// Comma-separated layers to stream in dapp mode.
    #[arg(long, value_name = "a,b")]
    stream_layers: Option<String>,
    /// On-chip byte budget for dapp's greedy selection.
    #[arg(long, value_name = "BYTES")]
    onchip_budget: Option<u64>,
    /// Filter chunk sizes for sdci, e.g. 4,2.
    #[arg(long, value_name = "a,b", default_value = "4,2")]
    split: String,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    mode: ModeArgs,
    /// Write the plan here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct QuantArgs {
    /// Quantization container width (8, 16 or 32).
    #[arg(long, default_value_t = 32)]
    bits: u8,
    /// Fractional bits of the fixed-point scale.
    #[arg(long, default_value_t = 16)]
    frac: u8,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Trained weights file.
    #[arg(long)]
    weights: PathBuf,
    /// Test images to evaluate.
    #[arg(long, default_value_t = 1_000)]
    images: usize,
    /// Evaluate the full 10,000-image test set.
    #[arg(long)]
    full: bool,
    /// Topology file describing nodes and links for a multi-node run.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// IP catalog file for sdci; the built-in catalog is used otherwise.
    #[arg(long)]
    ip_library: Option<PathBuf>,
    /// Carry feature maps as raw bit patterns instead of fixed-point.
    #[arg(long)]
    exact_fm: bool,
    /// Reload every compute unit for every image instead of batching per
    /// residency.
    #[arg(long)]
    swap_per_image: bool,
    /// Write the report here (.json for the machine-readable form).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 1_000)]
    images: usize,
    #[arg(long)]
    full: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PlanMode, String> {
    match s {
        "dasp" => Ok(PlanMode::Dasp),
        "dapp" => Ok(PlanMode::Dapp),
        "sdci" => Ok(PlanMode::Sdci),
        "static" => Ok(PlanMode::Static),
        other => Err(format!(
            "unknown mode {other}; expected dasp, dapp, sdci or static"
        )),
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn budget(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_BUDGET,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::Pr(
                PrError::BudgetExceeded { .. } | PrError::IpOverBudget { .. },
            ) => CliError::budget(e.to_string()),
            ExperimentError::Edge(edgesim::EdgeError::Unsatisfiable { .. }) => {
                CliError::budget(e.to_string())
            }
            ExperimentError::Stream(_) => CliError::data(e.to_string()),
            _ => CliError::config(e.to_string()),
        }
    }
}

fn load_dataset(data: &DataArgs, train_split: bool) -> Result<Dataset, CliError> {
    match (&data.mnist, data.synthetic) {
        (Some(dir), _) => {
            let (ti, tl, vi, vl) = synth::standard_paths(dir);
            let (images, labels) = if train_split { (ti, tl) } else { (vi, vl) };
            load_mnist(&images, &labels).map_err(|e| CliError::data(e.to_string()))
        }
        (None, Some(n)) => {
            // Train and test draw from disjoint streams, matching the
            // files write_dataset would produce.
            let seed = if train_split {
                data.seed
            } else {
                data.seed.wrapping_add(0x5eed_0001)
            };
            Ok(synth::dataset(n, seed))
        }
        (None, None) => Err(CliError::config(
            "no data source: pass --mnist DIR or --synthetic N",
        )),
    }
}

fn parse_split(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|c| c.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::config(format!("bad --split list {s}")))
}

fn build_plan(mode: &ModeArgs) -> Result<PartitionPlan, CliError> {
    let m = lenet5();
    let plan = match mode.mode {
        PlanMode::Static => PartitionPlan::static_baseline(&m),
        PlanMode::Dasp => plan_dasp(&m),
        PlanMode::Dapp => {
            let result = match (&mode.stream_layers, mode.onchip_budget) {
                (Some(list), _) => {
                    let layers: Vec<&str> = list.split(',').map(|s| s.trim()).collect();
                    plan_dapp(&m, DappSelection::Layers(&layers))
                }
                (None, Some(budget)) => plan_dapp(&m, DappSelection::OnChipBudgetBytes(budget)),
                (None, None) => plan_dapp(&m, DappSelection::Layers(&["conv1", "conv2"])),
            };
            result.map_err(|e| CliError::config(e.to_string()))?
        }
        PlanMode::Sdci => plan_sdci(&m, "conv1", &parse_split(&mode.split)?)
            .map_err(|e| CliError::config(e.to_string()))?,
    };
    Ok(plan)
}

fn write_or_print(path: &Option<PathBuf>, text: &str, json: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let body = if p.extension().is_some_and(|e| e == "json") {
                json
            } else {
                text
            };
            std::fs::write(p, body).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn experiment_config(run: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let scheme = QuantScheme::new(run.quant.bits, run.quant.frac)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut cfg = ExperimentConfig::new(run.mode.mode);
    cfg.scheme = scheme;
    cfg.images = if run.full { 10_000 } else { run.images };
    cfg.stream_layers = run
        .mode
        .stream_layers
        .as_ref()
        .map(|s| s.split(',').map(|l| l.trim().to_string()).collect());
    cfg.onchip_budget = run.mode.onchip_budget;
    cfg.split = parse_split(&run.mode.split)?;
    cfg.swap_per_image = run.swap_per_image;
    cfg.exact_fm = run.exact_fm;
    if let Some(path) = &run.topology {
        let text = read_text(path)?;
        cfg.topology = Some(
            edgesim::parse_topology(&text).map_err(|e| CliError::config(e.to_string()))?,
        );
    }
    if let Some(path) = &run.ip_library {
        let text = read_text(path)?;
        cfg.library = Some(
            IpLibrary::parse_text(&text, DeviceBudget::zynq7020()).map_err(|e| match e {
                PrError::IpOverBudget { .. } => CliError::budget(e.to_string()),
                other => CliError::config(other.to_string()),
            })?,
        );
    }
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let m = lenet5();
    let train = load_dataset(&args.data, true)?.take(args.images);
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch,
        seed: args.data.seed,
    };
    eprintln!(
        "training on {} images: {} epochs, lr {}, batch {}, seed {}",
        train.len(),
        cfg.epochs,
        cfg.lr,
        cfg.batch_size,
        cfg.seed
    );
    let outcome =
        harness::train_baseline(&m, &train, &cfg).map_err(|e| CliError::data(e.to_string()))?;
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        eprintln!("epoch {}: mean loss {loss:.4}", i + 1);
    }
    save_weights(&outcome.params, &args.weights).map_err(|e| CliError::data(e.to_string()))?;
    let test = load_dataset(&args.data, false)?.take(1_000);
    let (correct, total) = harness::evaluate(&m, &outcome.params, &test)
        .map_err(|e| CliError::config(e.to_string()))?;
    println!(
        "held-out accuracy: {:.2}% ({correct}/{total}); weights written to {}",
        100.0 * correct as f64 / total as f64,
        args.weights.display()
    );
    Ok(())
}

fn cmd_plan(args: &PlanArgs) -> Result<(), CliError> {
    let plan = build_plan(&args.mode)?;
    let text = plan.to_text();
    let json = serde_json::to_string_pretty(&plan).expect("plan serializes");
    write_or_print(&args.report, &text, &json)
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let m = lenet5();
    let params = load_weights(&args.weights, &m).map_err(|e| CliError::data(e.to_string()))?;
    let test = load_dataset(&args.data, false)?;
    let cfg = experiment_config(args)?;
    let report = run_experiment(&m, &params, &test, &cfg)?;
    write_or_print(&args.report, &report.to_text(), &report.to_json())?;
    if args.report.is_some() {
        println!(
            "{}: {:.2}% over {} images; report written",
            report.mode, report.accuracy_pct, report.images
        );
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let m = lenet5();
    let params = load_weights(&args.weights, &m).map_err(|e| CliError::data(e.to_string()))?;
    let test = load_dataset(&args.data, false)?;
    let scheme = QuantScheme::new(args.quant.bits, args.quant.frac)
        .map_err(|e| CliError::config(e.to_string()))?;
    let images = if args.full { 10_000 } else { args.images };

    let mut reports: Vec<RunReport> = Vec::new();
    for mode in [PlanMode::Static, PlanMode::Dasp, PlanMode::Dapp, PlanMode::Sdci] {
        let mut cfg = ExperimentConfig::new(mode);
        cfg.scheme = scheme;
        cfg.images = images;
        reports.push(run_experiment(&m, &params, &test, &cfg)?);
    }

    let mut text = String::new();
    text.push_str("mode    accuracy   streamed-bytes  swaps  sim-time-s\n");
    for r in &reports {
        text.push_str(&format!(
            "{:<7} {:>6.2}%   {:>14} {:>6} {:>11.6}\n",
            r.mode,
            r.accuracy_pct,
            r.streamed_payload_bytes,
            r.swap_count,
            r.time.total_secs()
        ));
    }
    text.push('\n');
    for r in &reports {
        text.push_str(&r.to_text());
        text.push('\n');
    }
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    write_or_print(&args.report, &text, &json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Plan(args) => cmd_plan(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
