//! Command-line front end: generate splits, evaluate predictions, train and
//! run the toy forecaster.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};

use causal_crowds::counterfactual::{BranchPoint, SubsetSelection};
use causal_crowds::dataset::{self, Manifest};
use causal_crowds::learn::{self, Mode, Predictor, ToyModel, TrainConfig};
use causal_crowds::metrics;
use causal_crowds::scenario::{generate_split, Split, SplitSpec};

const SPLITS: [&str; 4] = ["id", "ood_density", "ood_context", "ood_density_context"];
const MODES: [&str; 4] = ["baseline", "augment", "contrast", "ranking"];

#[derive(Parser)]
#[command(
    name = "causal-crowds",
    version,
    about = "Counterfactual crowd datasets and causal-awareness metrics"
)]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, env = "CAUSAL_CROWDS_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, annotate and write one dataset split.
    Generate(GenerateArgs),
    /// Score a predictions file against a split.
    Evaluate(EvaluateArgs),
    /// Train the toy forecaster on a split.
    TrainToy(TrainArgs),
    /// Write factual and counterfactual predictions for every scene of a split.
    PredictToy(PredictArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Split kind.
    #[arg(long, value_parser = PossibleValuesParser::new(SPLITS).map(|s| Split::parse(&s).unwrap()))]
    split: Split,
    /// Number of scenes.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the mean number of agents per scene, ego included.
    #[arg(long)]
    agents: Option<f64>,
    /// Override the non-causal threshold (m).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the causal threshold (m).
    #[arg(long)]
    eta: Option<f64>,
    /// Where counterfactual worlds diverge: `episode-start` or `history-end` (shared history).
    #[arg(long, default_value = "episode-start", value_parser = PossibleValuesParser::new(["episode-start", "history-end"]))]
    branch: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Split directory.
    #[arg(long)]
    data: PathBuf,
    /// Predictions file.
    #[arg(long)]
    predictions: PathBuf,
    /// Report directory (created if missing): report.txt, scenes.csv.
    #[arg(long)]
    out: PathBuf,
    /// Extra figure: `joint` writes joint.svg and joint.csv.
    #[arg(long, value_parser = PossibleValuesParser::new(["joint"]))]
    fig: Option<String>,
    /// Largest joint removal size for the figure.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    max_k: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Causal regulariser.
    #[arg(long, value_parser = PossibleValuesParser::new(MODES).map(|s| Mode::parse(&s).unwrap()))]
    mode: Mode,
    /// Training split directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file [default: toy-<mode>-<seed>.model].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch log CSV [default: model path with .log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also score the trained model on this split; the report goes next to the model.
    #[arg(long)]
    eval_ood: Option<PathBuf>,
    /// Causal term weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Ranking margin.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model file, or `cv` for the constant-velocity baseline.
    #[arg(long)]
    model: String,
    /// Split directory.
    #[arg(long)]
    data: PathBuf,
    /// Predictions file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also predict the world without any non-causal neighbour (enables the robustness gap).
    #[arg(long)]
    noncausal: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::TrainToy(a) => train(a),
        Command::PredictToy(a) => predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage(msg: &str) -> ! {
    use clap::CommandFactory;
    Cli::command().error(clap::error::ErrorKind::InvalidValue, msg).exit()
}

fn require_dir(p: &Path) -> Result<()> {
    if !p.is_dir() {
        bail!("{} is not a directory", p.display());
    }
    Ok(())
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!("{} does not exist", p.display());
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = SplitSpec::new(a.split, a.scenes as usize, a.seed);
    if let Some(n) = a.agents {
        spec.target_agents = n;
    }
    if let Some(e) = a.epsilon {
        spec.thresholds.epsilon = e;
    }
    if let Some(e) = a.eta {
        spec.thresholds.eta = e;
    }
    if a.branch == "history-end" {
        spec.branch = BranchPoint::HistoryEnd;
    }
    if let Err(e) = spec.validate() {
        usage(&e.to_string());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (records, summary) = generate_split(&spec)?;
    let manifest = Manifest::new(&spec, &records)?;
    dataset::write_split(&a.out, &records, &manifest)?;
    println!("{summary}");
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    require_dir(&a.data)?;
    require_file(&a.predictions)?;
    let (records, manifest) = dataset::read_split(&a.data)?;
    let predictions = dataset::read_predictions(&a.predictions, &records)?;
    let (mut report, rows) = metrics::evaluate(&records, &predictions)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.fig.is_some() {
        let ks: Vec<usize> = (0..=a.max_k as usize).collect();
        let config = manifest.spec.counterfactual_config();
        report.joint_curve = metrics::joint_curve(&records, &ks, &config, SubsetSelection::Smallest)?;
        write(&a.out.join("joint.csv"), &metrics::joint_csv(&report.joint_curve))?;
        write(
            &a.out.join("joint.svg"),
            &metrics::joint_svg(&report.joint_curve, config.thresholds.eta),
        )?;
    }
    let text = report.to_text();
    write(&a.out.join("report.txt"), &text)?;
    write(&a.out.join("scenes.csv"), &metrics::scenes_csv(&rows, &report))?;
    print!("{text}");
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::new(a.mode, a.epochs, a.seed);
    if let Some(v) = a.alpha {
        config.loss.alpha = v;
    }
    if let Some(v) = a.tau {
        config.loss.tau = v;
    }
    if let Some(v) = a.margin {
        config.loss.margin = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Err(e) = config.validate() {
        usage(&e.to_string());
    }
    require_dir(&a.data)?;
    if let Some(d) = &a.eval_ood {
        require_dir(d)?;
    }
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("toy-{}-{}.model", a.mode.as_str(), a.seed)));
    let log_path = a.log.unwrap_or_else(|| sibling(&out, "log.csv"));

    let (records, manifest) = dataset::read_split(&a.data)?;
    config.thresholds = manifest.spec.thresholds;
    let samples = learn::prepare(&records, manifest.spec.branch)?;
    let (model, log) = learn::train_toy(&samples, &config)?;
    model.save(&out)?;
    write(&log_path, &learn::log_csv(&log))?;
    if let Some(last) = log.last() {
        println!(
            "epoch {} task_loss={:.6} causal_loss={:.6} ade={:.6} ace={:.6}",
            last.epoch, last.task_loss, last.causal_loss, last.ade, last.ace
        );
    }
    println!("model written to {}", out.display());

    if let Some(dir) = &a.eval_ood {
        let (ood, ood_manifest) = dataset::read_split(dir)?;
        let ood_samples = learn::prepare(&ood, ood_manifest.spec.branch)?;
        let report = learn::evaluate_predictor(&Predictor::Toy(model), &ood, &ood_samples)?;
        let text = report.to_text();
        write(&sibling(&out, "ood.txt"), &text)?;
        println!("{} split:", ood_manifest.split.as_str());
        print!("{text}");
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    require_dir(&a.data)?;
    let predictor = if a.model == "cv" {
        Predictor::ConstantVelocity
    } else {
        Predictor::Toy(ToyModel::load(Path::new(&a.model))?)
    };
    let (records, manifest) = dataset::read_split(&a.data)?;
    let samples = learn::prepare(&records, manifest.spec.branch)?;
    let sets = learn::predict_all(&predictor, &samples, a.noncausal);
    dataset::write_predictions(&a.out, &sets)?;
    let entries: usize = sets.iter().map(|s| s.entries.len()).sum();
    println!("{} scenes, {entries} entries written to {}", sets.len(), a.out.display());
    Ok(())
}

/// `path` with its extension replaced by `suffix`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
