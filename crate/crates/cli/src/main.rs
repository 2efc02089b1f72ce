//! `nadet`: build native ad corpora, train detectors and evaluate them.
//!
//! Exit codes: 0 success, 1 validation failure or missing upstream output,
//! 2 configuration or usage error.

mod clients;
mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nadet::evaluator::Granularity;
use nadet::pair_builder::NeighborPolicy;

use config::*;
use workspace::{ValidationFailure, Workspace};

#[derive(Parser, Debug)]
#[command(name = "nadet", version, about = "Native ad corpus construction, detection and evaluation")]
#[command(propagate_version = true, arg_required_else_help = true)]
struct Cli {
    /// Configuration file (default: ./nadet.toml when present, else built-in defaults).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Root directory for stage outputs.
    #[arg(long, global = true, value_name = "DIR")]
    workspace: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect responses for the query set and apply the retention filters.
    Ingest(IngestArgs),
    /// Build the ad vocabulary (bundled, reviewed files or LLM drafts).
    Vocab(VocabArgs),
    /// Insert one ad per retained response.
    Inject(InjectArgs),
    /// Build the fixed split and the ten topic holdouts, then verify them.
    Split,
    /// Build sentence pairs for training, validation and test.
    Pairs(PairsArgs),
    /// Train the sentence-pair encoder detector.
    Train(TrainArgs),
    /// Run a detector over the test subset.
    Detect(DetectArgs),
    /// Compute precision and recall of a detector's test-set results.
    Eval(EvalArgs),
    /// Count marker phrases and measure lexical diversity of the ad corpus.
    Audit(AuditArgs),
    /// Collect all evaluation results into one table with confidence intervals.
    Report(ReportArgs),
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum)]
    source: Option<QuerySource>,
    #[arg(long, value_name = "DIR")]
    queries_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    client: Option<SearchClientKind>,
    /// JSON object mapping query text to response text.
    #[arg(long, value_name = "FILE")]
    fixture: Option<PathBuf>,
    #[arg(long)]
    queries_per_topic: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct VocabArgs {
    #[arg(long, value_enum)]
    source: Option<VocabSource>,
    #[arg(long, value_name = "DIR")]
    reviewed_dir: Option<PathBuf>,
    /// LLM variant id for drafting.
    #[arg(long)]
    llm: Option<String>,
}

#[derive(Args, Debug)]
struct InjectArgs {
    #[arg(long, value_enum)]
    generator: Option<GeneratorKind>,
    #[arg(long, value_enum)]
    bank: Option<BankKind>,
    /// LLM variant id for shortlisting and insertion.
    #[arg(long)]
    llm: Option<String>,
    /// Operator selection file.
    #[arg(long, value_name = "FILE")]
    selection: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArg {
    /// `fixed` or a held-out topic name.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct PairsArgs {
    #[command(flatten)]
    split: SplitArg,
    #[arg(long)]
    target_positive_fraction: Option<f64>,
    #[arg(long, value_parser = parse_policy)]
    neighbor_policy: Option<NeighborPolicy>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitArg,
    /// compact, large, reference-compact or reference-large.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct DetectorArgs {
    #[arg(long, value_enum)]
    detector: Option<DetectorKind>,
    /// LLM variant id for `--detector llm`.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    split: SplitArg,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArg,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    pair_budget: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    confidence_level: Option<f64>,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
}

fn parse_policy(s: &str) -> Result<NeighborPolicy, String> {
    match s {
        "preceding_else_following" | "preceding" => Ok(NeighborPolicy::PrecedingElseFollowing),
        "both" => Ok(NeighborPolicy::Both),
        other => Err(format!("unknown neighbor policy '{other}' (preceding_else_following, both)")),
    }
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    s.parse().map_err(|e: nadet::Error| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_split(config: &mut Config, split: SplitArg) {
    set(&mut config.pairs.split, split.split);
}

fn apply_detector(config: &mut Config, d: DetectorArgs) {
    set(&mut config.detect.detector, d.detector);
    if d.variant.is_some() {
        config.detect.variant = d.variant;
    }
}

/// Fold command-line flags into the file configuration.
fn apply_overrides(config: &mut Config, cli: &mut Cli) {
    set(&mut config.workspace, cli.workspace.take());
    set(&mut config.seed, cli.seed);
    match std::mem::replace(&mut cli.command, Command::Config) {
        Command::Ingest(a) => {
            let c = &mut config.ingest;
            set(&mut c.source, a.source);
            if a.queries_dir.is_some() {
                c.queries_dir = a.queries_dir;
            }
            set(&mut c.client, a.client);
            if a.fixture.is_some() {
                c.fixture = a.fixture;
            }
            set(&mut c.queries_per_topic, a.queries_per_topic);
            set(&mut c.repeats, a.repeats);
        }
        Command::Vocab(a) => {
            set(&mut config.vocab.source, a.source);
            if a.reviewed_dir.is_some() {
                config.vocab.reviewed_dir = a.reviewed_dir;
            }
            if a.llm.is_some() {
                config.vocab.llm = a.llm;
            }
        }
        Command::Inject(a) => {
            set(&mut config.inject.generator, a.generator);
            set(&mut config.inject.bank, a.bank);
            if a.llm.is_some() {
                config.inject.llm = a.llm;
            }
            if a.selection.is_some() {
                config.inject.selection = a.selection;
            }
        }
        Command::Pairs(a) => {
            apply_split(config, a.split);
            set(&mut config.pairs.target_positive_fraction, a.target_positive_fraction);
            set(&mut config.pairs.neighbor_policy, a.neighbor_policy);
        }
        Command::Train(a) => {
            apply_split(config, a.split);
            set(&mut config.train.profile, a.profile);
            if a.epochs.is_some() {
                config.train.epochs = a.epochs;
            }
            if a.batch_size.is_some() {
                config.train.batch_size = a.batch_size;
            }
            if a.learning_rate.is_some() {
                config.train.learning_rate = a.learning_rate;
            }
        }
        Command::Detect(a) => {
            apply_split(config, a.split);
            apply_detector(config, a.detector);
            set(&mut config.detect.threshold, a.threshold);
        }
        Command::Eval(a) => {
            apply_split(config, a.split);
            apply_detector(config, a.detector);
            set(&mut config.eval.granularity, a.granularity);
        }
        Command::Audit(a) => set(&mut config.audit.pair_budget, a.pair_budget),
        Command::Report(a) => {
            set(&mut config.report.confidence_level, a.confidence_level);
            set(&mut config.eval.granularity, a.granularity);
        }
        Command::Split | Command::Config => {}
    }
}

fn run(mut cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::resolve(cli.config.as_deref())?;
    let stage = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Vocab(_) => "vocab",
        Command::Inject(_) => "inject",
        Command::Split => "split",
        Command::Pairs(_) => "pairs",
        Command::Train(_) => "train",
        Command::Detect(_) => "detect",
        Command::Eval(_) => "eval",
        Command::Audit(_) => "audit",
        Command::Report(_) => "report",
        Command::Config => "config",
    };
    apply_overrides(&mut config, &mut cli);
    config.validate()?;
    let ws = Workspace::new(&config.workspace);
    match stage {
        "ingest" => commands::ingest(&config, &ws),
        "vocab" => commands::vocab(&config, &ws),
        "inject" => commands::inject(&config, &ws),
        "split" => commands::split(&config, &ws),
        "pairs" => commands::pairs(&config, &ws),
        "train" => commands::train(&config, &ws),
        "detect" => commands::detect(&config, &ws),
        "eval" => commands::eval(&config, &ws),
        "audit" => commands::audit(&config, &ws),
        "report" => commands::report(&config, &ws),
        _ => {
            print!("{}", toml::to_string_pretty(&config)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                if e.downcast_ref::<ValidationFailure>().is_none() {
                    log::debug!("{e:?}");
                }
                ExitCode::from(1)
            }
        }
    }
}
