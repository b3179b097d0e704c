use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};

use xling_core::pipeline::{run_pipeline, RunConfig, RunOptions, Stages};
use xling_core::stats::{
    concatenated, correctness_matrix, load_prediction_dump, permutation_test, Metric, StatsReport,
};

#[derive(Parser)]
#[command(name = "xling", version, about = "Cross-lingual encoder adjustment experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Comma-separated seeds, overriding the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Seeds processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpora, task data and vocabulary.
    Generate,
    /// Train the aligners and symmetrize.
    Align,
    /// Masked-language-model pretraining of the original encoder.
    Pretrain,
    /// Alignment-based adjustment, one model per seed.
    Adjust,
    /// Fine-tune original, adjusted and continual scenarios.
    Finetune,
    /// Zero-shot evaluation with per-example prediction dumps.
    Evaluate,
    /// Related/unrelated distance histograms.
    Analyze,
    /// Cross-lingual sentence retrieval with a layer sweep.
    Xsr,
    /// Significance tests; with `--a`/`--b` compares two prediction dumps.
    Stats(StatsArgs),
    /// Every stage.
    All,
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, requires = "b")]
    a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Accuracy)]
    metric: MetricArg,
    /// Label id of the outside tag for micro-F1.
    #[arg(long, default_value_t = 0)]
    outside: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    perm_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    MicroF1,
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut config = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seeds) = &g.seeds {
        config.seeds = seeds.clone();
    }
    Ok(config)
}

fn compare_dumps(args: &StatsArgs, a: &PathBuf, b: &PathBuf) -> anyhow::Result<()> {
    let rows_a = load_prediction_dump(a)?;
    let rows_b = load_prediction_dump(b)?;
    let t = StatsReport::from_t_test(
        &correctness_matrix(&rows_a)?.example_means(),
        &correctness_matrix(&rows_b)?.example_means(),
    )?;
    let (pa, gold) = concatenated(&rows_a);
    let (pb, gold_b) = concatenated(&rows_b);
    if gold != gold_b {
        bail!("the two dumps have different gold labels");
    }
    let metric = match args.metric {
        MetricArg::Accuracy => Metric::Accuracy,
        MetricArg::MicroF1 => Metric::MicroF1 { outside: args.outside },
    };
    let perm = permutation_test(&pa, &pb, &gold, metric, args.iterations, args.perm_seed)?;
    let report = serde_json::json!({
        "t_test": t,
        "permutation": StatsReport::from_permutation(&perm),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(&cli.global)?;
    let stage = match &cli.command {
        Command::Config => {
            print!("{}", config.to_json());
            return Ok(());
        }
        Command::Stats(args) => {
            if let (Some(a), Some(b)) = (&args.a, &args.b) {
                return compare_dumps(args, a, b);
            }
            "stats"
        }
        Command::Generate => "generate",
        Command::Align => "align",
        Command::Pretrain => "pretrain",
        Command::Adjust => "adjust",
        Command::Finetune => "finetune",
        Command::Evaluate => "evaluate",
        Command::Analyze => "analyze",
        Command::Xsr => "xsr",
        Command::All => "all",
    };
    config.stages = if stage == "all" { Stages::all(true) } else { Stages::only(stage)? };
    let options = RunOptions {
        jobs: cli.global.jobs,
        verbose: cli.global.verbose,
    };
    let outcome = run_pipeline(&config, &cli.global.out, options)?;
    if let Some(summary) = outcome.summary {
        for (task, t) in &summary.tasks {
            if let Some(target) = t.splits.get("target") {
                for (scenario, m) in target {
                    println!("{task}\t{scenario}\t{:.4}{}", m.mean, m.marks.concat());
                }
            }
            for f in &t.flags {
                println!("{task}\tflag: {f}");
            }
        }
    }
    println!("wrote {}", cli.global.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
