use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use wise_core::harness::{
    aggregate_transcripts, compute_metrics, load_dataset, load_transcripts, report, run_batch, run_simulation,
    AggregationOptions, Aggregator, FittedModelFile, HarnessError, MetricsReport, RunConfig, RunOptions,
    SimulationConfig,
};

#[derive(Parser)]
#[command(name = "wise", version, about = "Weighted multi-agent debate runner and answer aggregator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Debate every problem in the dataset and store one transcript per problem.
    Run(RunArgs),
    /// Aggregate stored transcripts and score them against the dataset.
    Aggregate(AggregateArgs),
    /// Score all aggregators on a synthetic crowd with known confusions.
    Simulate(SimulateArgs),
    /// Render tables and SVG charts from metrics and fitted-model files.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the dataset path from the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Maximum debate rounds.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Skip problems that already have a transcript.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transcript directory; defaults to the config's output directory.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<Aggregator>,
    /// Match weights to raw rather than decoded answers.
    #[arg(long)]
    raw_answers: bool,
    /// Fit one model on counts pooled over all rounds.
    #[arg(long)]
    pooled_counts: bool,
    /// Output directory; defaults to the transcript directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Config whose [simulate] section describes the crowd.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Comma-separated solver accuracies (confusion diagonals).
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.7,0.6")]
    solver_diagonals: Vec<f64>,
    /// Comma-separated reflector accuracies.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.8")]
    reflector_diagonals: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics files written by `aggregate`.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Fitted-model files for the calibration tables.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    s.parse()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    wise_core::harness::run::write_atomic(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn cmd_run(args: RunArgs) -> Result<u8, HarnessError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(r) = args.rounds {
        config.policy.max_rounds = r;
    }
    if let Some(p) = args.parallelism {
        config.policy.parallelism = p;
    }
    if let Some(s) = args.seed {
        config.output.seed = s;
    }
    config.policy.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let dataset = args.dataset.unwrap_or(config.dataset_path()?.to_path_buf());
    let problems = load_dataset(&dataset)?;
    let roster = config.roster()?;
    for p in &problems {
        roster
            .validate(!p.image_refs.is_empty())
            .map_err(|e| HarnessError::Config(format!("{}: {e}", p.id)))?;
    }
    let gateway = config.build_gateway(&roster)?;
    let opts = RunOptions {
        out_dir: args.out.unwrap_or(config.output.dir.clone()),
        resume: args.resume || config.output.resume,
    };
    let summary = run_batch(&problems, &roster, &config.policy, &config.prompts, &gateway, &opts)?;
    println!(
        "{} problems: {} debated, {} resumed, {} failed, {} backend calls",
        summary.total,
        summary.completed,
        summary.skipped,
        summary.failures.len(),
        summary.backend_calls
    );
    for f in &summary.failures {
        eprintln!("failed: {}: {}", f.problem_id, f.reason);
    }
    Ok(summary.exit_code() as u8)
}

fn cmd_aggregate(args: AggregateArgs) -> Result<u8, HarnessError> {
    let config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let transcripts_dir = match (&args.transcripts, &args.config) {
        (Some(d), _) => d.clone(),
        (None, Some(_)) => config.output.dir.clone(),
        (None, None) => return Err(HarnessError::Config("pass --transcripts or --config".into())),
    };
    let dataset = match &args.dataset {
        Some(d) => d.clone(),
        None => config.dataset_path()?.to_path_buf(),
    };
    let problems = load_dataset(&dataset)?;
    let mut transcripts = load_transcripts(&transcripts_dir)?;
    let order: std::collections::HashMap<&str, usize> =
        problems.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    transcripts.sort_by_key(|t| order.get(t.problem_id.as_str()).copied().unwrap_or(usize::MAX));

    let opts = AggregationOptions {
        aggregator: args.aggregator.unwrap_or(config.aggregation.aggregator),
        raw_answers: args.raw_answers || config.aggregation.raw_answers,
        pooled_counts: args.pooled_counts || config.aggregation.pooled_counts,
        em: config.aggregation.em,
    };
    let judge_gateway = match (&config.judge.model, &config.roster) {
        (Some(_), Some(roster)) => Some(Arc::new(config.build_gateway(roster)?)),
        _ => None,
    };
    let judge = config.judge_config(judge_gateway);
    let mut result = aggregate_transcripts(&transcripts, &opts, &judge)?;
    let metrics = compute_metrics(
        &transcripts,
        &mut result.decisions,
        &problems,
        Some(opts.aggregator.name()),
        &judge,
    )?;

    let out = args.out.unwrap_or(transcripts_dir);
    create_dir(&out)?;
    let name = opts.aggregator.name();
    write_json(&out.join(format!("aggregation-{name}.json")), &result)?;
    write_json(&out.join(format!("metrics-{name}.json")), &metrics)?;
    if let Some(model) = &result.fitted {
        write_json(&out.join(format!("model-{name}.json")), model)?;
    }
    print!("{}", report::accuracy_table(std::slice::from_ref(&metrics)));
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?
            .simulate
            .ok_or_else(|| HarnessError::Config(format!("{} has no [simulate] section", p.display())))?,
        None => SimulationConfig::from_diagonals(
            args.classes,
            args.items,
            &args.solver_diagonals,
            &args.reflector_diagonals,
            0,
        ),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let r = run_simulation(&cfg)?;
    println!(
        "{} items, K={}, {} solvers, {} reflectors, seed {}",
        r.num_items, r.num_classes, r.num_solvers, r.num_reflectors, r.seed
    );
    for (name, acc) in &r.accuracy {
        println!("{name:<10} {acc:.4}");
    }
    println!("wise-ds MAP {:.4}", r.wise_ds_map_accuracy);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    println!("solver recovery (max row L1): {}", fmt(&r.solver_recovery_l1));
    println!("reflector recovery (max row L1): {}", fmt(&r.reflector_recovery_l1));
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("simulation.json"), &r)?;
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<u8, HarnessError> {
    let metrics = args
        .metrics
        .iter()
        .map(|p| read_json::<MetricsReport>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let models = args
        .models
        .iter()
        .map(|p| read_json::<FittedModelFile>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let files = report::build_report(&metrics, &models);
    create_dir(&args.out)?;
    let write = |name: &str, text: &str| {
        let path = args.out.join(name);
        wise_core::harness::run::write_atomic(&path, text.as_bytes())
    };
    write("report.txt", &files.text)?;
    write("accuracy.svg", &files.accuracy_svg)?;
    write("rounds.svg", &files.rounds_svg)?;
    print!("{}", files.text);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
