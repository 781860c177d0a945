use std::collections::BTreeMap;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use convsim::annotation::service::{self, AppState, Quiz, QuizQuestion, ServiceConfig};
use convsim::annotation::{build_tasks, ComparisonTask, JudgmentStore};
use convsim::backend::{
    ChatBackend, RecordingBackend, RemoteBackend, RemoteConfig, RetryPolicy, ScriptBook,
};
use convsim::config::SimulationConfig;
use convsim::corpus::{
    filter_max_unanswered, load_contexts, load_dataset_with_report, Dataset, LoadOptions,
    OffsetUnit,
};
use convsim::metrics::{self, Comparison, MetricsReport};
use convsim::simulator::{self, Termination};

#[derive(Parser)]
#[command(
    name = "convsim",
    version,
    about = "Simulate and evaluate teacher/student conversational QA"
)]
struct Cli {
    /// Unit of answer offsets in input dataset files.
    #[arg(long, global = true, value_enum, default_value = "char")]
    offset_unit: Unit,
    /// Drop invalid conversations on load instead of failing.
    #[arg(long, global = true)]
    skip_invalid: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Char,
    Token,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated conversations over topic contexts.
    Simulate(SimulateArgs),
    /// Re-check every answer span of a dataset against its section text.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Also flag spans longer than this many whitespace tokens.
        #[arg(long)]
        max_answer_tokens: Option<usize>,
    },
    /// Coverage, conversation-flow and dataset statistics.
    Eval(EvalArgs),
    /// Token-level precision, recall, F1 and exact match of a prediction file.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Same / Overlap / Different breakdown of two answer sets.
    PairStats {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve the pairwise annotation service.
    ServeAnnotation(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// `remote`, or `scripted:<script book file>`.
    #[arg(long, default_value = "remote")]
    backend: String,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    patience: Option<u32>,
    /// Simulation settings as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Re-simulate contexts that already have a stored result.
    #[arg(long)]
    force: bool,
    /// Save every backend reply as a script book for replay.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Coverage,
    Flow,
    Stats,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(value_enum)]
    kind: EvalKind,
    #[arg(long)]
    dataset: PathBuf,
    /// Second dataset; adds a Welch t-test.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Drop conversations with more than this many unanswered questions.
    #[arg(long)]
    max_unanswered: Option<usize>,
    /// Write a histogram of per-conversation values as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    quiz: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Holds the built tasks and the judgment log.
    #[arg(long, default_value = "annotation-state")]
    state_dir: PathBuf,
    /// Environment variable holding the admin token for report and export.
    #[arg(long, default_value = "CONVSIM_ADMIN_TOKEN")]
    admin_token_env: String,
    #[arg(long, default_value_t = 1)]
    onboarding_attempts: usize,
}

/// Failures that end the process with status 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = LoadOptions {
        offset_unit: match cli.offset_unit {
            Unit::Char => OffsetUnit::Char,
            Unit::Token => OffsetUnit::Token,
        },
        skip_invalid: cli.skip_invalid,
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Validate {
            dataset,
            max_answer_tokens,
        } => validate(&dataset, max_answer_tokens, &opts),
        Command::Eval(args) => eval(args, &opts),
        Command::Score {
            dataset,
            predictions,
            json,
        } => score(&dataset, &predictions, json, &opts),
        Command::PairStats { a, b, json } => pair_stats(&a, &b, json, &opts),
        Command::ServeAnnotation(args) => serve(args, &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn usage_error(message: &str) -> ! {
    use clap::CommandFactory;
    Cli::command()
        .error(clap::error::ErrorKind::InvalidValue, message)
        .exit()
}

fn load(path: &Path, opts: &LoadOptions) -> Result<Dataset, Failure> {
    let report = load_dataset_with_report(path, opts)?;
    for rejected in &report.rejected {
        eprintln!("skipped: {rejected}");
    }
    Ok(report.dataset)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn build_backend(args: &SimulateArgs) -> Result<Arc<dyn ChatBackend>, Failure> {
    if args.backend == "remote" {
        let defaults = RemoteConfig::default();
        let config = RemoteConfig {
            endpoint: args.endpoint.clone().unwrap_or(defaults.endpoint),
            model: args.model.clone().unwrap_or(defaults.model),
            api_key_env: args.api_key_env.clone().unwrap_or(defaults.api_key_env),
            timeout: Duration::from_secs(args.timeout_secs),
        };
        return Ok(Arc::new(RemoteBackend::new(
            config,
            RetryPolicy::default(),
        )?));
    }
    match args.backend.strip_prefix("scripted:") {
        Some(path) if !path.is_empty() => Ok(Arc::new(ScriptBook::load(Path::new(path))?)),
        _ => usage_error("--backend must be `remote` or `scripted:<file>`"),
    }
}

fn simulate(args: SimulateArgs) -> CliResult {
    if args.parallel == 0 {
        usage_error("--parallel must be at least 1");
    }
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<SimulationConfig>(&fs::read_to_string(path)?)
            .map_err(|e| Failure(format!("{}: {e}", path.display())))?,
        None => SimulationConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.max_turns {
        cfg.max_turns = n;
    }
    if let Some(p) = args.patience {
        cfg.teacher.patience = p;
    }
    cfg.validate()?;

    let contexts = load_contexts(&args.contexts)?;
    let inner = build_backend(&args)?;
    let recorder = args
        .record
        .as_ref()
        .map(|_| Arc::new(RecordingBackend::new(inner.clone())));
    let backend: &dyn ChatBackend = match &recorder {
        Some(r) => r.as_ref(),
        None => inner.as_ref(),
    };
    let outcome = simulator::run_batch_persisted(
        &contexts,
        backend,
        &cfg,
        args.parallel,
        &args.out,
        args.force,
    )?;
    if let (Some(path), Some(r)) = (&args.record, &recorder) {
        r.script_book().save(path)?;
    }

    let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
    for r in &outcome.reports {
        *terminations
            .entry(format!("{:?}", r.termination))
            .or_default() += 1;
    }
    println!(
        "contexts {}  reused {}  conversations {}  questions {}",
        contexts.len(),
        outcome.reused.len(),
        outcome.dataset.conversations.len(),
        outcome.dataset.n_questions()
    );
    for (t, n) in &terminations {
        println!("  {t:<22} {n}");
    }
    println!("output: {}", args.out.display());
    let failed: Vec<_> = outcome
        .reports
        .iter()
        .filter(|r| r.termination == Termination::BackendFailure)
        .collect();
    if !failed.is_empty() {
        for r in &failed {
            eprintln!(
                "backend failure in {}: {}",
                r.conversation.id(),
                r.error.as_deref().unwrap_or("unknown")
            );
        }
        return Err(Failure(format!(
            "{} context(s) ended in a backend failure; rerun to resume",
            failed.len()
        )));
    }
    Ok(())
}

fn validate(path: &Path, max_answer_tokens: Option<usize>, opts: &LoadOptions) -> CliResult {
    let ds = load(path, opts)?;
    let violations = metrics::audit_dataset(&ds, max_answer_tokens);
    for v in &violations {
        println!("{}: {}", v.question_id, v.message);
    }
    println!(
        "{} conversations, {} questions, {} violations",
        ds.conversations.len(),
        ds.n_questions(),
        violations.len()
    );
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure(format!("{} span violation(s)", violations.len())))
    }
}

fn per_conversation(kind: EvalKind, ds: &Dataset) -> Vec<f64> {
    match kind {
        EvalKind::Coverage => metrics::coverage_report(ds)
            .per_conversation
            .iter()
            .map(|e| e.coverage)
            .collect(),
        EvalKind::Flow => metrics::flow_report(ds)
            .per_conversation
            .iter()
            .map(|e| e.tau)
            .collect(),
        EvalKind::Stats => ds
            .turns()
            .filter(|(_, t)| t.answer.is_found())
            .map(|(_, t)| convsim::text::whitespace_tokens(&t.answer.serialized_text()) as f64)
            .collect(),
    }
}

fn eval(args: EvalArgs, opts: &LoadOptions) -> CliResult {
    if args.parallel == 0 || args.bins == 0 {
        usage_error("--parallel and --bins must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel)
        .build_global()?;
    let prepare = |path: &Path| -> Result<Dataset, Failure> {
        let ds = load(path, opts)?;
        Ok(match args.max_unanswered {
            Some(limit) => filter_max_unanswered(&ds, limit),
            None => ds,
        })
    };
    let ds = prepare(&args.dataset)?;
    let mut report = MetricsReport {
        dataset: ds.name.clone(),
        ..Default::default()
    };
    let metric = match args.kind {
        EvalKind::Coverage => {
            report.coverage = Some(metrics::coverage_report(&ds));
            "coverage"
        }
        EvalKind::Flow => {
            report.flow = Some(metrics::flow_report(&ds));
            "krcc"
        }
        EvalKind::Stats => {
            report.stats = Some(metrics::dataset_stats(&ds));
            "answer_length"
        }
    };
    let values = per_conversation(args.kind, &ds);
    if let Some(other_path) = &args.compare {
        let other = prepare(other_path)?;
        let other_values = per_conversation(args.kind, &other);
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        report.comparison = Some(Comparison {
            other: other.name.clone(),
            metric: metric.into(),
            mean: mean(&values),
            other_mean: mean(&other_values),
            test: metrics::welch_t_test(&values, &other_values),
        });
    }
    if let Some(path) = &args.histogram {
        let (lo, hi) = match args.kind {
            EvalKind::Coverage => (0.0, 1.0),
            EvalKind::Flow => (-1.0, 1.0),
            EvalKind::Stats => (0.0, values.iter().copied().fold(1.0, f64::max)),
        };
        metrics::write_histogram_csv(&metrics::histogram(&values, args.bins, lo, hi), path)?;
    }
    if args.json {
        print_json(&report);
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

fn score(dataset: &Path, predictions: &Path, json: bool, opts: &LoadOptions) -> CliResult {
    let ds = load(dataset, opts)?;
    let preds = metrics::read_predictions(predictions)?;
    let table = metrics::score_predictions(&ds, &preds)?;
    if json {
        print_json(&table);
    } else {
        print!("{}", table.render());
        for id in &table.missing {
            eprintln!("missing prediction: {id}");
        }
    }
    Ok(())
}

fn pair_stats(a: &Path, b: &Path, json: bool, opts: &LoadOptions) -> CliResult {
    let stats = metrics::pair_stats(&load(a, opts)?, &load(b, opts)?)?;
    if json {
        print_json(&stats);
    } else {
        print!("{}", stats.render());
    }
    Ok(())
}

fn load_quiz(path: &Path) -> Result<Quiz, Failure> {
    let raw = fs::read_to_string(path)?;
    if let Ok(quiz) = serde_json::from_str::<Quiz>(&raw) {
        return Ok(quiz);
    }
    let questions: Vec<QuizQuestion> =
        serde_json::from_str(&raw).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(Quiz { questions })
}

fn serve(args: ServeArgs, opts: &LoadOptions) -> CliResult {
    let quiz = load_quiz(&args.quiz)?;
    if quiz.questions.is_empty() {
        return Err(Failure("the onboarding quiz has no questions".into()));
    }
    fs::create_dir_all(&args.state_dir)?;
    let tasks_path = args.state_dir.join("tasks.json");
    let tasks: Vec<ComparisonTask> = if tasks_path.exists() {
        serde_json::from_str(&fs::read_to_string(&tasks_path)?)?
    } else {
        let a = load(&args.a, opts)?;
        let b = load(&args.b, opts)?;
        let tasks = build_tasks(&a, &b, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
        fs::write(&tasks_path, serde_json::to_string_pretty(&tasks)?)?;
        tasks
    };
    let store = JudgmentStore::open(&args.state_dir.join("judgments.jsonl"))?;
    let admin_token = std::env::var(&args.admin_token_env).unwrap_or_default();
    if admin_token.is_empty() {
        log::warn!(
            "{} is not set; report and export are disabled",
            args.admin_token_env
        );
    }
    println!(
        "{} tasks; state in {}",
        tasks.len(),
        args.state_dir.display()
    );
    let state = AppState::new(
        tasks,
        quiz,
        store,
        ServiceConfig {
            admin_token,
            onboarding_attempts: args.onboarding_attempts,
        },
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state, SocketAddr::new(args.host, args.port)))?;
    Ok(())
}
