use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use annotator_core::config::{load_price_table, FileConfig, ReviewMode};
use annotator_core::consensus::LabelSchema;
use annotator_core::ledger::{estimate_cost, CostLedger, Price};
use annotator_core::meta::llm::{HttpChatClient, LlmEndpointConfig, LlmSession};
use annotator_core::meta::selection::{search_candidates, select_models, CandidateSources, HubIndex, LocalCatalog};
use annotator_core::pipeline::record::{read_records, write_csv};
use annotator_core::pipeline::report::{gold_map, Report};
use annotator_core::pipeline::run::RunDir;
use annotator_core::pipeline::service;
use annotator_core::pipeline::sweep::{run_cell_from_config, sweep, SyntheticScenario};
use annotator_core::pipeline::{checkpoint, ingest, Format, Job};
use annotator_core::{Error, Result};

#[derive(Parser)]
#[command(name = "annotator", version, about = "Consensus annotation with expert review and continual refinement")]
struct Cli {
    /// -v for info, -vv for debug logging on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank candidate specialist models for a task with the LLM.
    Select(SelectArgs),
    /// Label a dataset.
    Annotate(AnnotateArgs),
    /// Summarize a run directory.
    Report(ReportArgs),
    /// Run a k x beta grid.
    Sweep(SweepArgs),
    /// Estimate the cost of labeling a dataset with the LLM alone.
    Cost(CostArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum OutFormat {
    Text,
    Json,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    task: String,
    /// Comma-separated labels for tasks without a built-in label set.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    hub: Option<String>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    max_candidates: usize,
    /// Config file providing the [llm] section and prices.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name when the LLM comes from LLM_BASE_URL / LLM_API_KEY.
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Where to write the selection as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue the run checkpointed in --out-dir.
    #[arg(long)]
    resume: bool,
    /// Serve the status and review API, e.g. `:8080` or `127.0.0.1:0`.
    #[arg(long)]
    serve: Option<String>,
    #[arg(long)]
    review_mode: Option<String>,
    /// dotted.key=value override, repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Price table file (provider -> input/output USD per 1M tokens).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Input format; inferred from the extension by default.
    #[arg(long)]
    input_format: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Stop after this many samples in total (the run stays resumable).
    #[arg(long)]
    limit: Option<usize>,
    /// Also write outputs.csv.
    #[arg(long)]
    csv: bool,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Dataset with gold labels to score against.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5])]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [500usize, 1000, 2000, 3000])]
    beta: Vec<usize>,
    /// Config with at least max(k) backends and an [llm] section. Without
    /// it a seeded synthetic scenario is used.
    #[arg(long, requires = "input")]
    config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    input: Option<PathBuf>,
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Synthetic scenario size.
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, allow_hyphen_values = true)]
    n: i64,
    #[arg(long = "in", allow_hyphen_values = true)]
    input_tokens: i64,
    #[arg(long = "out", allow_hyphen_values = true)]
    output_tokens: i64,
    /// Input and output USD per 1M tokens, e.g. `15,60`.
    #[arg(long)]
    price: String,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_)
        | Error::Config(_)
        | Error::Ingest { .. }
        | Error::SelectionSourceUnavailable(_)
        | Error::SelectionParseError(_)
        | Error::InsufficientCandidates { .. }
        | Error::Template { .. }
        | Error::DuplicateBackend(_)
        | Error::LabelMap { .. }
        | Error::Checksum(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Report(a) => cmd_report(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cost(a) => cmd_cost(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::invalid("--k must be at least 1"));
    }
    let file = a.config.as_deref().map(|p| FileConfig::load(p, &[])).transpose()?;
    let schema = match (&a.labels, &file) {
        (Some(labels), _) => LabelSchema::new(a.task.clone(), labels.iter().cloned())?,
        (None, _) => LabelSchema::preset(&a.task)
            .ok_or_else(|| Error::Config(format!("task `{}` has no built-in labels; pass --labels", a.task)))?,
    };
    let mut sources = file.as_ref().map(FileConfig::candidate_sources).unwrap_or_default();
    if let Some(c) = &a.catalog {
        sources.catalog = Some(LocalCatalog::new(c));
    }
    if let Some(h) = &a.hub {
        sources.hub = Some(HubIndex::new(h));
    }
    if sources.hub.is_none() && sources.catalog.is_none() {
        return Err(Error::SelectionSourceUnavailable("pass --catalog or --hub".into()));
    }
    let candidates = search_candidates(&schema, &sources as &CandidateSources, a.max_candidates)?;

    let ledger = match &file {
        Some(f) => f.ledger()?,
        None => CostLedger::new(),
    }
    .shared();
    let session = match file.as_ref().map(|f| f.build_llm(&[], &schema, ledger.clone())).transpose()?.flatten() {
        Some(s) => s,
        None => LlmSession::new(
            Arc::new(HttpChatClient::new(LlmEndpointConfig::from_env(a.model.clone()))),
            a.model.clone(),
            a.model.clone(),
            ledger.clone(),
        ),
    };
    let picked = select_models(&schema, &candidates, &session, a.k)?;
    let doc = json!({
        "task": schema.task_name(),
        "labels": schema.labels(),
        "models": picked,
        "ledger": ledger.lock().expect("ledger").summary(),
    });
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&doc)?)?;
    }
    match a.format {
        OutFormat::Json => print_json(&doc),
        OutFormat::Text => {
            for m in &picked {
                println!("{}", m.model_id);
            }
        }
    }
    Ok(())
}

fn effective_config(a: &AnnotateArgs) -> Result<FileConfig> {
    let mut overrides = a.overrides.clone();
    if let Some(mode) = &a.review_mode {
        let mode: ReviewMode = mode.parse()?;
        overrides.push(format!("run.review_mode=\"{mode}\""));
    }
    let mut cfg = FileConfig::load(&a.config, &overrides)?;
    if let Some(p) = &a.prices {
        for (provider, price) in load_price_table(p)? {
            cfg.prices.insert(
                provider,
                annotator_core::config::PriceConfig {
                    input_per_1m_usd: price.input_per_1m_micros as f64 / 1e6,
                    output_per_1m_usd: price.output_per_1m_micros as f64 / 1e6,
                },
            );
        }
    }
    Ok(cfg)
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let cfg = effective_config(&a)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let schema = cfg.schema()?;
    let format = a.input_format.as_deref().map(str::parse::<Format>).transpose()?;
    let samples = ingest(&a.input, format, &schema)?;
    if cfg.run.review_mode.needs_human() && a.serve.is_none() {
        return Err(Error::Config(format!(
            "review_mode = \"{}\" needs --serve so reviewers can answer",
            cfg.run.review_mode
        )));
    }

    let mut job = Job::open(&cfg, samples, &a.out_dir, a.resume)?;
    let _server = match &a.serve {
        Some(addr) => {
            let handle = service::serve(addr, job.service_state())?;
            eprintln!("serving on {}", handle.url());
            Some(handle)
        }
        None => None,
    };
    let outcome = job.run(a.limit);
    if a.csv {
        write_csv(&job.dir.root.join("outputs.csv"), &read_records(&job.dir.outputs())?)?;
    }
    let report = outcome?;
    match a.format {
        OutFormat::Json => print_json(&report),
        OutFormat::Text => print!("{}", report.render_text()),
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let dir = RunDir::new(&a.run_dir);
    if !RunDir::exists(&dir.root) {
        return Err(Error::Config(format!("{} holds no run", dir.root.display())));
    }
    let state = checkpoint::load(&dir.checkpoint())?;
    let records = read_records(&dir.outputs())?;
    let gold: HashMap<String, String> = match &a.gold {
        Some(p) => gold_map(&ingest(p, None, &state.schema)?, &state.schema),
        None => HashMap::new(),
    };
    let report = Report::build(&state, &records, &gold);
    match a.format {
        OutFormat::Json => print_json(&report),
        OutFormat::Text => print!("{}", report.render_text()),
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (cfg, samples) = match (&a.config, &a.input) {
        (Some(c), Some(i)) => {
            let cfg = FileConfig::load(c, &a.overrides)?;
            let samples = ingest(i, None, &cfg.schema()?)?;
            (cfg, samples)
        }
        _ => {
            let max_k = a.k.iter().copied().max().unwrap_or(0);
            let scenario = SyntheticScenario {
                samples: a.samples,
                seed: a.seed,
                backends: max_k.max(1),
                ..Default::default()
            };
            let (mut cfg, samples) = scenario.build();
            if !a.overrides.is_empty() {
                let mut doc = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
                for o in &a.overrides {
                    annotator_core::config::apply_override(&mut doc, o)?;
                }
                cfg = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
            }
            (cfg, samples)
        }
    };
    let table = sweep(&a.k, &a.beta, |k, beta| run_cell_from_config(&cfg, &samples, k, beta))?;
    match a.format {
        OutFormat::Json => print_json(&table),
        OutFormat::Text => println!("{}", table.render_text()),
    }
    Ok(())
}

fn cmd_cost(a: CostArgs) -> Result<()> {
    let price = Price::parse_pair(&a.price)?;
    let cost = estimate_cost(a.n, a.input_tokens, a.output_tokens, price)?;
    match a.format {
        OutFormat::Json => print_json(&json!({
            "samples": a.n,
            "input_tokens_per_sample": a.input_tokens,
            "output_tokens_per_sample": a.output_tokens,
            "input_per_1m_usd": price.input_per_1m_micros as f64 / 1e6,
            "output_per_1m_usd": price.output_per_1m_micros as f64 / 1e6,
            "cost_usd": cost.to_string(),
        })),
        OutFormat::Text => println!("{cost}"),
    }
    Ok(())
}
