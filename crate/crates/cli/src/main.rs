//! Command-line front end: synthetic data, training, evaluation, extraction
//! and diagnostics.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewtrip::corpus::{generate_synthetic_corpus, parse_corpus, SynthConfig};
use fewtrip::harness::{
    dump_fusion, evaluate_config, extract, gradcheck_episode, load_model, parse_queries, train,
    GradCheckSetup, ModelConfig, Pipeline, QueryInput, TrainConfig,
};
use fewtrip::numeric::GradCheckConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "fewtrip",
    version,
    about = "Few-shot relational triple extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on sampled episodes and print metrics as JSON.
    Eval(ConfigArgs),
    /// Extract one triple per query sentence against a support set.
    Extract(ExtractArgs),
    /// Compare analytic and finite-difference gradients on a tiny episode.
    Gradcheck(GradcheckArgs),
    /// Write the query/prototype attention matrices as CSV.
    DumpFusion(DumpFusionArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    n_relations: usize,
    #[arg(long, default_value_t = 40)]
    sentences_per_relation: usize,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    min_len: usize,
    #[arg(long, default_value_t = 14)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_entity_len: usize,
    #[arg(long, default_value_t = 3)]
    max_entity_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix for relation ids and tokens.
    #[arg(long, default_value = "syn")]
    domain: String,
    /// Keep the first N relations here and write the rest to this path.
    #[arg(long, requires = "split_relations")]
    split_out: Option<PathBuf>,
    #[arg(long, requires = "split_out")]
    split_relations: Option<usize>,
}

/// Overrides for [`TrainConfig`] keys. Field names match the TOML keys.
#[derive(Args, Serialize, Default)]
struct ConfigArgs {
    /// TOML file of `key = value` defaults; flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_way: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_shot: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    queries_per_relation: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_ent: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    precision: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_corpus: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_domain: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    vocab: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_log: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    prototype_norm: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    disable_pfm: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    disable_rge: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    disable_egr: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    unshare_fusion: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    constrain_transitions: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let base = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        let overrides = serde_json::to_value(self).expect("overrides serialize");
        if let (Some(m), Some(o)) = (merged.as_object_mut(), overrides.as_object()) {
            for (k, v) in o {
                m.insert(k.clone(), v.clone());
            }
        }
        let config: TrainConfig =
            serde_json::from_value(merged).map_err(|e| fewtrip::Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Annotated support sentences (JSONL), the same count per relation.
    #[arg(long)]
    support: PathBuf,
    /// Query sentences as JSON lines with a `tokens` array.
    #[arg(long)]
    queries: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    n_way: usize,
    #[arg(long, default_value_t = 1)]
    k_shot: usize,
    /// Longest sentence in the episode.
    #[arg(long, default_value_t = 6)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda_ent: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    disable_pfm: bool,
    #[arg(long)]
    disable_egr: bool,
    #[arg(long)]
    unshare_fusion: bool,
}

#[derive(Args)]
struct DumpFusionArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Annotated support sentences (JSONL).
    #[arg(long)]
    support: PathBuf,
    /// Relation id whose prototypes are attended to.
    #[arg(long)]
    relation: String,
    /// Whitespace-separated query tokens.
    #[arg(long)]
    tokens: String,
    /// Directory for `alpha.csv`, `over_prototypes.csv`, `over_tokens.csv`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Core(fewtrip::Error),
    Usage(String),
    Check(String),
}

impl From<fewtrip::Error> for CliError {
    fn from(e: fewtrip::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<fewtrip::CorpusError> for CliError {
    fn from(e: fewtrip::CorpusError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Check(_) => "gradcheck",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => {
                let text = e.to_string();
                let prefix = format!("{}: ", e.kind());
                text.strip_prefix(&prefix)
                    .map(str::to_string)
                    .unwrap_or(text)
            }
            CliError::Usage(m) | CliError::Check(m) => m.clone(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(fewtrip::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable output");
    s.push('\n');
    s
}

fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        n_relations: args.n_relations,
        sentences_per_relation: args.sentences_per_relation,
        vocab_size: args.vocab_size,
        length_range: (args.min_len, args.max_len),
        entity_length_range: (args.min_entity_len, args.max_entity_len),
        seed: args.seed,
        domain: args.domain.clone(),
    };
    let corpus = generate_synthetic_corpus(&config)?;
    match (&args.split_out, args.split_relations) {
        (Some(rest_path), Some(n)) => {
            let (head, rest) = corpus.split_relations(n)?;
            rest.write_jsonl(rest_path)?;
            write_output(args.out.as_deref(), &head.to_jsonl())
        }
        _ => write_output(args.out.as_deref(), &corpus.to_jsonl()),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    episodes: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
}

fn run_train(args: &ConfigArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let run = train(&config)?;
    let losses = &run.outcome.losses;
    let summary = TrainSummary {
        episodes: losses.len(),
        first_loss: losses.first().copied(),
        final_loss: losses.last().copied(),
        checkpoint: config.checkpoint.clone(),
        vocab: config.vocab_path(),
    };
    write_output(None, &json_line(&summary))
}

fn run_eval(args: &ConfigArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let result = evaluate_config(&config)?;
    write_output(None, &json_line(&result.total.summary()))
}

fn run_extract(args: &ExtractArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let (model, vocab) = load_model(&config)?;
    let pipeline = Pipeline::from_config(&config.model)?;
    let support = parse_corpus(&args.support)?;
    let text = std::fs::read_to_string(&args.queries).map_err(|e| io_error(&args.queries, e))?;
    let queries = parse_queries(&text)?;
    let extractions = extract(&model, &pipeline, &vocab, &support, &queries)?;
    let out: String = extractions.iter().map(json_line).collect();
    write_output(args.out.as_deref(), &out)
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let model = ModelConfig {
        encoder: args
            .encoder
            .clone()
            .unwrap_or_else(|| ModelConfig::default().encoder),
        disable_pfm: args.disable_pfm,
        disable_egr: args.disable_egr,
        unshare_fusion: args.unshare_fusion,
        ..ModelConfig::default()
    };
    let setup = GradCheckSetup {
        n_way: args.n_way,
        k_shot: args.k_shot,
        d: args.d,
        max_tokens: args.max_tokens,
        lambda_ent: args.lambda_ent,
        seed: args.seed,
        model,
    };
    let check = GradCheckConfig {
        step: args.step,
        tolerance: args.tolerance,
        ..GradCheckConfig::default()
    };
    let report = gradcheck_episode(&setup, &check)?;
    write_output(None, &json_line(&report))?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn run_dump_fusion(args: &DumpFusionArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let (model, vocab) = load_model(&config)?;
    let pipeline = Pipeline::from_config(&config.model)?;
    let support = parse_corpus(&args.support)?;
    let query = QueryInput::new(args.tokens.split_whitespace().map(str::to_string).collect())?;
    let dump = dump_fusion(&model, &pipeline, &vocab, &support, &args.relation, &query)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    for (name, csv) in [
        ("alpha.csv", &dump.alpha),
        ("over_prototypes.csv", &dump.over_prototypes),
        ("over_tokens.csv", &dump.over_tokens),
    ] {
        write_output(Some(&args.out_dir.join(name)), csv)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Extract(a) => run_extract(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::DumpFusion(a) => run_dump_fusion(a),
    }
}

/// Errors go to stderr as a single `error: <kind>: <message>` line.
fn report(err: &CliError) -> ExitCode {
    let message = err.message().replace(['\n', '\r'], " ");
    eprintln!("error: {}: {}", err.kind(), message);
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            return report(&CliError::Usage(first));
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
