mod render;
mod repl;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcdst_client::{Client, ClientError};
use tcdst_core::api::{AnalyzeRequest, EvalRequest, GenerateRequest, SchemaSource};
use tcdst_core::tokenizer::Variant;
use tcdst_core::train::{GradCheckConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "tcdst",
    version,
    about = "Train, evaluate and run conditioned dialogue state trackers"
)]
struct Cli {
    /// Base URL of a running tcdst-server. Without it an embedded server is started.
    #[arg(long, global = true)]
    server: Option<String>,
    /// RNG seed; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus and print the report.
    Eval(EvalArgs),
    /// Track a dialogue interactively, one turn at a time.
    Repl(ReplArgs),
    /// Generate a synthetic corpus.
    Generate(GenerateArgs),
    /// Compare analytic and finite-difference gradients of the model loss.
    Gradcheck(GradcheckArgs),
    /// Print the intent/slot contingency table and Cramér's V of a corpus.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Score the gold annotations instead of model predictions.
    #[arg(long)]
    oracle: bool,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// `toy`, `travel` or a schema JSON file.
    #[arg(long, default_value = "toy")]
    schema: String,
    #[arg(long)]
    dialogues: usize,
    /// Intent/slot association strength in [0, 1].
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// JSON gradient-check configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<tcdst_core::Error> for Failure {
    fn from(e: tcdst_core::Error) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// The server may run elsewhere, so paths travel as absolute paths.
fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    Ok(std::path::absolute(p)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

async fn train(client: &Client, args: TrainArgs, seed: Option<u64>) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(p) = args.train {
        config.train_corpus = p;
    }
    if let Some(p) = args.valid {
        config.valid_corpus = Some(p);
    }
    if let Some(p) = args.out {
        config.checkpoint = p;
    }
    for p in [&mut config.train_corpus, &mut config.checkpoint] {
        if !p.as_os_str().is_empty() {
            *p = absolute(p)?;
        }
    }
    for p in [
        &mut config.valid_corpus,
        &mut config.log,
        &mut config.resume,
    ]
    .into_iter()
    .flatten()
    {
        *p = absolute(p)?;
    }
    let summary = client.train(&config).await?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    print_json(&summary);
    Ok(())
}

async fn eval(client: &Client, args: EvalArgs) -> CmdResult {
    let req = EvalRequest {
        checkpoint: absolute(&args.checkpoint)?,
        corpus: absolute(&args.corpus)?,
        oracle: args.oracle,
    };
    let report = client.eval(&req).await?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print_json(&report);
    Ok(())
}

async fn generate(client: &Client, args: GenerateArgs, seed: Option<u64>) -> CmdResult {
    let schema = match SchemaSource::parse(&args.schema) {
        SchemaSource::Path(p) => SchemaSource::Path(absolute(&p)?),
        s => s,
    };
    let out = absolute(&args.out)?;
    let req = GenerateRequest {
        schema,
        dialogues: args.dialogues,
        rho: args.rho,
        seed: seed.unwrap_or(0),
        out: Some(out.clone()),
        generator: None,
    };
    let resp = client.generate(&req).await?;
    println!(
        "wrote {} dialogues ({} turns) to {}",
        resp.dialogues,
        resp.turns,
        out.display()
    );
    println!("cramers_v: {}", render::optional(resp.cramers_v));
    Ok(())
}

async fn gradcheck(client: &Client, args: GradcheckArgs, seed: Option<u64>) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(tcdst_core::Error::from)?
        }
        None => GradCheckConfig::default(),
    };
    if let Some(v) = args.variant {
        config.variant = v;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let report = client.gradcheck(&config).await?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    println!(
        "max relative error {:.3e} over {} coordinates (tolerance {:.0e}, worst {})",
        report.max_rel_error,
        report.coords_checked,
        report.tolerance,
        report.worst_param.as_deref().unwrap_or("-"),
    );
    if report.passed {
        println!("passed");
        Ok(())
    } else {
        Err(Failure::runtime("gradient check failed"))
    }
}

async fn analyze(client: &Client, args: AnalyzeArgs) -> CmdResult {
    let report = client
        .analyze(&AnalyzeRequest {
            corpus: absolute(&args.corpus)?,
        })
        .await?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    print!("{}", render::analysis(&report));
    Ok(())
}

async fn run(cli: Cli) -> CmdResult {
    // Held for the whole command so an embedded server outlives the requests.
    let (client, _server) = match &cli.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let server = tcdst_server::start("127.0.0.1:0").await?;
            (Client::new(server.url()), Some(server))
        }
    };
    match cli.command {
        Command::Train(a) => train(&client, a, cli.seed).await,
        Command::Eval(a) => eval(&client, a).await,
        Command::Repl(a) => repl::run(&client, &absolute(&a.checkpoint)?).await,
        Command::Generate(a) => generate(&client, a, cli.seed).await,
        Command::Gradcheck(a) => gradcheck(&client, a, cli.seed).await,
        Command::Analyze(a) => analyze(&client, a).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
