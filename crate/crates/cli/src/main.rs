use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tracing::info;

use chatscope_client::ChatscopeClient;
use chatscope_core::fixture::{self, FixtureSpec};
use chatscope_core::pipeline::{Project, StageName, StageOptions, StageRequest};
use chatscope_core::sampler::{AnnotationRecord, ReviewVerdict};

const DEFAULT_SERVICE: &str = "http://127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "chatscope", version, about = "Chat-recording moderation audit pipeline")]
struct Cli {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    /// Config file; defaults to <project>/chatscope.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for image stages; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overrides the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run against a chatscope service instead of locally.
    #[arg(long, global = true)]
    remote: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract, crop and deduplicate frames.
    Ingest,
    /// Write image variants and background-suppressed frames.
    Variants {
        /// Pick per-game suppression thresholds against ground-truth frames.
        #[arg(long)]
        search_thresholds: bool,
    },
    /// Run the OCR cascade.
    Ocr,
    /// Parse and deduplicate OCR lines into raw transcripts.
    Transcribe,
    /// Pseudonymize speakers and redact PII.
    Anonymize,
    /// Detect masked spans and build user profiles.
    Modevents,
    /// Split transcripts into conversations.
    Chunk,
    /// Label conversations with the LLM pre-filter.
    Classify,
    /// Score OCR, transcripts and the classifier against ground truth.
    Eval,
    /// Build review sampling pools.
    Sample,
    /// Run every stage in order.
    Run {
        #[arg(long)]
        search_thresholds: bool,
    },
    /// Serve the review API and remote stage execution.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Talk to a running review service.
    Review {
        #[command(subcommand)]
        action: ReviewCommand,
    },
    /// Serve a deterministic stand-in for the classifier endpoint.
    StubLlm {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: SocketAddr,
    },
    /// Write a synthetic demo project.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct FixtureArgs {
    /// Target directory; must be empty or absent.
    dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    #[arg(long, default_value_t = 60)]
    messages: usize,
    #[arg(long, default_value = "http://127.0.0.1:8089/v1/chat/completions")]
    llm_url: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerdictArg {
    Tp,
    Fp,
}

#[derive(Subcommand)]
enum ReviewCommand {
    Tracks,
    /// Show the current draw for a track.
    Next {
        #[arg(long)]
        track: String,
    },
    /// Print one conversation.
    Show { conv_id: String },
    /// Submit an annotation.
    Annotate {
        #[arg(long)]
        track: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        annotator: String,
        /// Comma-separated thematic codes.
        #[arg(long, value_delimiter = ',')]
        codes: Vec<String>,
        #[arg(long)]
        not_interpretable: bool,
        #[arg(long, value_enum)]
        verdict: Option<VerdictArg>,
    },
    Saturation,
    Timeline { pseudonym: String },
}

fn stage_of(cmd: &Command) -> Option<(StageName, StageOptions)> {
    let plain = StageOptions::default();
    Some(match cmd {
        Command::Ingest => (StageName::Ingest, plain),
        Command::Variants { search_thresholds } => (
            StageName::Variants,
            StageOptions {
                search_thresholds: *search_thresholds,
            },
        ),
        Command::Ocr => (StageName::Ocr, plain),
        Command::Transcribe => (StageName::Transcribe, plain),
        Command::Anonymize => (StageName::Anonymize, plain),
        Command::Modevents => (StageName::Modevents, plain),
        Command::Chunk => (StageName::Chunk, plain),
        Command::Classify => (StageName::Classify, plain),
        Command::Eval => (StageName::Eval, plain),
        Command::Sample => (StageName::Sample, plain),
        _ => return None,
    })
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn print_json<T: Serialize>(value: &T) -> AnyResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn runtime() -> AnyResult<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn open_project(cli: &Cli) -> AnyResult<Project> {
    let mut project = Project::open(&cli.project, cli.config.as_deref(), cli.jobs)?;
    if let Some(seed) = cli.seed {
        project.config_mut().sampling.seed = seed;
    }
    Ok(project)
}

fn run(cli: Cli) -> AnyResult<()> {
    if let Some((stage, options)) = stage_of(&cli.command) {
        let manifest = match &cli.remote {
            Some(url) => {
                let client = ChatscopeClient::new(url.clone())?;
                let req = StageRequest { options, seed: cli.seed };
                runtime()?.block_on(client.run_stage(stage, &req))?
            }
            None => open_project(&cli)?.run(stage, options)?,
        };
        return print_json(&manifest);
    }
    match &cli.command {
        Command::Run { search_thresholds } => {
            let opts = StageOptions {
                search_thresholds: *search_thresholds,
            };
            match &cli.remote {
                Some(url) => {
                    let client = ChatscopeClient::new(url.clone())?;
                    let req = StageRequest { options: opts, seed: cli.seed };
                    let rt = runtime()?;
                    for stage in StageName::ALL {
                        let m = rt.block_on(client.run_stage(stage, &req))?;
                        info!(%stage, files = m.outputs.len(), "done");
                    }
                }
                None => {
                    let project = open_project(&cli)?;
                    for m in project.run_all(opts)? {
                        info!(stage = %m.stage, files = m.outputs.len(), "done");
                    }
                }
            }
            Ok(())
        }
        Command::Serve { addr } => {
            let project = open_project(&cli)?;
            project.require_stage(StageName::Sample)?;
            let state = chatscope_server::AppState::open(&cli.project, cli.config.as_deref(), cli.jobs)?;
            let rt = runtime()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                chatscope_server::serve(listener, chatscope_server::router(Arc::new(state))).await
            })?;
            Ok(())
        }
        Command::StubLlm { addr } => {
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                chatscope_server::serve(listener, chatscope_server::stub_llm_router()).await
            })?;
            Ok(())
        }
        Command::Fixture(a) => {
            let spec = FixtureSpec {
                seed: cli.seed.unwrap_or(FixtureSpec::default().seed),
                sessions: a.sessions,
                messages: a.messages,
                llm_url: a.llm_url.clone(),
            };
            print_json(&fixture::write_fixture(&a.dir, &spec)?)
        }
        Command::Review { action } => review(cli.remote.as_deref().unwrap_or(DEFAULT_SERVICE), action),
        _ => unreachable!("stage commands handled above"),
    }
}

fn review(url: &str, action: &ReviewCommand) -> AnyResult<()> {
    let client = ChatscopeClient::new(url)?;
    let rt = runtime()?;
    match action {
        ReviewCommand::Tracks => print_json(&rt.block_on(client.tracks())?),
        ReviewCommand::Next { track } => print_json(&rt.block_on(client.next_sample(track))?),
        ReviewCommand::Show { conv_id } => print_json(&rt.block_on(client.conversation(conv_id))?),
        ReviewCommand::Saturation => print_json(&rt.block_on(client.saturation())?),
        ReviewCommand::Timeline { pseudonym } => print_json(&rt.block_on(client.timeline(pseudonym))?),
        ReviewCommand::Annotate {
            track,
            target,
            annotator,
            codes,
            not_interpretable,
            verdict,
        } => {
            let rec = AnnotationRecord {
                annotator: annotator.clone(),
                target: target.clone(),
                track: track.clone(),
                codes: codes.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect::<BTreeSet<_>>(),
                novel: false,
                interpretable: !not_interpretable,
                verdict: verdict.map(|v| match v {
                    VerdictArg::Tp => ReviewVerdict::TruePositive,
                    VerdictArg::Fp => ReviewVerdict::FalsePositive,
                }),
                timestamp: None,
            };
            print_json(&rt.block_on(client.annotate(&rec))?)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
