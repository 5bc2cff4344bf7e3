//! `feaflow`: drive FEA simulation studies from the shell, against an embedded store
//! (default) or a running service (`--server`).

mod backend;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "feaflow",
    version,
    about = "Artifact-based workflow for FEA simulation studies"
)]
pub struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Base URL of a feaflow service; without it the store directory is used directly.
    #[arg(long, global = true, env = "FEAFLOW_SERVER")]
    pub server: Option<String>,
    /// Store directory. Also holds the `current` study pointer in remote mode.
    #[arg(long, global = true, env = "FEAFLOW_STORE", default_value = ".feaflow")]
    pub store: PathBuf,
    /// Study to act on; defaults to the last one created or selected.
    #[arg(long, global = true)]
    pub study: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Study(StudyCmd),
    #[command(subcommand)]
    Stage(StageCmd),
    #[command(subcommand)]
    Artifact(ArtifactCmd),
    #[command(subcommand)]
    Attr(AttrCmd),
    #[command(subcommand)]
    Link(LinkCmd),
    /// Shortest sequence of stages reaching a milestone.
    Suggest {
        #[arg(long)]
        goal: String,
        #[arg(long)]
        artifact: Option<String>,
        /// Print the planning domain and problem instead.
        #[arg(long)]
        pddl: bool,
    },
    #[command(subcommand)]
    Prov(ProvCmd),
    #[command(subcommand)]
    Exp(ExpCmd),
    #[command(subcommand)]
    Def(DefCmd),
    /// Serve the store over HTTP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

#[derive(Subcommand)]
pub enum StudyCmd {
    /// Create a study and make it current.
    New {
        #[arg(long)]
        definition_version: Option<String>,
        /// Skip the pre-created conceptual model.
        #[arg(long)]
        empty: bool,
    },
    /// Replay a script into a new study; without a path, the bundled case study.
    Replay {
        script: Option<PathBuf>,
        /// Crash the process after this many events (recovery testing).
        #[arg(long, hide = true)]
        abort_after: Option<usize>,
    },
    /// Latest stage outcomes and the stages that can be entered now.
    Status {
        /// State right after this sequence number.
        #[arg(long)]
        at: Option<u64>,
    },
    /// Print accepted changes.
    Watch {
        #[arg(long, default_value_t = 0)]
        since: u64,
        /// Keep waiting for new changes.
        #[arg(long)]
        follow: bool,
    },
    List,
    /// Make an existing study current.
    Use {
        id: String,
    },
}

#[derive(Subcommand)]
pub enum StageCmd {
    Enter {
        artifact: String,
        stage: String,
    },
    Leave {
        artifact: String,
        stage: String,
        #[arg(long)]
        outcome: Option<String>,
    },
}

#[derive(Subcommand)]
pub enum ArtifactCmd {
    /// Create an artifact; owned ones need their owner's creating stage open.
    Create {
        artifact_type: String,
        id: String,
        #[arg(long)]
        owner: Option<String>,
    },
}

#[derive(Subcommand)]
pub enum AttrCmd {
    /// Set an attribute. With `--kind blob` the value is a file to upload.
    Set(ValueArgs),
    /// Record an execution result.
    Record(ValueArgs),
}

#[derive(Args)]
pub struct ValueArgs {
    pub artifact: String,
    pub name: String,
    pub value: String,
    #[arg(long, value_enum)]
    pub kind: Option<ValueKind>,
    /// Unit of a quantity; implies `--kind quantity`.
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long)]
    pub media_type: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ValueKind {
    Text,
    Number,
    Quantity,
    Blob,
    /// Comma-separated artifact ids.
    References,
}

#[derive(Subcommand)]
pub enum LinkCmd {
    Add { from: String, link: String, to: String },
}

#[derive(Subcommand)]
pub enum ProvCmd {
    Export {
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormat,
    },
    Query {
        #[arg(long)]
        kind: Option<String>,
        /// `<field>:<needle>`, case-insensitive.
        #[arg(long)]
        field_contains: Option<String>,
        #[arg(long)]
        outcome: Option<String>,
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        artifact: Option<String>,
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GraphFormat {
    Json,
    Dot,
}

#[derive(Subcommand)]
pub enum ExpCmd {
    /// Bind the convergence schema's slots from the study.
    Fill { experiment: String },
    /// Generate and attach the convergence script.
    Generate {
        experiment: String,
        #[arg(long, requires_all = ["max_size", "min_size"])]
        iterations: Option<usize>,
        #[arg(long)]
        max_size: Option<f64>,
        #[arg(long)]
        min_size: Option<f64>,
    },
    Run {
        experiment: String,
        /// Run the generated script rather than the specification.
        #[arg(long)]
        script: bool,
        /// Run inside the model's assessment stage and record the verdict.
        #[arg(long)]
        assess: bool,
    },
}

#[derive(Subcommand)]
pub enum DefCmd {
    /// Print the workflow definition, or the bundled case-study script.
    Export {
        #[arg(long, value_enum, default_value = "json")]
        format: DefFormat,
        #[arg(long)]
        version: Option<String>,
        #[arg(long, conflicts_with_all = ["format", "version"])]
        case_study: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DefFormat {
    Json,
    Yaml,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing_subscriber::filter::LevelFilter::WARN)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            commands::report(&cli, &e);
            ExitCode::from(e.family.exit_code() as u8)
        }
    }
}
