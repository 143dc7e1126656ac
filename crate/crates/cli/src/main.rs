//! `dualx`: degrade, train, infer, evaluate, profile and ablate from one config file.

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod ablate;
mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Flags accepted before or after the subcommand.
#[derive(Args, Debug, Default, Clone)]
pub struct Globals {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for initialization, sampling and degradation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Set a config key, e.g. `train.lr=1e-3`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Globals {
    /// Combine with flags given later on the command line; later single values win.
    pub fn then(mut self, later: &Globals) -> Globals {
        self.config = later.config.clone().or(self.config);
        self.seed = later.seed.or(self.seed);
        self.out = later.out.clone().or(self.out);
        self.overrides.extend(later.overrides.iter().cloned());
        self
    }
}

#[derive(Parser, Debug)]
#[command(name = "dualx", version, about = "Dual axial spatial×temporal video super-resolution")]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a procedural high-quality clip from `[synth]`.
    Synth {
        #[command(flatten)]
        g: Globals,
    },
    /// Synthesize low-quality inputs from high-quality clips.
    Degrade {
        #[command(flatten)]
        g: Globals,
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
    },
    /// Train one stage and write a checkpoint.
    Train {
        #[command(flatten)]
        g: Globals,
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },
    /// Upscale low-quality clips with overlapped tiles.
    Infer {
        #[command(flatten)]
        g: Globals,
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Write the tile plan as JSON.
        #[arg(long, value_name = "FILE")]
        plan: Option<PathBuf>,
    },
    /// PSNR and SSIM of test clips against references.
    Eval {
        #[command(flatten)]
        g: Globals,
        #[arg(long = "ref", value_name = "DIR")]
        reference: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        test: Option<PathBuf>,
        /// Also report block-matching motion of the reference.
        #[arg(long)]
        motion: bool,
    },
    /// Closed-form parameter and MAC counts.
    Profile {
        #[command(flatten)]
        g: Globals,
        /// Input shape `B,3,N,H,W`.
        #[arg(long, value_delimiter = ',')]
        shape: Option<Vec<usize>>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Train and evaluate a suite of variants at equal budget.
    Ablate {
        #[command(flatten)]
        g: Globals,
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Mean horizontal and vertical block motion of a clip.
    Motion {
        #[command(flatten)]
        g: Globals,
        #[arg(long = "in", value_name = "DIR")]
        input: Option<PathBuf>,
    },
}

impl Command {
    pub fn globals(&self) -> &Globals {
        match self {
            Command::Synth { g }
            | Command::Degrade { g, .. }
            | Command::Train { g, .. }
            | Command::Infer { g, .. }
            | Command::Eval { g, .. }
            | Command::Profile { g, .. }
            | Command::Ablate { g, .. }
            | Command::Motion { g, .. } => g,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Table1,
    Table7,
    Table8,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DUALX_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("DUALX_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
