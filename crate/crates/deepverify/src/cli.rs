use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, CliError, Options, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "deepverify",
    version,
    about = "Deepfake detection by face verification, on synthetic or supplied embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic training and evaluation populations
    Synth(Options),
    /// Train the embedder
    Train {
        #[command(flatten)]
        opts: Options,
        /// Training embeddings (EMB1 or CSV); synthesized when omitted
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Run the verification protocol on an embedding file
    Eval {
        #[command(flatten)]
        opts: Options,
        /// Embeddings with real and fake records (EMB1 or CSV)
        input: PathBuf,
    },
    /// Two-dimensional t-SNE layout of an embedding file
    Tsne {
        #[command(flatten)]
        opts: Options,
        input: PathBuf,
    },
    /// Synthesize, train, simulate, evaluate and project in one go
    Run(Options),
    /// Print the table of a saved report
    Report {
        /// `report.json` or a run directory
        input: PathBuf,
    },
}

pub fn dispatch(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Synth(opts) => commands::cmd_synth(opts),
        Command::Train { opts, input } => commands::cmd_train(opts, input.as_deref()),
        Command::Eval { opts, input } => commands::cmd_eval(opts, input),
        Command::Tsne { opts, input } => commands::cmd_tsne(opts, input),
        Command::Run(opts) => commands::cmd_run(opts),
        Command::Report { input } => commands::cmd_report(input),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 success, 1 stage failure, 2 configuration or usage error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
            if let Some(dir) = outcome.out_dir {
                eprintln!("outputs in {}", dir.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
