use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use halfspace_lab::scenario::{self, presets, RunOptions, ScenarioError};

#[derive(Parser)]
#[command(name = "hslab", version, about = "Half-space evolution operators: scenario runner and estimate audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a shipped preset by name.
    Run {
        config: String,
        /// Output directory (default: the scenario's `output`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long, env = "HSLAB_THREADS")]
        threads: Option<usize>,
    },
    /// Write decay and slack plot data (CSV) for a finished run.
    Plot { dir: PathBuf },
    /// Shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's JSON.
    Show { name: String },
}

fn fail(e: &ScenarioError) -> ExitCode {
    eprintln!("hslab: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(config: &str, opts: &RunOptions) -> ExitCode {
    let path = Path::new(config);
    let result = if path.exists() {
        scenario::run_scenario(path, opts)
    } else if let Some(p) = presets::find(config) {
        scenario::run_scenario_str(p.text, Path::new("."), opts)
    } else {
        Err(ScenarioError::Usage(format!("{config}: no such file or preset")))
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.report.summary());
            println!("outputs in {}", outcome.out_dir.display());
            ExitCode::from(outcome.report.exit_code as u8)
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, threads } => run(&config, &RunOptions { out, seed, threads }),
        Command::Plot { dir } => match scenario::emit_plots(&dir) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Presets { action } => match action {
            PresetAction::List => {
                for p in presets::PRESETS {
                    println!("{:<20} {}", p.name, p.description);
                }
                ExitCode::SUCCESS
            }
            PresetAction::Show { name } => match presets::find(&name) {
                Some(p) => {
                    print!("{}", p.text);
                    ExitCode::SUCCESS
                }
                None => fail(&ScenarioError::Usage(format!("unknown preset {name}"))),
            },
        },
    }
}
