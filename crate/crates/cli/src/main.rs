use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cvgmm_cli::{emit_plot_data, output_root, run_config_file, ExperimentKind};

#[derive(Parser)]
#[command(name = "cvgmm", version, about = "Cross-validated GMM model selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its bundle.
    Run {
        config: PathBuf,
        /// Output root for relative `output_dir` values; overrides
        /// the CVGMM_OUTPUT_ROOT environment variable.
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Write plot_data.csv (series, x, y, stderr) into a finished bundle.
    PlotData { bundle: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, output_root: root } => {
            let root = root.unwrap_or_else(output_root);
            let dir = run_config_file(&config, &root).with_context(|| format!("running {}", config.display()))?;
            println!("{}", dir.display());
        }
        Command::PlotData { bundle } => {
            let out = emit_plot_data(&bundle).with_context(|| format!("reading bundle {}", bundle.display()))?;
            println!("{}", out.display());
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<16} {}", k.name(), k.description());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
