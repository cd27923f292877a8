use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddhm_cli::commands;
use ddhm_cli::config::RunConfig;
use ddhm_cli::synth::SynthSpec;
use ddhm_cli::CliError;

#[derive(Parser)]
#[command(name = "ddhm", about = "Multiclass DDoS flow classifier toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key (repeatable); wins over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the hybrid model and report held-out metrics.
    Train {
        /// Labeled CSV dataset.
        #[arg(long)]
        data: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and compare forest, MLP, and hybrid on a held-out split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Also write the NDJSON report here.
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// k-fold cross-validation of all three models.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Classify a CSV of flows with a trained model; NDJSON out.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the streaming gatekeeper over stdin/stdout or TCP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a seeded Gaussian-blob multiclass CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        dims: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the effective configuration as key = value lines.
    DumpConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { data, out, config } => {
            commands::cmd_train(&config.resolve()?, &data, &out)
        }
        Command::Evaluate {
            data,
            json_out,
            config,
        } => commands::cmd_evaluate(&config.resolve()?, &data, json_out.as_deref()),
        Command::Crossval {
            data,
            json_out,
            config,
        } => commands::cmd_crossval(&config.resolve()?, &data, json_out.as_deref()),
        Command::Predict { model, data, out } => {
            commands::cmd_predict(&model, &data, out.as_deref())
        }
        Command::Serve { model, config } => commands::cmd_serve(&config.resolve()?, &model),
        Command::Synth {
            out,
            rows,
            dims,
            classes,
            separation,
            seed,
        } => commands::cmd_synth(
            &SynthSpec {
                rows,
                dims,
                classes,
                separation,
                seed,
            },
            &out,
        ),
        Command::DumpConfig { config } => commands::cmd_dump_config(&config.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
