use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use headroom::{
    cmd_evaluate, cmd_label, cmd_measure, cmd_predict, cmd_profile, cmd_train, load_config,
    parse_predictor, CliError, Overrides,
};
use headroom_core::harness::{Mode, ModelKind};

/// Predict the most suitable optimizer for loop kernels from hardware counters.
#[derive(Parser)]
#[command(name = "headroom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    model_kind: Option<ModelKind>,
    #[arg(long)]
    skip_missing: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: self.mode,
            model_kind: self.model_kind,
            skip_missing: self.skip_missing,
            out_dir: self.out_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect counters from the baseline build and write PKI features.
    Profile(Common),
    /// Build and time every kernel with every candidate.
    Measure(Common),
    /// Join features with timings and assign targets.
    Label(Common),
    /// Train the forest and majority baseline.
    Train(Common),
    /// Run the repeated train/validate protocol and write reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// forest, oracle or constant:<label>
        #[arg(long, hide = true)]
        predictor: Option<String>,
    },
    /// Predict optimizers for a feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Profile(c) => cmd_profile(&load_config(&c.config, &c.overrides())?),
        Command::Measure(c) => cmd_measure(&load_config(&c.config, &c.overrides())?),
        Command::Label(c) => cmd_label(&load_config(&c.config, &c.overrides())?),
        Command::Train(c) => cmd_train(&load_config(&c.config, &c.overrides())?),
        Command::Evaluate { common, predictor } => {
            let cfg = load_config(&common.config, &common.overrides())?;
            let source = predictor.map(|p| parse_predictor(&p, &cfg)).transpose()?;
            cmd_evaluate(&cfg, source)
        }
        Command::Predict {
            model,
            features,
            output,
        } => cmd_predict(&model, &features, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
