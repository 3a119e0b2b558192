use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use roughfk_cli::{run_with_threads, CliError, CliResult, ScenarioConfig};

#[derive(Parser)]
#[command(name = "roughfk", version, about = "Monte Carlo solver for backward rough Kolmogorov equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs and manifest.
    Run {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; outputs do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    Resolve {
        #[command(flatten)]
        source: Source,
    },
    /// List the bundled presets.
    ListPresets,
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML, or JSON with a `.json` extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a preset with default settings.
    #[arg(long)]
    scenario: Option<String>,
}

impl Source {
    fn load(&self) -> CliResult<ScenarioConfig> {
        match (&self.config, &self.scenario) {
            (Some(p), _) => ScenarioConfig::load(p),
            (None, Some(name)) => Ok(ScenarioConfig::for_scenario(name)),
            (None, None) => Err(CliError::Invalid("pass --config or --scenario".into())),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roughfk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::ListPresets => print!("{}", roughfk_cli::preset_listing()),
        Command::Resolve { source } => print!("{}", source.load()?.resolve()?.to_toml()),
        Command::Run { source, seed, threads, out } => {
            let mut raw = source.load()?;
            if seed.is_some() {
                raw.seed = seed;
            }
            if out.is_some() {
                raw.out_dir = out;
            }
            let cfg = raw.resolve()?;
            let manifest = run_with_threads(&cfg, &cfg.out_dir, threads)?;
            for f in &manifest.files {
                println!("{}  {}", f.sha256, cfg.out_dir.join(&f.name).display());
            }
        }
    }
    Ok(())
}
