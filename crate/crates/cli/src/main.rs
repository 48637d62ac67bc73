use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kinmarket_cli::equilibrium::{equilibrium, EquilibriumOptions, Kind};
use kinmarket_cli::scenario::{load, LoadedScenario};
use kinmarket_cli::simulate::{simulate, Engine, SimulateOptions};
use kinmarket_cli::validate::validate;
use kinmarket_cli::{prepare_out_dir, CliError};

/// Two-phase kinetic market model: simulation, equilibria and validation.
#[derive(Debug, Parser)]
#[command(name = "kinmarket", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the fluid, particle or free-transport engine on a scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        engine: Option<Engine>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Compute a fixed or stationary point in closed form.
    Equilibrium {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "fixed")]
        kind: Kind,
        #[arg(long)]
        gamma_plus: Option<f64>,
        #[arg(long)]
        gamma_minus: Option<f64>,
        /// Network annihilation flows, comma separated; the least solution
        /// of the inequalities when absent.
        #[arg(long, value_delimiter = ',')]
        s_bar: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross-engine checks; exit code 3 when any fails.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario, then print it with all defaults filled in.
    InspectConfig {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn out_dir(sc: &LoadedScenario, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = out.unwrap_or_else(|| Path::new(&sc.scenario.outputs.dir).to_path_buf());
    prepare_out_dir(&dir)
}

fn print_result(dir: &Path, result: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(result).unwrap_or_default()
    );
    println!(
        "manifest: {}",
        dir.join(kinmarket_cli::manifest::MANIFEST_FILE).display()
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            scenario,
            engine,
            out,
            seed,
            replicas,
        } => {
            let sc = load(&scenario)?;
            let dir = out_dir(&sc, out)?;
            let opts = SimulateOptions {
                engine,
                seed,
                replicas,
            };
            let result = simulate(&sc, &opts, &dir)?;
            print_result(&dir, &result);
        }
        Command::Equilibrium {
            scenario,
            kind,
            gamma_plus,
            gamma_minus,
            s_bar,
            out,
        } => {
            let sc = load(&scenario)?;
            let dir = out_dir(&sc, out)?;
            let opts = EquilibriumOptions {
                kind,
                gamma_plus,
                gamma_minus,
                s_bar,
            };
            let result = equilibrium(&sc, &opts, &dir)?;
            print_result(&dir, &result);
        }
        Command::Validate { scenario, out } => {
            let sc = load(&scenario)?;
            let dir = out_dir(&sc, out)?;
            let failed = validate(&sc, &dir)?;
            println!(
                "manifest: {}",
                dir.join(kinmarket_cli::manifest::MANIFEST_FILE).display()
            );
            if failed > 0 {
                return Err(CliError::ValidationFailed { failed });
            }
        }
        Command::InspectConfig { scenario } => {
            let sc = load(&scenario)?;
            println!("# config_hash {}", sc.config_hash);
            println!(
                "{}",
                serde_json::to_string_pretty(&sc.scenario)
                    .map_err(|e| CliError::Runtime(e.to_string()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
