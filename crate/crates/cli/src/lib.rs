//! Command-line harness for the mimetic advection experiments.

pub mod config;
pub mod error;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{Experiment, Params, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mimadv",
    version,
    about = "Mimetic spectral element advection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Invocation {
    /// TOML file with any of the flag names as keys; flags override it.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,

    #[command(flatten)]
    params: Params,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Flux projection error against n_e, original and upwinded.
    ConvergeFlux(Invocation),
    /// Material-form tendency error against n_e, B and B_PG.
    ConvergeMaterial(Invocation),
    /// Tanh fronts advected at constant speed.
    Advect1d(Invocation),
    /// Dispersion relations of A, A_PG and B_PG.
    Dispersion(Invocation),
    /// Amplification factors of the centered map over a CFL range.
    Stability(Invocation),
    /// Doubly periodic translation or deformational test.
    Advect2d(Invocation),
}

/// Parses arguments into a validated configuration without running anything.
pub fn parse_config<I, T>(args: I) -> Result<(RunConfig, bool), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let (experiment, inv) = match cli.command {
        Command::ConvergeFlux(i) => (Experiment::ConvergeFlux, i),
        Command::ConvergeMaterial(i) => (Experiment::ConvergeMaterial, i),
        Command::Advect1d(i) => (Experiment::Advect1d, i),
        Command::Dispersion(i) => (Experiment::Dispersion, i),
        Command::Stability(i) => (Experiment::Stability, i),
        Command::Advect2d(i) => (Experiment::Advect2d, i),
    };
    let file = match &inv.config {
        Some(path) => Params::from_file(path)?,
        None => Params::default(),
    };
    let cfg = RunConfig::resolve(experiment, inv.params.over(file))?;
    Ok((cfg, inv.print_config))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (cfg, print_only) = match parse_config(args) {
        Ok(v) => v,
        Err(CliError::Usage(e)) => {
            // help and version land here too, with exit code 0
            let _ = e.print();
            return e.exit_code().clamp(0, 255) as u8;
        }
        Err(e) => {
            eprintln!("mimadv: {e}");
            return e.exit_code();
        }
    };
    if print_only {
        print!("{}", cfg.to_toml());
        return 0;
    }
    match run::execute(&cfg) {
        Ok(m) => {
            for (k, v) in &m.summary {
                println!("{k} = {v:.6e}");
            }
            println!(
                "wrote {} files to {}",
                m.outputs.len() + 1,
                cfg.output.display()
            );
            0
        }
        Err(e) => {
            eprintln!("mimadv: {e}");
            e.exit_code()
        }
    }
}
