mod certificates;
mod config;
mod error;
mod experiments;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::Kind;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "twistlab", version, about = "Factor systems, twisted sums and extensions of normed spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment (or `[[experiments]]` batch) in a TOML config.
    Run { config: PathBuf },
    /// Recompute the values stored in a certificate file.
    Verify { certificate: PathBuf },
    /// Parse, validate and pretty-print a map.
    PrintMap {
        text: String,
        /// Domain dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Codomain dimension; defaults to the domain dimension.
        #[arg(long)]
        codomain_dim: Option<usize>,
        /// Exponent of the lp norm on both spaces.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// Print a reference config for an experiment kind.
    Demo { kind: Kind },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("TWISTLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("TWISTLAB_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}

fn run(config: &PathBuf) -> CliResult<()> {
    let experiments = config::load(config)?;
    let results: Vec<CliResult<()>> = experiments
        .par_iter()
        .map(|exp| {
            let outcome = experiments::run(exp).and_then(|a| {
                output::write_outputs(exp, &a)?;
                match a.failure {
                    Some(f) => Err(CliError::Numerical {
                        module: f.module,
                        message: f.message,
                        report: serde_json::to_string_pretty(&f.report).expect("json values serialize"),
                    }),
                    None => Ok(()),
                }
            });
            if let Err(e) = &outcome {
                if !matches!(e, CliError::Io { .. }) {
                    output::write_error(exp, e)?;
                }
            }
            outcome
        })
        .collect();
    let mut worst: Option<CliError> = None;
    for (exp, r) in experiments.iter().zip(results) {
        match r {
            Ok(()) => println!("{}: ok -> {}", exp.name, exp.output_dir.display()),
            Err(e) => {
                eprintln!("{}: {e}", exp.name);
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

fn print_map(text: &str, dim: usize, codomain_dim: Option<usize>, p: f64) -> CliResult<()> {
    let h = config::map_on(text, config::space(dim, p)?, config::space(codomain_dim.unwrap_or(dim), p)?)?;
    print!("{}", h.pretty());
    println!("canonical: {}", h.to_text());
    println!("domain dim {}, codomain dim {}, linear: {}", h.domain().dim(), h.codomain().dim(), h.is_linear());
    if let Some(m) = h.as_matrix() {
        print!("{m}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Verify { certificate } => {
            let lines = certificates::verify_file(&certificate)?;
            for l in lines {
                println!("{l}");
            }
            Ok(())
        }
        Command::PrintMap { text, dim, codomain_dim, p } => print_map(&text, dim, codomain_dim, p),
        Command::Demo { kind } => {
            print!("{}", config::demo(kind));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
