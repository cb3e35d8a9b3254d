use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use netnewton::harness::acceptance::{
    run_all, run_criterion, AcceptanceOptions, AcceptanceReport, CRITERIA,
};
use netnewton::harness::commands::{bounds, execute, validate, write_bounds};
use netnewton::harness::config::Mode;
use netnewton::harness::{write_file, HarnessError, RunConfig};

#[derive(Parser)]
#[command(
    name = "netnewton",
    version,
    about = "Asynchronous network Newton: simulate, bound and verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "NN_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stride: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the network, the local functions and the spectral bounds.
    Validate(Overrides),
    /// Print the closed-form rate constants and write them to the bounds file.
    Bounds(Overrides),
    /// Run the mode named in the config (newton or gossip).
    Run(Overrides),
    /// Run both algorithms and compare how fast they settle.
    Compare(Overrides),
    /// Run the acceptance suite.
    Accept {
        /// Directory for report artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "NN_SEED", default_value_t = 0)]
        seed: u64,
        /// Stepsize used on the five-agent setup.
        #[arg(long, default_value_t = 0.8)]
        epsilon: f64,
        /// Run a single criterion.
        #[arg(long)]
        only: Option<u8>,
        /// Report runtimes without failing on them.
        #[arg(long)]
        no_runtime_limits: bool,
        #[arg(long, short)]
        verbose: bool,
    },
}

fn load(o: &Overrides) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::load(&o.config)?;
    if let Some(s) = o.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = o.trials {
        cfg.run.trials = t;
    }
    if let Some(i) = o.iters {
        cfg.run.iters = i;
    }
    if let Some(s) = o.stride {
        cfg.run.stride = s;
    }
    if let Some(dir) = &o.out {
        cfg.output.dir = std::env::current_dir()
            .map(|d| d.join(dir))
            .unwrap_or_else(|_| dir.clone());
    }
    if cfg.run.trials == 0 || cfg.run.stride == 0 {
        return Err(HarnessError::Invalid(
            "trials and stride must be at least 1".into(),
        ));
    }
    Ok(cfg)
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn dispatch(command: Command) -> Result<bool, HarnessError> {
    match command {
        Command::Validate(o) => {
            let report = validate(&load(&o)?)?;
            print!("{}", report.render());
            Ok(report.passed())
        }
        Command::Bounds(o) => {
            let cfg = load(&o)?;
            let report = bounds(&cfg)?;
            print!("{}", report.rc.table(&report.pc));
            print_written(&[write_bounds(&cfg, &report)?]);
            Ok(true)
        }
        Command::Run(o) => {
            let cfg = load(&o)?;
            let mode = if cfg.run.mode == Mode::Compare {
                Mode::Newton
            } else {
                cfg.run.mode
            };
            let (summary, written) = execute(&cfg, mode)?;
            print!("{summary}");
            print_written(&written);
            Ok(true)
        }
        Command::Compare(o) => {
            let cfg = load(&o)?;
            let (summary, written) = execute(&cfg, Mode::Compare)?;
            print!("{summary}");
            print_written(&written);
            Ok(true)
        }
        Command::Accept {
            out,
            seed,
            epsilon,
            only,
            no_runtime_limits,
            verbose,
        } => {
            let opts = AcceptanceOptions {
                epsilon,
                seed,
                enforce_runtime: !no_runtime_limits,
            };
            let report = match only {
                Some(id) if CRITERIA.iter().any(|c| c.0 == id) => AcceptanceReport {
                    criteria: vec![run_criterion(id, &opts)],
                },
                Some(id) => {
                    return Err(HarnessError::Invalid(format!(
                        "no criterion {id}; choose 1..=10"
                    )))
                }
                None => run_all(&opts),
            };
            print!("{}", report.render(verbose));
            if let Some(dir) = out {
                for (name, content) in report.criteria.iter().filter_map(|c| c.artifact.as_ref()) {
                    let path = dir.join(name);
                    write_file(&path, content)?;
                    println!("wrote {}", path.display());
                }
            }
            Ok(report.all_passed())
        }
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => Ok(ExitCode::SUCCESS),
        Ok(false) => Ok(ExitCode::FAILURE),
        Err(e) => {
            let hint = e.remediation();
            Err(anyhow!("{e}\nhint: {hint}"))
        }
    }
}
