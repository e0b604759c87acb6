use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_core::{load_scenario, preset, run_task, Experiment, Scenario, SimError, Task};
use anyhow::Context;
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "afcsim", version, about = "Up-conversion and AFC memory simulator")]
struct Cli {
    /// Master seed; replaces the scenario's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Dotted-key override such as `pump.power_w=0.2`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment named in a scenario file.
    Run { file: PathBuf },
    /// Pump-power sweep of efficiency, noise and SNR.
    Fig2 { file: Option<PathBuf> },
    /// SNR versus photon number on the three optical paths.
    Fig3 { file: Option<PathBuf> },
    /// Storage-time sweep.
    Fig4 { file: Option<PathBuf> },
    /// Calibrate the noise coefficient and tooth depth.
    Calibrate { file: Option<PathBuf> },
    /// Write absorption profiles and pulse envelopes.
    DumpProfile { file: Option<PathBuf> },
}

fn scenario(file: Option<&Path>, fallback: &str, cli: &Cli) -> afc_core::Result<Scenario> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    match file {
        Some(p) => load_scenario(p, &overrides),
        None => preset(fallback, &overrides),
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let (file, fallback, task) = match &cli.command {
        Command::Run { file } => (Some(file.as_path()), "fig3", None),
        Command::Fig2 { file } => (file.as_deref(), "fig2", Some(Task::Experiment(Experiment::Fig2))),
        Command::Fig3 { file } => (file.as_deref(), "fig3", Some(Task::Experiment(Experiment::Fig3))),
        Command::Fig4 { file } => (file.as_deref(), "fig4", Some(Task::Experiment(Experiment::Fig4))),
        Command::Calibrate { file } => (file.as_deref(), "fig3", Some(Task::Calibrate)),
        Command::DumpProfile { file } => (file.as_deref(), "fig3", Some(Task::DumpProfile)),
    };
    let s = scenario(file, fallback, cli)?;
    let task = task.unwrap_or(Task::Experiment(s.experiment));
    info!("scenario '{}' seed {} task {task:?}", s.name, s.seed);
    let outputs = run_task(&s, task)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    for o in outputs {
        let path = cli.out.join(&o.name);
        std::fs::write(&path, o.contents).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<SimError>() {
                Some(SimError::Config(_) | SimError::InvalidParameter { .. } | SimError::Io(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
