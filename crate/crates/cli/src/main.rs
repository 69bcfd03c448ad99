//! `terrapref`: collect demonstrations, train the classifier, evaluate it in
//! closed loop and render episode replays.

mod commands;
mod config;
mod draw;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "terrapref", version, about)]
struct Cli {
    /// Run configuration (TOML). Keys can also be overridden with
    /// TERRAPREF__<SECTION>__<KEY>=<value>.
    #[arg(long, global = true, env = "TERRAPREF_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides training.seed.
    #[arg(long, global = true, env = "TERRAPREF_SEED")]
    seed: Option<u64>,
    /// Overrides paths.out, the output directory.
    #[arg(long, global = true, env = "TERRAPREF_OUT")]
    out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Write the camera view at each scenario's start pose (label codes and
    /// colour PNGs) to this directory.
    #[arg(long, global = true, value_name = "DIR")]
    dump_camera: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record a demonstration dataset.
    Collect(CollectArgs),
    /// Train the classifier on a dataset.
    Train {
        /// Dataset file; defaults to paths.dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the planner on scenarios and print the preference table.
    Eval {
        /// Model file; defaults to paths.model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scenario groups (train, test, generalization, all), names or
        /// JSON files; defaults to eval.scenarios.
        scenarios: Vec<String>,
        /// Exit nonzero unless every scenario passes.
        #[arg(long)]
        strict: bool,
    },
    /// Render episode logs as top-down track images.
    Replay {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// List or export the bundled scenarios.
    Scenarios {
        /// Write every bundled scenario as JSON into this directory.
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct CollectArgs {
    /// Drive with the scripted oracle.
    #[arg(long)]
    scripted: bool,
    /// Serve the teleoperation websocket and record a human driver.
    #[arg(long)]
    serve: bool,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.paths.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let config = resolve(&cli)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(true);
    }
    let Some(command) = &cli.command else {
        anyhow::bail!("no command given; see --help");
    };
    let dump = cli.dump_camera.as_deref();
    match command {
        Command::Collect(args) => {
            commands::record_config(&config, "collect")?;
            if args.scripted {
                commands::collect_scripted(&config, dump)?;
            } else {
                let runtime = tokio::runtime::Runtime::new()?;
                runtime.block_on(commands::collect_serve(&config, dump))?;
            }
            Ok(true)
        }
        Command::Train { dataset } => {
            commands::record_config(&config, "train")?;
            commands::train_model(&config, dataset.as_deref())?;
            Ok(true)
        }
        Command::Eval {
            model,
            scenarios,
            strict,
        } => {
            commands::record_config(&config, "eval")?;
            let all_passed = commands::eval(&config, model.as_deref(), scenarios, dump)?;
            Ok(all_passed || !strict)
        }
        Command::Replay { logs } => {
            commands::replay(&config, logs)?;
            Ok(true)
        }
        Command::Scenarios { export } => {
            match export {
                Some(dir) => commands::export_scenarios(dir)?,
                None => commands::list_scenarios(),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
