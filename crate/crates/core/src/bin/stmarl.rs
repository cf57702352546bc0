//! Command-line front end: seeded simulate/train/eval runs, run
//! comparison, and the finite-difference verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stmarl::cli::{self, ControllerKind, RunMode};

#[derive(Parser)]
#[command(name = "stmarl", version, about = "Cooperative traffic-signal control laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list, e.g. `--seed 1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the controller name.
    #[arg(long)]
    controller: Option<String>,
    /// Override the temporal dependency interval Δt.
    #[arg(long = "delta-t")]
    delta_t: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a controller without training (learning controllers use
    /// freshly initialized weights).
    Simulate(RunArgs),
    /// Train a learning controller.
    Train(RunArgs),
    /// Evaluate a trained checkpoint greedily (ε = 0).
    Eval(RunArgs),
    /// Tabulate completed runs against each other.
    Compare {
        /// Run directories containing summary.json.
        dirs: Vec<PathBuf>,
        /// Optional file for the comparison CSV (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference verification of the full network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long = "delta-t", default_value_t = 2)]
        delta_t: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn apply_overrides(cfg: &mut cli::ExperimentConfig, args: &RunArgs) -> Result<(), cli::CliError> {
    if let Some(seeds) = &args.seed {
        if seeds.is_empty() {
            return Err(cli::CliError::InvalidValue {
                key: "seeds",
                reason: "at least one seed".into(),
            });
        }
        cfg.seeds = seeds.clone();
    }
    if let Some(e) = args.episodes {
        cfg.schedule.episodes = e;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(name) = &args.controller {
        let kind = ControllerKind::parse(name).ok_or(cli::CliError::InvalidValue {
            key: "controller",
            reason: format!("unknown controller {name:?}"),
        })?;
        cfg.controller = kind;
        cfg.net.use_attention = !matches!(kind, ControllerKind::StmarlS);
        cfg.net.use_lstm = !matches!(kind, ControllerKind::StmarlT);
    }
    if let Some(dt) = args.delta_t {
        if dt == 0 || dt > cfg.schedule.steps_per_episode {
            return Err(cli::CliError::InvalidValue {
                key: "delta_t",
                reason: format!("delta_t {dt} outside 1..=T"),
            });
        }
        cfg.schedule.delta_t = dt;
    }
    Ok(())
}

fn run_subcommand(args: &RunArgs, mode: RunMode) -> Result<(), cli::CliError> {
    let mut cfg = cli::load_config(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let outcome = cli::run(&cfg, mode)?;
    for s in &outcome.per_seed {
        println!(
            "seed {:>3}: avg travel time {:.2} s -> {}",
            s.seed,
            s.avg_travel_time,
            s.dir.display()
        );
    }
    println!(
        "{} over {} seeds: avg travel time {:.2} ± {:.2} s ({})",
        outcome.summary.controller,
        outcome.summary.seeds.len(),
        outcome.summary.avg_travel_time.mean,
        outcome.summary.avg_travel_time.std,
        outcome.summary_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    // STMARL_THREADS caps the worker pool used for parallel seeds and
    // batched updates
    if let Ok(threads) = std::env::var("STMARL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }

    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run_subcommand(args, RunMode::Simulate),
        Command::Train(args) => run_subcommand(args, RunMode::Train),
        Command::Eval(args) => run_subcommand(args, RunMode::Eval),
        Command::Compare { dirs, out } => (|| {
            let table = cli::compare(dirs)?;
            match out {
                Some(path) => cli::write_atomic(path, table.as_bytes())?,
                None => print!("{table}"),
            }
            Ok(())
        })(),
        Command::Gradcheck { hidden, delta_t, seed } => (|| {
            let report = cli::gradcheck_full_network(*hidden, *delta_t, *seed)?;
            println!(
                "full network: {} parameters checked, max rel err {:.3e} at {} -> {}",
                report.checked,
                report.max_rel_err,
                report.worst_param,
                if report.passed() { "PASS" } else { "FAIL" }
            );
            if !report.passed() {
                return Err(cli::CliError::InvalidValue {
                    key: "gradcheck",
                    reason: format!(
                        "max rel err {:.3e} >= {:.1e}",
                        report.max_rel_err, report.tolerance
                    ),
                });
            }
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
