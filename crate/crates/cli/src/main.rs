//! Command-line runner for split-learning unlearning experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splitwiper::bundle::{verify_bundles, BundleWriter, LoadedBundle, RunInfo, RunKind, RunReport, GRADCHECK, RUN};
use splitwiper::data::{Selector, UnlearnRequest};
use splitwiper::gradcheck::{run_gradcheck, GradCheckOptions, DEFAULT_DRAWS};
use splitwiper::metrics::{effectiveness_report, utility_report, RunSummary};
use splitwiper::pipelines::{
    retrain_oracle, run_strategy0_on_shards, run_strategy1, run_strategy2, run_training_with, Exec, ExperimentConfig,
    Strategy, WorldState,
};
use splitwiper::Error;

const EXIT_CONTRACT: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "splitwiper", version, about = "Split learning with SISA-style unlearning")]
struct Cli {
    /// Worker threads for client-local training.
    #[arg(long, global = true, env = "SPLITWIPER_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a world and write its bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace every seed in the config.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run an unlearning strategy against a trained world bundle.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        /// Bundle written by `train`.
        #[arg(long)]
        world: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
        strategy: u8,
        #[arg(long)]
        client: u32,
        /// `none`, `class:<c>` or `indices:<i>,<j>,...` (dataset row indices).
        #[arg(long)]
        select: String,
        /// Also retrain from scratch on the remaining data and compare.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Check bundle integrity, invariants and cross-run complexity.
    Verify {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_DRAWS)]
        draws: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_layer: Option<usize>,
    },
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Selector(_)
        | Error::Protocol(_)
        | Error::Design(_)
        | Error::Routing(_)
        | Error::InvalidDimension(_)
        | Error::Frozen => EXIT_CONTRACT,
        _ => EXIT_DATA,
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, Error> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(match seed_override {
        Some(s) => cfg.with_seed_override(s),
        None => cfg,
    })
}

fn cmd_train(exec: Exec, config: &Path, out: &Path, seed_override: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed_override)?;
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let world = run_training_with(&cfg, &dataset, exec)?;
    let info = RunInfo::train(&cfg);
    let eval = utility_report(&world)?;
    for c in &eval.per_client {
        println!("client {} accuracy {}", c.client, c.own.map_or("n/a".into(), |a| format!("{a:.4}")));
    }
    let report = RunReport { run_id: info.run_id.clone(), eval, summary: None };
    BundleWriter::new().add_world(&info, &cfg, &world, &report)?.write(out)?;
    println!("run_id {}", info.run_id);
    Ok(())
}

/// Re-derives the trained world from the bundle's config echo and checks it
/// against the stored checkpoints.
fn restore_world(bundle: &LoadedBundle, exec: Exec) -> Result<WorldState, Error> {
    if bundle.info.kind != RunKind::Train {
        return Err(Error::Bundle(format!("{} is not a training bundle", bundle.label())));
    }
    let cfg = bundle.config.as_ref().expect("training bundles carry a config");
    let world = run_training_with(cfg, &cfg.load_dataset()?, exec)?;
    let rebuilt: Vec<(String, Vec<u8>)> = world.checkpoint_bytes();
    let stored: Vec<(String, Vec<u8>)> = bundle.checkpoints.clone().into_iter().collect();
    let mut rebuilt_sorted = rebuilt;
    rebuilt_sorted.sort();
    if rebuilt_sorted != stored {
        return Err(Error::Bundle(format!(
            "{}: checkpoints do not match a rebuild from the bundled config",
            bundle.label()
        )));
    }
    Ok(world)
}

#[allow(clippy::too_many_arguments)]
fn cmd_unlearn(
    exec: Exec,
    config: &Path,
    world_dir: &Path,
    strategy: u8,
    client: u32,
    select: &str,
    oracle: bool,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<(), Failure> {
    let cfg = load_config(config, seed_override)?;
    cfg.validate_structure()?;
    let req = UnlearnRequest::new(client, Selector::parse(select)?);
    let bundle = LoadedBundle::load(world_dir)?;
    let world = restore_world(&bundle, exec)?;
    let world_u = match Strategy::from_number(strategy).expect("range-checked by clap") {
        Strategy::Baseline => {
            if client as usize >= world.clients.len() {
                return Err(Error::Protocol(format!("unknown client {client}")).into());
            }
            run_strategy0_on_shards(&cfg, world.shards(), &req)?
        }
        Strategy::CacheReplacement => run_strategy1(world, &cfg, &req)?,
        Strategy::Interactive => run_strategy2(world, &cfg, &req)?,
    };
    let oracle_world = if oracle { Some(retrain_oracle(&cfg, world_u.shards())?) } else { None };
    let eval = effectiveness_report(&world_u, oracle_world.as_ref(), &req)?;
    let summary = RunSummary::from_world(&world_u)?;
    let info = RunInfo::unlearn(&cfg, &bundle.info.run_id, strategy, client, &req.selector.describe(), oracle);

    for g in &eval.goals.checks {
        println!("{:<3} {:<8} {}", g.goal, format!("{:?}", g.status).to_lowercase(), g.detail);
    }
    if let Some(o) = &eval.oracle {
        println!("parameter distance to oracle {:e}", o.parameter_distance);
    }
    let report = RunReport { run_id: info.run_id.clone(), eval, summary: Some(summary) };
    BundleWriter::new().add_world(&info, &cfg, &world_u, &report)?.write(out)?;
    println!("run_id {}", info.run_id);
    Ok(())
}

fn cmd_verify(dirs: &[PathBuf]) -> Result<(), Failure> {
    let bundles = dirs.iter().map(LoadedBundle::load).collect::<Result<Vec<_>, _>>()?;
    let rows = verify_bundles(&bundles)?;
    let mut failed = 0;
    for r in &rows {
        println!("{:<4} {:<40} {:<36} {}", if r.passed { "PASS" } else { "FAIL" }, r.scope, r.check, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} checks failed", rows.len())));
    }
    println!("all {} checks passed", rows.len());
    Ok(())
}

fn cmd_gradcheck(seed: u64, draws: usize, out: Option<&Path>, corrupt_layer: Option<usize>) -> Result<(), Failure> {
    let report = run_gradcheck(&GradCheckOptions { seed, draws, corrupt_layer })?;
    for d in &report.draws {
        println!("draw {:>2} dims {:?} batch {} max rel err {:.3e}", d.draw, d.dims, d.batch, d.max_rel_err);
    }
    println!("max relative error {:.6e} over {} draws", report.max_rel_err, report.draws.len());
    if let Some(dir) = out {
        let info = RunInfo::gradcheck(seed, draws);
        let mut w = BundleWriter::new();
        w.add_json(RUN, &info)?.add_json(GRADCHECK, &report)?;
        w.write(dir)?;
    }
    if !report.passed {
        return Err(Failure::Check(format!(
            "gradient check failed: max relative error {:e} >= {:e}",
            report.max_rel_err, report.tolerance
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = Exec { threads: cli.threads };
    let result = match &cli.command {
        Command::Train { config, out, seed_override } => cmd_train(exec, config, out, *seed_override),
        Command::Unlearn { config, world, strategy, client, select, oracle, out, seed_override } => {
            cmd_unlearn(exec, config, world, *strategy, *client, select, *oracle, out, *seed_override)
        }
        Command::Verify { bundles } => cmd_verify(bundles),
        Command::Gradcheck { seed, draws, out, corrupt_layer } => {
            cmd_gradcheck(*seed, *draws, out.as_deref(), *corrupt_layer)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
