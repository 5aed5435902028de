//! `copxsim` — build preset configs, run coexistence scenarios, and sweep
//! the macro-to-deployable distance, emitting CSV tables plus a JSON run
//! manifest alongside every output.
//!
//! Exit codes: 0 success, 1 configuration rejected, 2 I/O failure.
//! Load-coupling non-convergence is reported as a warning, not a failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use copxsim_core::experiment::{
    run_distance_sweep, run_scenario, summarize_sweep, ConvergenceStats, RunManifest, RunSpec,
    SweepManifest, SweepSpec,
};
use copxsim_core::scenario::{build_preset, McAccess, ScenarioConfig, ScenarioOverrides, ScenarioPreset};
use copxsim_core::Error;

#[derive(Parser)]
#[command(
    name = "copxsim",
    version,
    about = "System-level simulator for a deployable base station coexisting with a public macro network"
)]
struct Cli {
    /// Worker threads for sweeps and realizations; the COPXSIM_WORKERS
    /// environment variable overrides this flag.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scenario configuration as JSON.
    Preset {
        /// One of: macro-only, macro-mc, macro-truck, macro-uav.
        name: String,
        /// Output path for the JSON config.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario config over seeded realizations and write the
    /// per-user aggregate CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Base seed; defaults to the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        realizations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the deployable-to-macro distance and write the per-distance
    /// MC user CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        dmin: f64,
        #[arg(long, default_value_t = 10_000.0)]
        dmax: f64,
        #[arg(long, default_value_t = 10.0)]
        step: f64,
        /// Deployable transmit power in dBm (typical: 46 or 33 for a
        /// truck, 40 or 24 for a UAV).
        #[arg(long)]
        power: f64,
        /// MC access policy: "deployable-only" or "any-network".
        #[arg(long, value_parser = parse_access)]
        access: McAccess,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        realizations: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_access(s: &str) -> Result<McAccess, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = std::env::var("COPXSIM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(cli.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(err) => {
            eprintln!("error: failed to start {workers} workers: {err}");
            return ExitCode::from(2);
        }
    };

    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Io(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Preset { name, out, seed } => {
            let preset: ScenarioPreset = name.parse()?;
            let overrides = ScenarioOverrides { seed, ..Default::default() };
            let config = build_preset(preset, &overrides)?;
            write_atomic(&out, config.to_json()?.as_bytes())?;
            println!("wrote {} ({} base stations)", out.display(), config.base_stations.len());
            Ok(())
        }
        Command::Run { config, seed, realizations, out } => {
            let scenario = load_config(&config)?;
            let base_seed = seed.unwrap_or(scenario.seed);
            let spec = RunSpec {
                config: scenario.clone(),
                n_realizations: realizations,
                base_seed,
            };
            let metrics = run_scenario(&spec)?;
            write_atomic(&out, metrics.to_csv().as_bytes())?;
            let convergence = ConvergenceStats {
                total_realizations: metrics.n_realizations,
                converged_realizations: metrics.realizations_converged,
                max_iterations: metrics.max_iterations,
            };
            warn_on_nonconvergence(&convergence);
            let manifest = RunManifest::new(
                "run".to_string(),
                &scenario,
                base_seed,
                realizations,
                None,
                convergence,
                vec![out.display().to_string()],
            );
            write_atomic(&manifest_path(&out), manifest.to_json()?.as_bytes())?;
            println!(
                "fully-served MC fraction: DL {:.4}, UL {:.4} ({} users x {} realizations)",
                metrics.mc_fully_served_by_mean(true),
                metrics.mc_fully_served_by_mean(false),
                metrics.per_user.len(),
                realizations,
            );
            Ok(())
        }
        Command::Sweep { config, dmin, dmax, step, power, access, seed, realizations, out } => {
            let scenario = load_config(&config)?;
            let base_seed = seed.unwrap_or(scenario.seed);
            let spec = SweepSpec {
                base: RunSpec {
                    config: scenario.clone(),
                    n_realizations: realizations,
                    base_seed,
                },
                d_min_m: dmin,
                d_max_m: dmax,
                step_m: step,
                deployable_power_dbm: power,
                mc_access: access,
            };
            let table = run_distance_sweep(&spec)?;
            write_atomic(&out, table.to_csv().as_bytes())?;
            let convergence = ConvergenceStats {
                total_realizations: table.total_realizations,
                converged_realizations: table.realizations_converged,
                max_iterations: table.max_iterations,
            };
            warn_on_nonconvergence(&convergence);
            let manifest = RunManifest::new(
                "sweep".to_string(),
                &scenario,
                base_seed,
                realizations,
                Some(SweepManifest {
                    d_min_m: dmin,
                    d_max_m: dmax,
                    step_m: step,
                    deployable_power_dbm: power,
                    mc_access: access,
                }),
                convergence,
                vec![out.display().to_string()],
            );
            write_atomic(&manifest_path(&out), manifest.to_json()?.as_bytes())?;
            let summary = summarize_sweep(&table)?;
            println!(
                "worst-case mean served DL per MC user: {:.4} Mbps at {:.0} m",
                summary.worst_user_mean_served_bps / 1e6,
                summary.worst_case_distance_m,
            );
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map_or_else(Default::default, |n| n.to_os_string());
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn warn_on_nonconvergence(stats: &ConvergenceStats) {
    if stats.converged_realizations < stats.total_realizations {
        eprintln!(
            "warning: load coupling did not converge in {} of {} realizations; last iterate used",
            stats.total_realizations - stats.converged_realizations,
            stats.total_realizations,
        );
    }
}
