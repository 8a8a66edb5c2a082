//! Command-line front end: train runs from a JSON config, serve as an
//! evaluation worker, evaluate checkpoints, compare evaluation
//! reports, and plot training traces.
//!
//! Exit codes: 0 success, 1 bad configuration or arguments, 2 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use evostrat::checkpoint::Checkpoint;
use evostrat::distrib::{params_hash, run_worker, TcpMasterConfig};
use evostrat::error::{Error, Result};
use evostrat::experiment::{
    compare_reports, evaluate_params, read_trace_series, write_chart, BackendProvider,
    EvalReport, EvaluatorSpec, InProcProvider, ResultRow, RunConfig, Series, TcpProvider,
};
use evostrat::noise::NoiseTable;

#[derive(Parser)]
#[command(
    name = "evostrat",
    version,
    about = "Derivative-free policy search over a shared noise table"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Transport {
    /// Score offspring on local threads.
    Inproc,
    /// Serve offspring to TCP workers.
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Transport::Inproc)]
        transport: Transport,
        /// Master listen address for the TCP transport.
        #[arg(long, default_value = "127.0.0.1:7601")]
        listen: String,
        /// TCP workers to wait for before training starts.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate offspring for a TCP master until it shuts down.
    Worker {
        /// Master address, e.g. 127.0.0.1:7601.
        #[arg(long)]
        master: String,
        /// Keep reconnecting this long after the last served run, so
        /// multi-seed experiments can restart the master between
        /// seeds.
        #[arg(long, default_value_t = 30.0)]
        grace_seconds: f64,
    },
    /// Evaluate a training checkpoint and print the report as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config or manifest describing the evaluation target.
        /// Defaults to the manifest two levels above the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        rollouts: u32,
        /// Base seed the per-rollout seeds derive from.
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two evaluation reports with a Mann-Whitney U test.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Render training traces into one SVG line chart.
    Plot {
        /// Trace CSV; repeat for multiple series.
        #[arg(long, required = true)]
        trace: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Median smoothing window (odd); 1 plots the raw curve only.
        #[arg(long, default_value_t = 9)]
        smooth: usize,
        /// Series label; repeat to match --trace by position. Defaults
        /// to the trace file stem.
        #[arg(long)]
        label: Vec<String>,
    },
    /// Print the hash of a noise-table window, for checking that two
    /// processes derive bitwise-identical tables.
    NoiseHash {
        #[arg(long)]
        seed: u64,
        /// Table length to generate.
        #[arg(long)]
        length: usize,
        /// Window start within the table.
        #[arg(long, default_value_t = 0)]
        offset: u64,
        /// Window length; defaults to the rest of the table.
        #[arg(long)]
        count: Option<usize>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Also covers --help/--version, which exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e {
            Error::InvalidConfig(_) | Error::Decode(_) | Error::Json(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, transport, listen, workers } => {
            train(&config, transport, &listen, workers)
        }
        Command::Worker { master, grace_seconds } => worker(&master, grace_seconds),
        Command::Evaluate { checkpoint, config, rollouts, seed, out } => {
            evaluate(&checkpoint, config.as_deref(), rollouts, seed, out.as_deref())
        }
        Command::Compare { a, b } => compare(&a, &b),
        Command::Plot { trace, out, smooth, label } => plot(&trace, &out, smooth, &label),
        Command::NoiseHash { seed, length, offset, count } => noise_hash(seed, length, offset, count),
    }
}

fn train(config: &Path, transport: Transport, listen: &str, workers: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let mut provider: Box<dyn BackendProvider> = match transport {
        Transport::Inproc => Box::new(InProcProvider),
        Transport::Tcp => Box::new(TcpProvider {
            listen: listen.to_owned(),
            min_workers: workers,
            registration_timeout: Duration::from_secs(120),
            config: TcpMasterConfig { min_workers: workers, ..TcpMasterConfig::default() },
        }),
    };
    for cfg in cfg.expand_mu_grid()? {
        log::info!("training {} into {}", cfg.run_id, cfg.out_dir.display());
        let artifacts = evostrat::experiment::run_experiment(&cfg, provider.as_mut())?;
        print_rows(&artifacts.rows);
        println!("artifacts: {}", artifacts.dir.display());
    }
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    println!(
        "{:<20} {:<9} {:<10} {:>6} {:>6} {:>12} {:>10} {:>4} {:>10} {:>8}",
        "run_id", "algorithm", "env", "seed", "budget", "mean", "std", "n", "frames", "wall_s",
    );
    for r in rows {
        println!(
            "{:<20} {:<9} {:<10} {:>6} {:>6} {:>12.4} {:>10.4} {:>4} {:>10} {:>8.1}",
            r.run_id,
            r.algorithm,
            r.env,
            r.seed,
            r.budget,
            r.mean,
            r.std,
            r.n_rollouts,
            r.frames,
            r.wall_seconds,
        );
    }
}

fn worker(master: &str, grace_seconds: f64) -> Result<()> {
    if !(0.0..=86_400.0).contains(&grace_seconds) {
        return Err(Error::invalid_config("grace_seconds must be in [0, 86400]"));
    }
    let grace = Duration::from_secs_f64(grace_seconds);
    let mut last_service = Instant::now();
    loop {
        match run_worker(master, |setup| EvaluatorSpec::from_value(&setup.evaluator)?.build()) {
            Ok(()) => {
                // Clean shutdown: the master finished one run; another
                // seed may follow shortly, so keep serving.
                log::info!("run finished, waiting for the next master");
                last_service = Instant::now();
            }
            Err(e) if last_service.elapsed() < grace => {
                log::debug!("retrying master {master}: {e}");
            }
            Err(e) => {
                log::info!("no master within the grace period: {e}");
                return Ok(());
            }
        }
        if last_service.elapsed() >= grace {
            return Ok(());
        }
        std::thread::sleep(Duration::from_millis(200));
    }
}

/// Pulls the run config from an explicit file or from the manifest the
/// runner leaves next to its checkpoints.
fn config_for_checkpoint(checkpoint: &Path, config: Option<&Path>) -> Result<RunConfig> {
    if let Some(path) = config {
        if let Ok(cfg) = RunConfig::load(path) {
            return Ok(cfg);
        }
        // Not a bare config; accept a manifest too.
        return config_from_manifest(path);
    }
    let manifest = checkpoint
        .parent()
        .and_then(Path::parent)
        .map(|run_dir| run_dir.join("manifest.json"))
        .filter(|p| p.exists())
        .ok_or_else(|| {
            Error::invalid_config(
                "no manifest found near the checkpoint; pass --config explicitly",
            )
        })?;
    config_from_manifest(&manifest)
}

fn config_from_manifest(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid_config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::invalid_config(format!("bad manifest {}: {e}", path.display())))?;
    let config = value
        .get("config")
        .ok_or_else(|| Error::invalid_config(format!("{} has no config section", path.display())))?;
    let cfg: RunConfig = serde_json::from_value(config.clone())
        .map_err(|e| Error::invalid_config(format!("bad config in {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn evaluate(
    checkpoint: &Path,
    config: Option<&Path>,
    rollouts: u32,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    if !checkpoint.exists() {
        return Err(Error::invalid_config(format!("no checkpoint at {}", checkpoint.display())));
    }
    let cfg = config_for_checkpoint(checkpoint, config)?;
    let cp = Checkpoint::load(checkpoint)?;
    let spec = cfg.evaluator_spec(&cp.stats)?;
    let evaluator = spec.build()?;
    let report = evaluate_params(evaluator.as_ref(), &cp.state.params, seed, rollouts)?;
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    log::info!(
        "mean {:.4} std {:.4} over {}/{} rollouts",
        report.mean,
        report.std,
        report.n_effective,
        report.n_rollouts,
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid_config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::invalid_config(format!("bad report {}: {e}", path.display())))
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let report_a = read_report(a)?;
    let report_b = read_report(b)?;
    let cmp = compare_reports(&report_a, &report_b)?;
    println!("{:<3} {:>12} {:>10} {:>4}  {}", "", "mean", "std", "n", "source");
    println!(
        "{:<3} {:>12.4} {:>10.4} {:>4}  {}",
        "a",
        cmp.mean_a,
        cmp.std_a,
        report_a.n_effective,
        a.display(),
    );
    println!(
        "{:<3} {:>12.4} {:>10.4} {:>4}  {}",
        "b",
        cmp.mean_b,
        cmp.std_b,
        report_b.n_effective,
        b.display(),
    );
    println!(
        "U = {:.1}  p = {:.6} ({})  significant: {}  better: {}",
        cmp.test.u,
        cmp.test.p,
        if cmp.test.exact { "exact" } else { "normal approximation" },
        if cmp.significant { "yes" } else { "no" },
        cmp.better,
    );
    Ok(())
}

fn plot(traces: &[PathBuf], out: &Path, smooth: usize, labels: &[String]) -> Result<()> {
    let mut series: Vec<Series> = Vec::new();
    for (i, path) in traces.iter().enumerate() {
        let label = labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map_or_else(|| format!("trace {i}"), |s| s.to_string_lossy().into_owned())
        });
        match read_trace_series(path, &label) {
            Ok(s) => series.push(s),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if series.is_empty() {
        return Err(Error::invalid_config("no readable trace with data points"));
    }
    write_chart(out, &series, "training score", "center score", smooth)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn noise_hash(seed: u64, length: usize, offset: u64, count: Option<usize>) -> Result<()> {
    let table = NoiseTable::generate(seed, length)?;
    let count = count.unwrap_or_else(|| length.saturating_sub(offset as usize));
    let window = table.raw_slice(offset, count)?;
    println!("{}", params_hash(window));
    Ok(())
}
