//! Executes a run config end to end: per seed, train to an
//! intermediate budget, snapshot and evaluate, continue to the final
//! budget, snapshot and evaluate again; then rank all seeds into one
//! result table.
//!
//! Every artifact lands under `out_dir/run_id/`:
//!
//! ```text
//! manifest.json              config plus every constant a rerun needs
//! scores.svg                 center score per iteration, all seeds
//! results.csv                one row per (seed, budget), sorted
//! seed_<s>/trace.csv         per-iteration training statistics
//! seed_<s>/checkpoint_a.bin  snapshot at the intermediate budget
//! seed_<s>/checkpoint_b.bin  snapshot at the final budget
//! seed_<s>/eval_a.json       evaluation of checkpoint_a
//! seed_<s>/eval_b.json       evaluation of checkpoint_b
//! ```
//!
//! A rerun in the same directory resumes: finished seeds are verified
//! from their artifacts, a seed with only the intermediate checkpoint
//! continues from it, and the trace file is pruned to the checkpoint
//! so replayed iterations never appear twice. Wall-clock budgets are
//! the exception to exact resumability: they restart with the process,
//! because elapsed time is not part of the saved state.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::canonical::run_canonical;
use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::distrib::{
    EvalBackend, InProcBackend, RunSetup, TableIdentity, TcpMaster, TcpMasterConfig,
    PROTOCOL_VERSION,
};
use crate::error::{Error, Result};
use crate::experiment::config::{
    needs_reference_stats, AlgorithmConfig, EvaluatorSpec, RunConfig, TargetConfig,
};
use crate::experiment::plot;
use crate::experiment::stats::{evaluate_params, EvalReport};
use crate::nes::run_nes;
use crate::noise::{NoiseTable, NOISE_BLOCK};
use crate::policy::{init_params, ReferenceStats, EPS_BN, INIT_STD};
use crate::preprocess::{CROP_TOP, FRAME_EDGE, RESIZE_HEIGHT, STACK_DEPTH};
use crate::rollout::{collect_reference_batch, REFERENCE_BATCH};
use crate::run::{Budget, EsState, IterationStats, RunObserver, RunOutcome, Verdict};
use crate::seeds;
use crate::vector::ParamVector;

/// Builds the evaluation backend for one seed's training run. The
/// runner itself never cares whether offspring are scored in-process
/// or across the network.
pub trait BackendProvider {
    fn backend(
        &mut self,
        spec: &EvaluatorSpec,
        table: &Arc<NoiseTable>,
        run_id: &str,
        run_seed: u64,
    ) -> Result<Box<dyn EvalBackend>>;
}

/// Scores offspring on local threads.
pub struct InProcProvider;

impl BackendProvider for InProcProvider {
    fn backend(
        &mut self,
        spec: &EvaluatorSpec,
        table: &Arc<NoiseTable>,
        _run_id: &str,
        _run_seed: u64,
    ) -> Result<Box<dyn EvalBackend>> {
        Ok(Box::new(InProcBackend::new(spec.build()?, table.clone())))
    }
}

/// Serves offspring evaluation to TCP workers. One master per seed is
/// started on the same listen address; workers reconnect between
/// seeds.
pub struct TcpProvider {
    pub listen: String,
    /// Workers to wait for before training starts.
    pub min_workers: usize,
    pub registration_timeout: Duration,
    pub config: TcpMasterConfig,
}

impl BackendProvider for TcpProvider {
    fn backend(
        &mut self,
        spec: &EvaluatorSpec,
        table: &Arc<NoiseTable>,
        run_id: &str,
        run_seed: u64,
    ) -> Result<Box<dyn EvalBackend>> {
        let setup = RunSetup {
            run_id: run_id.to_owned(),
            table: TableIdentity {
                table_seed: table.seed(),
                table_len: table.len() as u64,
                dim: spec.dim()? as u64,
            },
            run_seed,
            evaluator: spec.to_value()?,
        };
        let master = TcpMaster::start(&self.listen, setup, self.config.clone())?;
        master.wait_for_workers(self.min_workers, self.registration_timeout)?;
        Ok(Box::new(master))
    }
}

/// Dispatches one training run to the configured algorithm.
pub fn run_algorithm(
    algorithm: &AlgorithmConfig,
    state: &mut EsState,
    table: &NoiseTable,
    backend: &mut dyn EvalBackend,
    run_seed: u64,
    budget: &Budget,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    match algorithm {
        AlgorithmConfig::Canonical(c) => {
            run_canonical(c, state, table, backend, run_seed, budget, observer)
        }
        AlgorithmConfig::Nes(c) => run_nes(c, state, table, backend, run_seed, budget, observer),
    }
}

/// One line of the final result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    /// "a" for the intermediate budget, "b" for the final one.
    pub budget: String,
    pub mean: f64,
    pub std: f64,
    /// Successful evaluation rollouts behind `mean` and `std`.
    pub n_rollouts: u32,
    /// Training frames consumed up to the snapshot.
    pub frames: u64,
    /// Training wall-clock seconds up to the snapshot, summed across
    /// resumes.
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    /// Sorted like `results.csv`: budget "a" rows first, best mean
    /// first within each budget.
    pub rows: Vec<ResultRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TraceRow {
    iteration: u64,
    frames: u64,
    offspring_best: f64,
    offspring_mean: f64,
    center_score: f64,
    wall_seconds: f64,
}

const TRACE_HEADER: [&str; 6] = [
    "iteration",
    "frames",
    "offspring_best",
    "offspring_mean",
    "center_score",
    "wall_seconds",
];

/// Appends iteration rows to a trace file, offsetting the wall clock
/// so the column stays cumulative across stages and resumes.
struct TraceWriter {
    writer: csv::Writer<File>,
    offset: f64,
    last_wall: f64,
}

impl TraceWriter {
    fn open(path: &Path, offset: f64) -> Result<TraceWriter> {
        let fresh = !path.exists();
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(TRACE_HEADER)?;
        }
        Ok(TraceWriter { writer, offset, last_wall: offset })
    }

    fn append(&mut self, stats: &IterationStats) -> Result<()> {
        let wall = self.offset + stats.wall_seconds;
        self.writer.serialize(TraceRow {
            iteration: stats.iteration,
            frames: stats.frames,
            offspring_best: stats.offspring_best,
            offspring_mean: stats.offspring_mean,
            center_score: stats.center_score,
            wall_seconds: wall,
        })?;
        // Flushed per row so a crash loses at most the current iteration.
        self.writer.flush()?;
        self.last_wall = wall;
        Ok(())
    }
}

/// Drops trace rows past `max_iteration` (they will be replayed) and
/// returns the wall-clock offset where the kept trace ends.
fn prune_trace(path: &Path, max_iteration: u64) -> Result<f64> {
    if !path.exists() {
        return Ok(0.0);
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut kept: Vec<TraceRow> = Vec::new();
    for row in reader.deserialize() {
        let row: TraceRow = row?;
        if row.iteration <= max_iteration {
            kept.push(row);
        }
    }
    let offset = kept.last().map_or(0.0, |r| r.wall_seconds);
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(TRACE_HEADER)?;
    for row in &kept {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(offset)
}

/// Everything a rerun needs, pinned at run start. Contains no
/// timestamps or host details: two runs of the same config produce
/// byte-identical manifests.
#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    manifest_version: u32,
    protocol_version: u32,
    checkpoint_version: u32,
    config: RunConfig,
    constants: ManifestConstants,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ManifestConstants {
    noise_block: usize,
    init_std: f32,
    norm_epsilon: f32,
    reference_batch: usize,
    frame_edge: usize,
    resize_height: usize,
    crop_top: usize,
    stack_depth: usize,
    luma_weights: [f64; 3],
    pixel_scale: f64,
}

fn manifest_for(cfg: &RunConfig) -> Manifest {
    Manifest {
        manifest_version: 1,
        protocol_version: PROTOCOL_VERSION,
        checkpoint_version: FORMAT_VERSION,
        config: cfg.clone(),
        constants: ManifestConstants {
            noise_block: NOISE_BLOCK,
            init_std: INIT_STD,
            norm_epsilon: EPS_BN,
            reference_batch: REFERENCE_BATCH,
            frame_edge: FRAME_EDGE,
            resize_height: RESIZE_HEIGHT,
            crop_top: CROP_TOP,
            stack_depth: STACK_DEPTH,
            luma_weights: [0.299, 0.587, 0.114],
            pixel_scale: 1.0 / 255.0,
        },
    }
}

fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let manifest = manifest_for(cfg);
    let path = dir.join("manifest.json");
    if path.exists() {
        let existing: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .map_err(|e| Error::decode(format!("unreadable manifest {}: {e}", path.display())))?;
        if existing != manifest {
            return Err(Error::invalid_config(format!(
                "{} already holds a different experiment; refusing to mix artifacts",
                dir.display(),
            )));
        }
        return Ok(());
    }
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(Error::from)
}

/// Initial state and evaluator recipe for one seed. Policies draw
/// their parameters from the seed and, when they normalize, freeze
/// reference statistics from a random-play batch; benchmarks start at
/// the configured point.
fn init_target(cfg: &RunConfig, run_seed: u64) -> Result<(EsState, ReferenceStats)> {
    match &cfg.target {
        TargetConfig::Benchmark { dim, start_value, .. } => {
            let params = ParamVector::new(vec![*start_value; *dim])?;
            Ok((EsState::new(params), ReferenceStats::empty()))
        }
        TargetConfig::Policy { env, policy, .. } => {
            let params = init_params(policy, run_seed)?;
            let stats = if needs_reference_stats(policy) {
                let episode = cfg.target.episode()?;
                let mut environment = env.build();
                let batch = collect_reference_batch(
                    environment.as_mut(),
                    &episode,
                    seeds::reference_batch_seed(run_seed),
                    REFERENCE_BATCH,
                )?;
                crate::policy::freeze_reference_stats(policy, &params, &batch)?
            } else {
                ReferenceStats::empty()
            };
            Ok((EsState::new(params), stats))
        }
    }
}

/// Loads the stage evaluation if it already exists and still matches
/// the checkpoint; otherwise evaluates and writes it.
fn stage_eval(
    path: &Path,
    spec: &EvaluatorSpec,
    params: &ParamVector,
    base_seed: u64,
    rollouts: u32,
) -> Result<EvalReport> {
    let expected_ref = crate::distrib::params_hash(params.as_slice());
    if path.exists() {
        if let Ok(report) = serde_json::from_str::<EvalReport>(&std::fs::read_to_string(path)?) {
            if report.params_ref == expected_ref && report.n_rollouts == rollouts {
                return Ok(report);
            }
        }
        log::warn!("stale evaluation at {}, recomputing", path.display());
    }
    let evaluator = spec.build()?;
    let report = evaluate_params(evaluator.as_ref(), params, base_seed, rollouts)?;
    std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// How far the artifacts of a seed directory already reach.
enum ResumePoint {
    Fresh,
    AfterA,
    AfterB,
}

fn result_row(cfg: &RunConfig, seed: u64, budget: &str, report: &EvalReport, frames: u64, wall: f64) -> ResultRow {
    ResultRow {
        run_id: cfg.run_id.clone(),
        algorithm: cfg.algorithm.label().to_owned(),
        env: cfg.target.label(),
        seed,
        budget: budget.to_owned(),
        mean: report.mean,
        std: report.std,
        n_rollouts: report.n_effective,
        frames,
        wall_seconds: wall,
    }
}

/// Runs one experiment config to completion, resuming from whatever
/// artifacts already exist in its directory.
pub fn run_experiment(cfg: &RunConfig, provider: &mut dyn BackendProvider) -> Result<RunArtifacts> {
    cfg.validate()?;
    if cfg.mu_grid.is_some() {
        return Err(Error::invalid_config(
            "expand the mu grid into individual configs before running",
        ));
    }
    let dir = cfg.out_dir.join(&cfg.run_id);
    std::fs::create_dir_all(&dir)?;
    write_manifest(&dir, cfg)?;
    let table = Arc::new(NoiseTable::generate(cfg.table_seed, cfg.table_len)?);

    let mut rows = Vec::new();
    let mut trace_paths = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let trace_path = seed_dir.join("trace.csv");
        let cp_a_path = seed_dir.join("checkpoint_a.bin");
        let cp_b_path = seed_dir.join("checkpoint_b.bin");
        trace_paths.push(trace_path.clone());

        let (mut state, stats, resume) = if cp_b_path.exists() {
            let cp = Checkpoint::load(&cp_b_path)?;
            (cp.state, cp.stats, ResumePoint::AfterB)
        } else if cp_a_path.exists() {
            let cp = Checkpoint::load(&cp_a_path)?;
            (cp.state, cp.stats, ResumePoint::AfterA)
        } else {
            let (state, stats) = init_target(cfg, seed)?;
            if trace_path.exists() {
                // No checkpoint to resume from: the partial trace
                // belongs to a run that is starting over.
                std::fs::remove_file(&trace_path)?;
            }
            (state, stats, ResumePoint::Fresh)
        };
        let offset = prune_trace(&trace_path, state.iteration)?;
        let spec = cfg.evaluator_spec(&stats)?;

        // Stage A: train to the intermediate budget unless a snapshot
        // already covers it.
        let wall_a;
        let state_a;
        match resume {
            ResumePoint::Fresh => {
                let mut trace = TraceWriter::open(&trace_path, offset)?;
                let mut backend = provider.backend(&spec, &table, &cfg.run_id, seed)?;
                {
                    let mut observer = |stats: &IterationStats, _: &EsState| {
                        trace.append(stats)?;
                        Ok(Verdict::Continue)
                    };
                    run_algorithm(
                        &cfg.algorithm,
                        &mut state,
                        &table,
                        backend.as_mut(),
                        seed,
                        &cfg.budget_a,
                        &mut observer,
                    )?;
                }
                Checkpoint::new(state.clone(), stats.clone()).save(&cp_a_path)?;
                wall_a = trace.last_wall;
                state_a = state.clone();
            }
            ResumePoint::AfterA | ResumePoint::AfterB => {
                let cp = Checkpoint::load(&cp_a_path)?;
                wall_a = prune_trace_probe(&trace_path, cp.state.iteration)?;
                state_a = cp.state;
            }
        }
        let report_a = stage_eval(
            &seed_dir.join("eval_a.json"),
            &spec,
            &state_a.params,
            seed,
            cfg.eval_rollouts,
        )?;
        rows.push(result_row(cfg, seed, "a", &report_a, state_a.frames, wall_a));

        // Stage B: continue the same state to the final budget.
        let wall_b;
        match resume {
            ResumePoint::AfterB => {
                wall_b = prune_trace_probe(&trace_path, state.iteration)?;
            }
            _ => {
                let start = if matches!(resume, ResumePoint::Fresh) { wall_a } else { offset };
                let mut trace = TraceWriter::open(&trace_path, start)?;
                let mut backend = provider.backend(&spec, &table, &cfg.run_id, seed)?;
                {
                    let mut observer = |stats: &IterationStats, _: &EsState| {
                        trace.append(stats)?;
                        Ok(Verdict::Continue)
                    };
                    run_algorithm(
                        &cfg.algorithm,
                        &mut state,
                        &table,
                        backend.as_mut(),
                        seed,
                        &cfg.budget_b,
                        &mut observer,
                    )?;
                }
                Checkpoint::new(state.clone(), stats.clone()).save(&cp_b_path)?;
                wall_b = trace.last_wall;
            }
        }
        let report_b = stage_eval(
            &seed_dir.join("eval_b.json"),
            &spec,
            &state.params,
            seed,
            cfg.eval_rollouts,
        )?;
        rows.push(result_row(cfg, seed, "b", &report_b, state.frames, wall_b));
    }

    // Budget "a" rows first, best mean first within each budget.
    rows.sort_by(|x, y| x.budget.cmp(&y.budget).then(y.mean.total_cmp(&x.mean)));
    let mut writer = csv::Writer::from_path(dir.join("results.csv"))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;

    let series: Result<Vec<plot::Series>> = cfg
        .seeds
        .iter()
        .zip(&trace_paths)
        .map(|(seed, path)| plot::read_trace_series(path, &format!("seed {seed}")))
        .collect();
    match series {
        Ok(series) => plot::write_chart(
            &dir.join("scores.svg"),
            &series,
            &format!("{} on {}", cfg.algorithm.label(), cfg.target.label()),
            "center score",
            1,
        )?,
        // A finished-at-zero-iterations run has empty traces; skip the
        // chart rather than fail the experiment.
        Err(e) => log::warn!("skipping score chart: {e}"),
    }

    Ok(RunArtifacts { dir, rows })
}

/// Wall-clock reading of the trace at a checkpoint, without rewriting
/// anything.
fn prune_trace_probe(path: &Path, max_iteration: u64) -> Result<f64> {
    if !path.exists() {
        return Ok(0.0);
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut wall = 0.0;
    for row in reader.deserialize() {
        let row: TraceRow = row?;
        if row.iteration <= max_iteration {
            wall = row.wall_seconds;
        }
    }
    Ok(wall)
}

/// Runs the experiment with in-process evaluation.
pub fn run_experiment_in_proc(cfg: &RunConfig) -> Result<RunArtifacts> {
    run_experiment(cfg, &mut InProcProvider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::BenchmarkKind;
    use crate::canonical::CanonicalConfig;
    use crate::envs::EnvKind;
    use crate::policy::PolicySpec;

    fn sphere_config(dir: &Path) -> RunConfig {
        RunConfig {
            run_id: "sphere".into(),
            algorithm: AlgorithmConfig::Canonical(CanonicalConfig {
                lambda: 16,
                mu: 4,
                sigma: 0.1,
            }),
            target: TargetConfig::Benchmark {
                kind: BenchmarkKind::Sphere,
                dim: 6,
                start_value: 1.0,
                noise_sigma: 0.1,
            },
            budget_a: Budget::iterations(4),
            budget_b: Budget::iterations(9),
            seeds: vec![11, 12],
            table_seed: 5,
            table_len: 1 << 12,
            eval_rollouts: 3,
            mu_grid: None,
            out_dir: dir.to_path_buf(),
        }
    }

    fn read_rows(path: &Path) -> Vec<ResultRow> {
        let mut reader = csv::Reader::from_path(path).unwrap();
        reader.deserialize().map(|r| r.unwrap()).collect()
    }

    #[test]
    fn produces_the_full_artifact_tree() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = sphere_config(tmp.path());
        let artifacts = run_experiment_in_proc(&cfg).unwrap();
        let dir = &artifacts.dir;
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("results.csv").exists());
        assert!(dir.join("scores.svg").exists());
        for seed in [11u64, 12] {
            let sd = dir.join(format!("seed_{seed}"));
            for name in ["trace.csv", "checkpoint_a.bin", "checkpoint_b.bin", "eval_a.json", "eval_b.json"] {
                assert!(sd.join(name).exists(), "missing {name} for seed {seed}");
            }
            let cp_a = Checkpoint::load(&sd.join("checkpoint_a.bin")).unwrap();
            let cp_b = Checkpoint::load(&sd.join("checkpoint_b.bin")).unwrap();
            assert_eq!(cp_a.state.iteration, 4);
            assert_eq!(cp_b.state.iteration, 9);
            let series = plot::read_trace_series(&sd.join("trace.csv"), "t").unwrap();
            assert_eq!(series.points.len(), 9, "trace covers both stages seamlessly");
            assert_eq!(series.points[0].0, 1.0);
            assert_eq!(series.points[8].0, 9.0);
        }
        let rows = read_rows(&dir.join("results.csv"));
        assert_eq!(rows.len(), 4);
        assert_eq!(artifacts.rows, rows);
        assert!(rows[..2].iter().all(|r| r.budget == "a"));
        assert!(rows[2..].iter().all(|r| r.budget == "b"));
        assert!(rows[0].mean >= rows[1].mean);
        assert!(rows[2].mean >= rows[3].mean);
        assert!(rows.iter().all(|r| r.n_rollouts == 3));
        assert!(rows.iter().all(|r| r.algorithm == "canonical" && r.env == "sphere"));
        // Later snapshots of a converging run should not be worse.
        let mean_a: f64 = rows[..2].iter().map(|r| r.mean).sum::<f64>() / 2.0;
        let mean_b: f64 = rows[2..].iter().map(|r| r.mean).sum::<f64>() / 2.0;
        assert!(mean_b >= mean_a, "sphere training went backwards: {mean_a} -> {mean_b}");
    }

    #[test]
    fn rerun_is_idempotent_and_resume_matches_uninterrupted() {
        let tmp = tempfile::tempdir().unwrap();
        let full_cfg = sphere_config(&tmp.path().join("full"));
        let full = run_experiment_in_proc(&full_cfg).unwrap();

        // Same config, interrupted after stage A: drop stage B
        // artifacts to simulate the crash, then rerun.
        let resumed_cfg = sphere_config(&tmp.path().join("resumed"));
        run_experiment_in_proc(&resumed_cfg).unwrap();
        let rdir = resumed_cfg.out_dir.join("sphere");
        for seed in [11u64, 12] {
            std::fs::remove_file(rdir.join(format!("seed_{seed}/checkpoint_b.bin"))).unwrap();
            std::fs::remove_file(rdir.join(format!("seed_{seed}/eval_b.json"))).unwrap();
        }
        let resumed = run_experiment_in_proc(&resumed_cfg).unwrap();

        for seed in [11u64, 12] {
            let full_cp =
                Checkpoint::load(&full.dir.join(format!("seed_{seed}/checkpoint_b.bin"))).unwrap();
            let res_cp =
                Checkpoint::load(&rdir.join(format!("seed_{seed}/checkpoint_b.bin"))).unwrap();
            assert_eq!(
                full_cp.state.params, res_cp.state.params,
                "resumed parameters must match the uninterrupted run bitwise"
            );
            assert_eq!(full_cp.state.frames, res_cp.state.frames);
            // Trace rows must agree on everything except wall clock.
            let read = |dir: &Path| {
                let mut reader =
                    csv::Reader::from_path(dir.join(format!("seed_{seed}/trace.csv"))).unwrap();
                reader
                    .deserialize::<TraceRow>()
                    .map(|r| {
                        let mut row = r.unwrap();
                        row.wall_seconds = 0.0;
                        row
                    })
                    .collect::<Vec<_>>()
            };
            assert_eq!(read(&full.dir), read(&rdir));
        }
        // A third run with everything present changes nothing and
        // reuses the stored evaluations.
        let again = run_experiment_in_proc(&resumed_cfg).unwrap();
        assert_eq!(again.rows, resumed.rows);
    }

    #[test]
    fn refuses_to_mix_different_experiments_in_one_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = sphere_config(tmp.path());
        run_experiment_in_proc(&cfg).unwrap();
        let mut other = sphere_config(tmp.path());
        other.table_seed = 6;
        let err = run_experiment_in_proc(&other).unwrap_err();
        assert!(err.to_string().contains("different experiment"), "got: {err}");
    }

    #[test]
    fn policy_target_with_normalization_trains_and_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = sphere_config(tmp.path());
        cfg.run_id = "cartpole".into();
        cfg.algorithm = AlgorithmConfig::Canonical(CanonicalConfig {
            lambda: 8,
            mu: 2,
            sigma: 0.1,
        });
        // A normalized hidden layer forces the reference-batch path
        // through the runner.
        let mut policy = PolicySpec::mlp(4, &[8], 2);
        policy.layers[0].norm = crate::policy::Norm::Shift;
        cfg.target = TargetConfig::Policy { env: EnvKind::CartPole, policy, episode: None };
        cfg.budget_a = Budget::iterations(2);
        cfg.budget_b = Budget::iterations(3);
        cfg.table_len = 1 << 12;
        cfg.eval_rollouts = 2;
        cfg.validate().unwrap();

        let artifacts = run_experiment_in_proc(&cfg).unwrap();
        assert_eq!(artifacts.rows.len(), 4);
        let cp = Checkpoint::load(
            &artifacts.dir.join("seed_11/checkpoint_b.bin"),
        )
        .unwrap();
        assert!(!cp.stats.layers.is_empty(), "policy checkpoint must carry frozen stats");
        assert!(cp.state.frames > 0, "episodes must consume frames");

        // Reruns reuse the artifacts unchanged.
        let again = run_experiment_in_proc(&cfg).unwrap();
        for (x, y) in again.rows.iter().zip(&artifacts.rows) {
            assert_eq!(x, y, "rerun row diverged");
        }
    }

    #[test]
    fn trace_pruning_drops_replayed_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("trace.csv");
        let mut w = TraceWriter::open(&path, 0.0).unwrap();
        for i in 1..=5 {
            w.append(&IterationStats {
                iteration: i,
                offspring_best: i as f64,
                offspring_mean: 0.0,
                center_score: 0.0,
                frames: i * 10,
                wall_seconds: i as f64 * 0.5,
            })
            .unwrap();
        }
        drop(w);
        let offset = prune_trace(&path, 3).unwrap();
        assert_eq!(offset, 1.5);
        let mut reader = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<TraceRow> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.last().unwrap().iteration, 3);
        // Appending afterwards continues the wall clock from the offset.
        let mut w = TraceWriter::open(&path, offset).unwrap();
        w.append(&IterationStats {
            iteration: 4,
            offspring_best: 0.0,
            offspring_mean: 0.0,
            center_score: 0.0,
            frames: 40,
            wall_seconds: 0.25,
        })
        .unwrap();
        assert_eq!(w.last_wall, 1.75);
    }
}
