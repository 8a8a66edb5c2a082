//! TCP master/worker transport.
//!
//! The master owns the run state and implements [`EvalBackend`] by
//! fanning assignments out to registered workers. Workers reconstruct
//! the noise table from its seed, pull center parameters once per
//! iteration (validated by hash), score their slots, and report back.
//!
//! Collection is idempotent by slot: the first report for a slot wins,
//! so re-dispatch after a worker death or a straggler timeout can only
//! fill holes, never change accepted scores. Combined with rollout
//! seeds that depend on `(run_seed, iteration, slot)` alone, the scores
//! are bitwise identical to the in-process backend no matter which
//! worker evaluates what, or how often.

use super::protocol::{
    params_hash, read_message, write_message, Message, RunSetup, WireAssignment, WireReport,
    PROTOCOL_VERSION,
};
use super::{
    check_slot_order, dispatch_iteration, evaluate_center_slot, evaluate_slot, EvalBackend,
    IterationJob, SlotScore,
};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::noise::{NoiseIndex, NoiseTable};
use crate::vector::ParamVector;
use rayon::prelude::*;
use std::collections::{HashMap, HashSet, VecDeque};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{sleep, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Clone, Debug)]
pub struct TcpMasterConfig {
    /// Workers that must be registered before the first dispatch.
    pub min_workers: usize,
    /// Straggler timeout until iteration-duration medians exist; also
    /// the patience for waiting on worker registration.
    pub base_timeout: Duration,
    /// Straggler timeout as a multiple of the median iteration time.
    pub straggler_factor: f64,
}

impl Default for TcpMasterConfig {
    fn default() -> Self {
        TcpMasterConfig {
            min_workers: 1,
            base_timeout: Duration::from_secs(30),
            straggler_factor: 10.0,
        }
    }
}

enum Event {
    Registered,
    Report(u64, WireReport),
    Center { iteration: u64, score: f64, frames: u64 },
    Dead(u64),
}

struct WorkerHandle {
    writer: Arc<Mutex<TcpStream>>,
    alive: Arc<AtomicBool>,
}

/// State shared with the accept and per-worker IO threads.
struct Shared {
    setup: RunSetup,
    /// Center parameters served to `ParamsRequest`: (iteration, values).
    params: Mutex<(u64, Arc<Vec<f32>>)>,
    workers: Mutex<HashMap<u64, WorkerHandle>>,
    next_worker: AtomicU64,
    stop: AtomicBool,
    events: Sender<Event>,
}

pub struct TcpMaster {
    shared: Arc<Shared>,
    events: Receiver<Event>,
    accept_thread: Option<JoinHandle<()>>,
    local_addr: std::net::SocketAddr,
    config: TcpMasterConfig,
    durations: Vec<f64>,
}

impl TcpMaster {
    /// Binds `listen` (e.g. "127.0.0.1:0") and starts accepting
    /// workers. Evaluation only begins on `evaluate_population`.
    pub fn start(listen: &str, setup: RunSetup, config: TcpMasterConfig) -> Result<TcpMaster> {
        let listener = TcpListener::bind(listen)?;
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let (tx, rx) = channel();
        let shared = Arc::new(Shared {
            setup,
            params: Mutex::new((u64::MAX, Arc::new(Vec::new()))),
            workers: Mutex::new(HashMap::new()),
            next_worker: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            events: tx,
        });
        let accept_shared = shared.clone();
        let accept_thread = std::thread::spawn(move || accept_loop(listener, accept_shared));
        Ok(TcpMaster {
            shared,
            events: rx,
            accept_thread: Some(accept_thread),
            local_addr,
            config,
            durations: Vec::new(),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn worker_count(&self) -> usize {
        self.shared.workers.lock().unwrap().len()
    }

    /// Blocks until at least `n` workers are registered or `timeout`
    /// passes.
    pub fn wait_for_workers(&self, n: usize, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        while self.worker_count() < n {
            if Instant::now() > deadline {
                return Err(Error::runtime(format!(
                    "only {} of {n} workers registered in time",
                    self.worker_count()
                )));
            }
            sleep(Duration::from_millis(5));
        }
        Ok(())
    }

    /// Sends `Shutdown` to every worker and stops accepting.
    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let workers = self.shared.workers.lock().unwrap();
        for handle in workers.values() {
            let mut writer = handle.writer.lock().unwrap();
            let _ = write_message(&mut *writer, &Message::Shutdown);
        }
        drop(workers);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    fn straggler_timeout(&self) -> Duration {
        if self.durations.is_empty() {
            return self.config.base_timeout;
        }
        let mut sorted = self.durations.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let scaled = Duration::from_secs_f64((median * self.config.straggler_factor).max(0.001));
        scaled.max(Duration::from_millis(50))
    }

    fn live_workers(&self) -> Vec<(u64, Arc<Mutex<TcpStream>>)> {
        self.shared
            .workers
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, h)| h.alive.load(Ordering::SeqCst))
            .map(|(&id, h)| (id, h.writer.clone()))
            .collect()
    }

    fn publish_params(&self, iteration: u64, center: &ParamVector) -> String {
        let values = Arc::new(center.as_slice().to_vec());
        let hash = params_hash(&values);
        *self.shared.params.lock().unwrap() = (iteration, values);
        hash
    }

    fn mark_dead(&self, worker: u64) {
        if let Some(handle) = self.shared.workers.lock().unwrap().remove(&worker) {
            handle.alive.store(false, Ordering::SeqCst);
        }
    }

    /// Sends chunked assignments round-robin over `workers`, recording
    /// which slots each worker owes. Send failures mark the worker dead
    /// and the affected slots are returned for retry.
    fn send_assignments(
        &self,
        job: &IterationJob<'_>,
        hash: &str,
        pending: &[(usize, NoiseIndex)],
        owed: &mut HashMap<u64, HashSet<usize>>,
    ) -> Vec<(usize, NoiseIndex)> {
        let workers = self.live_workers();
        if workers.is_empty() {
            return pending.to_vec();
        }
        let assignments = dispatch_iteration(pending, workers.len());
        let mut retry = Vec::new();
        for (assignment, (worker_id, writer)) in assignments.iter().zip(&workers) {
            let wire = WireAssignment {
                run_id: self.shared.setup.run_id.clone(),
                iteration: job.iteration,
                sigma: job.sigma,
                slots: assignment.slots.iter().map(|&s| s as u64).collect(),
                indices: assignment.indices.clone(),
                params_hash: hash.to_string(),
            };
            let sent = {
                let mut writer = writer.lock().unwrap();
                write_message(&mut *writer, &Message::Assign(wire))
            };
            match sent {
                Ok(()) => {
                    owed.entry(*worker_id)
                        .or_default()
                        .extend(assignment.slots.iter().copied());
                }
                Err(err) => {
                    log::warn!("worker {worker_id} dropped during dispatch: {err}");
                    self.mark_dead(*worker_id);
                    retry.extend(
                        assignment
                            .slots
                            .iter()
                            .copied()
                            .zip(assignment.indices.iter().copied()),
                    );
                }
            }
        }
        retry
    }
}

impl Drop for TcpMaster {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl EvalBackend for TcpMaster {
    fn evaluate_population(&mut self, job: &IterationJob<'_>) -> Result<Vec<SlotScore>> {
        let started = Instant::now();
        let hash = self.publish_params(job.iteration, job.center);
        let n = job.indices.len();
        let mut scores: Vec<Option<SlotScore>> = vec![None; n];
        let mut collected = 0usize;
        let mut owed: HashMap<u64, HashSet<usize>> = HashMap::new();
        let mut pending: Vec<(usize, NoiseIndex)> =
            job.indices.iter().copied().enumerate().collect();
        let mut starved_since: Option<Instant> = None;
        let mut last_progress = Instant::now();

        while collected < n {
            // (Re-)dispatch anything not yet assigned to a live worker.
            if !pending.is_empty() {
                let still_unsent = self.send_assignments(job, &hash, &pending, &mut owed);
                let dispatched = still_unsent.len() < pending.len();
                pending = still_unsent;
                if dispatched {
                    last_progress = Instant::now();
                }
            }
            if self.live_workers().is_empty() {
                let since = *starved_since.get_or_insert_with(Instant::now);
                if since.elapsed() > self.config.base_timeout {
                    return Err(Error::runtime(
                        "all workers dead and none re-registered in time",
                    ));
                }
            } else {
                starved_since = None;
            }

            match self.events.recv_timeout(Duration::from_millis(20)) {
                Ok(Event::Report(worker, report)) => {
                    if report.run_id != self.shared.setup.run_id
                        || report.iteration != job.iteration
                    {
                        continue;
                    }
                    for note in &report.notes {
                        log::warn!("worker {worker}: {note}");
                    }
                    if let Some(owed_slots) = owed.get_mut(&worker) {
                        for s in &report.scores {
                            owed_slots.remove(&s.slot);
                        }
                    }
                    for s in report.scores {
                        if s.slot < n && scores[s.slot].is_none() {
                            scores[s.slot] = Some(s);
                            collected += 1;
                        }
                    }
                    last_progress = Instant::now();
                }
                Ok(Event::Dead(worker)) => {
                    self.mark_dead(worker);
                    if let Some(owed_slots) = owed.remove(&worker) {
                        for slot in owed_slots {
                            if scores[slot].is_none() {
                                pending.push((slot, job.indices[slot]));
                            }
                        }
                        pending.sort_by_key(|&(slot, _)| slot);
                        pending.dedup_by_key(|&mut (slot, _)| slot);
                    }
                }
                Ok(Event::Registered) | Ok(Event::Center { .. }) => {}
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::runtime("master event channel closed"));
                }
            }

            // Straggler handling: no progress for too long means some
            // worker sits on its slots; hand the holes to everyone
            // still alive. Idempotent collection absorbs duplicates.
            if collected < n && last_progress.elapsed() > self.straggler_timeout() {
                let holes: Vec<(usize, NoiseIndex)> = (0..n)
                    .filter(|&slot| scores[slot].is_none())
                    .map(|slot| (slot, job.indices[slot]))
                    .collect();
                log::warn!(
                    "straggler timeout at iteration {}: re-dispatching {} slots",
                    job.iteration,
                    holes.len()
                );
                pending = holes;
                owed.clear();
                last_progress = Instant::now();
            }
        }

        self.durations.push(started.elapsed().as_secs_f64());
        let scores: Vec<SlotScore> = scores.into_iter().map(|s| s.unwrap()).collect();
        check_slot_order(&scores, n)?;
        Ok(scores)
    }

    fn evaluate_center(
        &mut self,
        iteration: u64,
        center: &ParamVector,
        _run_seed: u64,
    ) -> Result<SlotScore> {
        let hash = self.publish_params(iteration, center);
        let deadline = Instant::now() + self.config.base_timeout;
        let mut cursor = 0usize;
        loop {
            let workers = self.live_workers();
            if workers.is_empty() {
                if Instant::now() > deadline {
                    return Err(Error::runtime("no live worker for center evaluation"));
                }
                sleep(Duration::from_millis(5));
                continue;
            }
            let (worker_id, writer) = workers[cursor % workers.len()].clone();
            cursor += 1;
            let sent = {
                let mut writer = writer.lock().unwrap();
                write_message(
                    &mut *writer,
                    &Message::CenterRequest { iteration, params_hash: hash.clone() },
                )
            };
            if let Err(err) = sent {
                log::warn!("worker {worker_id} dropped during center dispatch: {err}");
                self.mark_dead(worker_id);
                continue;
            }
            let attempt_deadline = Instant::now() + self.straggler_timeout();
            while Instant::now() < attempt_deadline {
                match self.events.recv_timeout(Duration::from_millis(20)) {
                    Ok(Event::Center { iteration: it, score, frames }) if it == iteration => {
                        return Ok(SlotScore { slot: 0, score, frames });
                    }
                    Ok(Event::Dead(worker)) => {
                        self.mark_dead(worker);
                        if worker == worker_id {
                            break;
                        }
                    }
                    Ok(_) => {}
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(Error::runtime("master event channel closed"));
                    }
                }
            }
            if Instant::now() > deadline {
                return Err(Error::runtime("center evaluation timed out"));
            }
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                std::thread::spawn(move || {
                    if let Err(err) = serve_worker(stream, shared) {
                        log::debug!("worker connection ended: {err}");
                    }
                });
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                sleep(Duration::from_millis(10));
            }
            Err(err) => {
                log::warn!("listener error: {err}");
                break;
            }
        }
    }
}

/// Master-side connection handler: handshake, register, then pump
/// messages into the event channel until the socket dies.
fn serve_worker(mut stream: TcpStream, shared: Arc<Shared>) -> Result<()> {
    stream.set_nodelay(true)?;
    let hello = read_message(&mut stream)?;
    let Message::Hello { protocol, table } = hello else {
        return Err(Error::Handshake("expected Hello".into()));
    };
    if protocol != PROTOCOL_VERSION {
        let reason = format!(
            "protocol {protocol} unsupported, master speaks {PROTOCOL_VERSION}"
        );
        let _ = write_message(&mut stream, &Message::Refuse { reason: reason.clone() });
        return Err(Error::Handshake(reason));
    }
    if let Some(t) = table {
        if t != shared.setup.table {
            let reason = format!(
                "table mismatch: worker has {t:?}, run needs {:?}",
                shared.setup.table
            );
            let _ = write_message(&mut stream, &Message::Refuse { reason: reason.clone() });
            return Err(Error::Handshake(reason));
        }
    }
    write_message(&mut stream, &Message::Setup(shared.setup.clone()))?;
    match read_message(&mut stream)? {
        Message::Ready => {}
        Message::Refuse { reason } => return Err(Error::Handshake(reason)),
        _ => return Err(Error::Handshake("expected Ready".into())),
    }

    let id = shared.next_worker.fetch_add(1, Ordering::SeqCst);
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let alive = Arc::new(AtomicBool::new(true));
    shared
        .workers
        .lock()
        .unwrap()
        .insert(id, WorkerHandle { writer: writer.clone(), alive: alive.clone() });
    let _ = shared.events.send(Event::Registered);
    log::info!("worker {id} registered");

    loop {
        match read_message(&mut stream) {
            Ok(Message::Report(report)) => {
                let _ = shared.events.send(Event::Report(id, report));
            }
            Ok(Message::CenterReport { iteration, score, frames }) => {
                let _ = shared.events.send(Event::Center { iteration, score, frames });
            }
            Ok(Message::ParamsRequest { .. }) => {
                // Serve whatever iteration is current; the worker
                // validates against the assignment hash.
                let (iteration, values) = {
                    let guard = shared.params.lock().unwrap();
                    (guard.0, guard.1.clone())
                };
                let msg = Message::Params { iteration, values: values.as_ref().clone() };
                let mut writer = writer.lock().unwrap();
                if write_message(&mut *writer, &msg).is_err() {
                    break;
                }
            }
            Ok(other) => {
                log::debug!("ignoring unexpected message from worker {id}: {other:?}");
            }
            Err(_) => break,
        }
    }
    alive.store(false, Ordering::SeqCst);
    shared.workers.lock().unwrap().remove(&id);
    let _ = shared.events.send(Event::Dead(id));
    log::info!("worker {id} disconnected");
    Ok(())
}

/// Connects to a master and evaluates assignments until `Shutdown` or
/// connection loss. `factory` turns the opaque evaluator description
/// from the setup into a concrete evaluator.
pub fn run_worker<F>(master_addr: &str, factory: F) -> Result<()>
where
    F: FnOnce(&RunSetup) -> Result<Box<dyn Evaluator>>,
{
    let mut stream = TcpStream::connect(master_addr)?;
    stream.set_nodelay(true)?;
    write_message(&mut stream, &Message::Hello { protocol: PROTOCOL_VERSION, table: None })?;
    let setup = match read_message(&mut stream)? {
        Message::Setup(setup) => setup,
        Message::Refuse { reason } => return Err(Error::Handshake(reason)),
        other => return Err(Error::Handshake(format!("expected Setup, got {other:?}"))),
    };
    let evaluator = match factory(&setup) {
        Ok(e) => e,
        Err(err) => {
            let reason = format!("cannot build evaluator: {err}");
            let _ = write_message(&mut stream, &Message::Refuse { reason: reason.clone() });
            return Err(Error::Handshake(reason));
        }
    };
    if evaluator.dim() as u64 != setup.table.dim {
        let reason = format!(
            "evaluator dimension {} does not match run dimension {}",
            evaluator.dim(),
            setup.table.dim
        );
        let _ = write_message(&mut stream, &Message::Refuse { reason: reason.clone() });
        return Err(Error::Handshake(reason));
    }
    log::info!("building noise table ({} entries)", setup.table.table_len);
    let table = NoiseTable::generate(setup.table.table_seed, setup.table.table_len as usize)?;
    write_message(&mut stream, &Message::Ready)?;

    let mut inbox: VecDeque<Message> = VecDeque::new();
    let mut cached: Option<(String, Arc<ParamVector>)> = None;

    loop {
        let msg = match inbox.pop_front() {
            Some(m) => m,
            None => read_message(&mut stream)?,
        };
        match msg {
            Message::Shutdown => return Ok(()),
            Message::Refuse { reason } => return Err(Error::Handshake(reason)),
            Message::Assign(assign) => {
                if assign.run_id != setup.run_id {
                    continue;
                }
                let Some(center) =
                    fetch_params(&mut stream, &mut inbox, &mut cached, &assign.params_hash)?
                else {
                    log::warn!(
                        "skipping stale assignment for iteration {}",
                        assign.iteration
                    );
                    continue;
                };
                let started = Instant::now();
                let scores: Vec<SlotScore> = assign
                    .slots
                    .par_iter()
                    .zip(assign.indices.par_iter())
                    .map(|(&slot, &index)| {
                        evaluate_slot(
                            evaluator.as_ref(),
                            &table,
                            &center,
                            assign.sigma,
                            setup.run_seed,
                            assign.iteration,
                            slot as usize,
                            index,
                        )
                    })
                    .collect();
                let notes = scores
                    .iter()
                    .filter(|s| s.score == crate::eval::WORST_SCORE)
                    .map(|s| format!("slot {} failed, sentinel score reported", s.slot))
                    .collect();
                let report = WireReport {
                    run_id: setup.run_id.clone(),
                    iteration: assign.iteration,
                    worker: 0,
                    scores,
                    wall_seconds: started.elapsed().as_secs_f64(),
                    notes,
                };
                write_message(&mut stream, &Message::Report(report))?;
            }
            Message::CenterRequest { iteration, params_hash: expected } => {
                let Some(center) = fetch_params(&mut stream, &mut inbox, &mut cached, &expected)?
                else {
                    log::warn!("skipping stale center request for iteration {iteration}");
                    continue;
                };
                let result =
                    evaluate_center_slot(evaluator.as_ref(), &center, setup.run_seed, iteration);
                write_message(
                    &mut stream,
                    &Message::CenterReport {
                        iteration,
                        score: result.score,
                        frames: result.frames,
                    },
                )?;
            }
            Message::Params { .. } => {}
            other => {
                log::debug!("worker ignoring {other:?}");
            }
        }
    }
}

/// Returns center parameters whose hash matches `expected`, pulling
/// from the master on cache miss. `None` means the master has moved on
/// and this assignment is stale. Messages arriving while waiting are
/// queued, not dropped.
fn fetch_params(
    stream: &mut TcpStream,
    inbox: &mut VecDeque<Message>,
    cached: &mut Option<(String, Arc<ParamVector>)>,
    expected: &str,
) -> Result<Option<Arc<ParamVector>>> {
    if let Some((hash, params)) = cached.as_ref() {
        if hash == expected {
            return Ok(Some(params.clone()));
        }
    }
    for _ in 0..3 {
        write_message(stream, &Message::ParamsRequest { iteration: 0 })?;
        loop {
            match read_message(stream)? {
                Message::Params { values, .. } => {
                    let hash = params_hash(&values);
                    let params = Arc::new(ParamVector::new(values)?);
                    let matched = hash == expected;
                    *cached = Some((hash, params.clone()));
                    if matched {
                        return Ok(Some(params));
                    }
                    break;
                }
                other => inbox.push_back(other),
            }
        }
        sleep(Duration::from_millis(10));
    }
    Ok(None)
}
