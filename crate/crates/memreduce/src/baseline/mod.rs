//! A disk-based execution engine with classic batch mechanics, used as
//! the comparison point for the resident engine.
//!
//! Three deliberate differences from [`crate::engine::Engine`]:
//!
//! * Nothing is cached between jobs. Every input split is re-read from
//!   the backing store through its reader, and every output part lands on
//!   disk, temporary or not.
//! * Map output is serialized unconditionally: each task cuts its output
//!   into sorted runs and spills them to scratch files segmented by
//!   partition. Reducers fetch their segment from every spill and merge,
//!   with an external merge pass whenever the run count exceeds the
//!   configured fan-in.
//! * Reduce partitions have no stable home. Each job draws a fresh
//!   seeded random partition-to-place assignment, the way a scheduler
//!   with no memory of the previous job would.
//!
//! Jobs, inputs, outputs, and metrics use the same types as the resident
//! engine, so a workload can run unchanged on either and be compared
//! record for record.

mod spill;

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cachefs::{CacheStore, FsHandle, FsMode};
use crate::engine::run::{
    claim_outputs, fmt_err, fs_err, part_path, partitioned_groups, run_user, write_named_parts,
    EventLog,
};
use crate::engine::task::{
    BufferSink, GroupEqFn, PartitionFn, SortFn, TaskContext, TaskInfo,
};
use crate::engine::{
    EventKind, JobConfig, JobError, JobMetrics, JobResult, JobStatus, MapFn, ReduceFn,
};
use crate::formats::{compute_splits, tag_splits, InputFormatSpec, InputSplit};
use crate::kvstore::KvStore;
use crate::types::{Key, Pair, PartitionId, PlaceId};
use crate::util::mix64;

use spill::SpillHandle;

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub num_places: u32,
    pub workers_per_place: u32,
    /// Durable dataset storage, shared by all places.
    pub backing_root: PathBuf,
    /// Where spill and merge files live; wiped after every job.
    pub scratch_root: PathBuf,
    /// Map output is cut into sorted runs of at most this many records,
    /// each spilled to its own file.
    pub spill_threshold_records: usize,
    /// The most runs a reduce task merges at once; more than this forces
    /// intermediate merge passes through scratch files.
    pub merge_fan_in: usize,
    /// Seeds the per-job randomized partition-to-place assignment.
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(num_places: u32, backing_root: PathBuf, scratch_root: PathBuf) -> BaselineConfig {
        BaselineConfig {
            num_places,
            workers_per_place: 2,
            backing_root,
            scratch_root,
            spill_threshold_records: 64 * 1024,
            merge_fan_in: 16,
            seed: 0xBA5E,
        }
    }
}

struct LifeState {
    down: bool,
    in_flight: bool,
}

/// The disk-based engine. Accepts the same [`JobConfig`] as the resident
/// engine and reports through the same [`JobResult`].
pub struct BaselineEngine {
    config: BaselineConfig,
    cache: Arc<CacheStore>,
    fs: Vec<FsHandle>,
    state: Mutex<LifeState>,
    job_seq: AtomicU64,
}

impl BaselineEngine {
    pub fn start(config: BaselineConfig) -> Result<BaselineEngine, JobError> {
        if config.num_places == 0 {
            return Err(JobError::InvalidConfig("need at least one place".into()));
        }
        if config.workers_per_place == 0 {
            return Err(JobError::InvalidConfig(
                "need at least one worker per place".into(),
            ));
        }
        if config.spill_threshold_records == 0 {
            return Err(JobError::InvalidConfig(
                "spill threshold must be positive".into(),
            ));
        }
        if config.merge_fan_in < 2 {
            return Err(JobError::InvalidConfig(
                "merge fan-in must be at least 2".into(),
            ));
        }
        std::fs::create_dir_all(&config.backing_root)
            .map_err(|e| JobError::Storage(format!("creating backing root: {e}")))?;
        std::fs::create_dir_all(&config.scratch_root)
            .map_err(|e| JobError::Storage(format!("creating scratch root: {e}")))?;
        // The shared filesystem layer stays, but with its cache switched
        // off every read goes to the backing store and every write must
        // land there to be seen again.
        let cache = CacheStore::new();
        cache.set_enabled(false);
        let kv = KvStore::new_in_process(config.num_places);
        let fs = (0..config.num_places)
            .map(|p| {
                FsHandle::new(
                    PlaceId(p),
                    FsMode::Dual,
                    config.backing_root.clone(),
                    Arc::clone(&cache),
                    kv.clone(),
                )
            })
            .collect();
        Ok(BaselineEngine {
            config,
            cache,
            fs,
            state: Mutex::new(LifeState {
                down: false,
                in_flight: false,
            }),
            job_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn num_places(&self) -> u32 {
        self.config.num_places
    }

    pub fn cache(&self) -> &Arc<CacheStore> {
        &self.cache
    }

    pub fn kv(&self) -> &KvStore {
        self.fs[0].kv()
    }

    pub fn fs(&self, place: PlaceId) -> &FsHandle {
        &self.fs[place.0 as usize]
    }

    pub fn fs_home(&self) -> &FsHandle {
        &self.fs[0]
    }

    /// Runs one job to completion. `Err` means the job never ran; a job
    /// that ran and failed comes back as `Ok` with a failed status.
    pub fn submit_job(&self, job: &JobConfig) -> Result<JobResult, JobError> {
        {
            let mut state = self.state.lock();
            if state.down {
                return Err(JobError::EngineDown);
            }
            if state.in_flight {
                return Err(JobError::JobInFlight);
            }
            state.in_flight = true;
        }
        let _clear = ClearInFlight(self);
        Ok(run_baseline_job(self, job))
    }

    /// Runs jobs in order, stopping after the first one that fails.
    pub fn run_job_sequence(&self, jobs: &[JobConfig]) -> Result<Vec<JobResult>, JobError> {
        let mut results = Vec::with_capacity(jobs.len());
        for job in jobs {
            let result = self.submit_job(job)?;
            let ok = result.is_success();
            results.push(result);
            if !ok {
                break;
            }
        }
        Ok(results)
    }

    pub fn shutdown(&self) {
        self.state.lock().down = true;
    }

    pub fn is_down(&self) -> bool {
        self.state.lock().down
    }
}

struct ClearInFlight<'a>(&'a BaselineEngine);

impl Drop for ClearInFlight<'_> {
    fn drop(&mut self) {
        self.0.state.lock().in_flight = false;
    }
}

fn run_baseline_job(engine: &BaselineEngine, job: &JobConfig) -> JobResult {
    let started = Instant::now();
    let events = EventLog::default();
    let mut metrics = JobMetrics::with_places(engine.num_places());
    let outcome = execute(engine, job, &events, &mut metrics);
    metrics.wall_millis = started.elapsed().as_millis() as u64;
    JobResult {
        status: if outcome.is_ok() {
            JobStatus::Succeeded
        } else {
            JobStatus::Failed
        },
        metrics,
        failure: outcome.err(),
        events: events.into_vec(),
    }
}

struct MapTask {
    task_id: u64,
    split: InputSplit,
}

/// Everything a worker thread needs for the current job.
struct BaselineShared<'a> {
    engine: &'a BaselineEngine,
    job: &'a JobConfig,
    num_places: u32,
    num_partitions: u32,
    formats: Vec<InputFormatSpec>,
    mappers: Vec<Arc<dyn MapFn>>,
    combiner: Option<Arc<dyn ReduceFn>>,
    reducer: Option<Arc<dyn ReduceFn>>,
    partition_of: Arc<PartitionFn>,
    sort: Arc<SortFn>,
    group_eq: Arc<GroupEqFn>,
    labels: Vec<String>,
    read_only: bool,
    scratch: PathBuf,
    spills: Mutex<Vec<SpillHandle>>,
    map_queues: Vec<Mutex<VecDeque<MapTask>>>,
    reduce_queues: Vec<Mutex<VecDeque<PartitionId>>>,
    metrics: Mutex<JobMetrics>,
    events: &'a EventLog,
    failure: Mutex<Option<JobError>>,
    abort: AtomicBool,
}

impl BaselineShared<'_> {
    fn fail(&self, e: JobError) {
        let mut first = self.failure.lock();
        if first.is_none() {
            *first = Some(e);
        }
        self.abort.store(true, Ordering::SeqCst);
    }
}

/// Removes the job's scratch directory on the way out, success or not.
struct ScratchGuard(PathBuf);

impl Drop for ScratchGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn execute(
    engine: &BaselineEngine,
    job: &JobConfig,
    events: &EventLog,
    metrics: &mut JobMetrics,
) -> Result<(), JobError> {
    job.validate()?;
    let num_places = engine.num_places();
    let fs0 = engine.fs_home();
    claim_outputs(fs0, job)?;

    let mut splits: Vec<InputSplit> = Vec::new();
    for (index, input) in job.inputs.iter().enumerate() {
        let planned = compute_splits(&input.format, fs0).map_err(fmt_err)?;
        splits.extend(tag_splits(planned, index as u32));
    }

    // Task placement is plain round-robin: with no resident data there is
    // no locality to chase.
    let mut queues: Vec<VecDeque<MapTask>> =
        (0..num_places).map(|_| VecDeque::new()).collect();
    for (task_id, split) in splits.into_iter().enumerate() {
        queues[task_id % num_places as usize].push_back(MapTask {
            task_id: task_id as u64,
            split,
        });
    }

    let job_seq = engine.job_seq.fetch_add(1, Ordering::SeqCst);
    let scratch = engine.config.scratch_root.join(format!("job-{job_seq}"));
    std::fs::create_dir_all(&scratch)
        .map_err(|e| JobError::Storage(format!("creating job scratch dir: {e}")))?;
    let _scratch_guard = ScratchGuard(scratch.clone());

    let map_only = job.num_reducers == 0;
    let shared = BaselineShared {
        engine,
        job,
        num_places,
        num_partitions: job.num_reducers,
        formats: job.inputs.iter().map(|i| i.format.clone()).collect(),
        mappers: job
            .inputs
            .iter()
            .map(|i| i.mapper.as_ref().unwrap_or(&job.mapper).instantiate())
            .collect(),
        combiner: job.combiner.as_ref().map(|c| c.instantiate()),
        reducer: job.reducer.as_ref().map(|r| r.instantiate()),
        partition_of: job.partitioner.compile(job.num_reducers.max(1)),
        sort: job.sort.compile(),
        group_eq: job.group.compile(&job.sort),
        labels: job.output.named.iter().map(|(l, _)| l.clone()).collect(),
        read_only: job.read_only_inputs(),
        scratch,
        spills: Mutex::new(Vec::new()),
        map_queues: queues.into_iter().map(Mutex::new).collect(),
        reduce_queues: (0..num_places).map(|_| Mutex::new(VecDeque::new())).collect(),
        metrics: Mutex::new(JobMetrics::with_places(num_places)),
        events,
        failure: Mutex::new(None),
        abort: AtomicBool::new(false),
    };

    shared.events.log(EventKind::MapPhaseStart);
    std::thread::scope(|scope| {
        for p in 0..num_places {
            for _ in 0..engine.config.workers_per_place {
                let shared = &shared;
                scope.spawn(move || map_worker(shared, PlaceId(p)));
            }
        }
    });
    if let Some(e) = shared.failure.lock().take() {
        return Err(e);
    }

    if !map_only {
        shared.events.log(EventKind::BarrierReleased);
        // Fetch order must not depend on which worker finished first.
        shared
            .spills
            .lock()
            .sort_by_key(|s| (s.task_id, s.run));
        // A fresh random draw per job: partitions land wherever.
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(engine.config.seed ^ job_seq));
        for r in 0..shared.num_partitions {
            let place = rng.gen_range(0..num_places);
            shared.reduce_queues[place as usize]
                .lock()
                .push_back(PartitionId(r));
        }
        std::thread::scope(|scope| {
            for p in 0..num_places {
                for _ in 0..engine.config.workers_per_place {
                    let shared = &shared;
                    scope.spawn(move || reduce_worker(shared, PlaceId(p)));
                }
            }
        });
        if let Some(e) = shared.failure.lock().take() {
            return Err(e);
        }
    }

    metrics.absorb(&shared.metrics.into_inner());
    Ok(())
}

fn map_worker(shared: &BaselineShared<'_>, place: PlaceId) {
    loop {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        let task = match shared.map_queues[place.0 as usize].lock().pop_front() {
            Some(t) => t,
            None => return,
        };
        if let Err(e) = run_map_task(shared, place, &task) {
            shared.fail(e);
            return;
        }
        shared.events.log(EventKind::MapTaskEnd { place });
    }
}

fn run_map_task(
    shared: &BaselineShared<'_>,
    place: PlaceId,
    task: &MapTask,
) -> Result<(), JobError> {
    let task_label = format!("map task {} at {}", task.task_id, place);
    let fs = shared.engine.fs(place);
    let input_idx = task.split.desc.input_index() as usize;
    let outcome = fs
        .read_input(&shared.formats[input_idx], &task.split, shared.read_only)
        .map_err(fs_err)?;
    let mut delta = JobMetrics::with_places(shared.num_places);
    if outcome.cache_hit {
        delta.cache_hits += 1;
    }
    if outcome.cache_miss {
        delta.cache_misses += 1;
    }
    if outcome.reader_invoked {
        delta.reader_invocations += 1;
    }
    delta.backing_bytes_read += outcome.backing_bytes_read;

    let info = TaskInfo {
        place,
        num_places: shared.num_places,
        num_partitions: shared.num_partitions,
        partition: None,
        split_partition: task.split.placement,
    };
    let immutable = shared.job.mapper_immutable_output;
    let mapper = Arc::clone(&shared.mappers[input_idx]);
    let mut counters = BTreeMap::new();
    let mut buffer = BufferSink::new(immutable, shared.labels.clone());
    run_user(&task_label, || {
        let mut ctx = TaskContext {
            info,
            counters: &mut counters,
            sink: &mut buffer,
        };
        mapper.run(&mut ctx, &outcome.pairs)
    })?;
    buffer.close();

    if shared.reducer.is_none() {
        // Map-only: parts go straight to the backing store.
        let part = part_path(&shared.job.output.main.path, "part", task.task_id)?;
        let w = fs
            .write_output(
                &part,
                shared.job.output.main.kind,
                None,
                &buffer.main,
                immutable,
                "",
            )
            .map_err(fs_err)?;
        delta.output_records += w.records;
        delta.backing_bytes_written += w.backing_bytes_written;
        write_named_parts(
            shared.job,
            "",
            fs,
            &buffer.named,
            "part-m",
            task.task_id,
            None,
            immutable,
            &mut delta,
        )?;
    } else {
        let mut named = buffer.named;
        // Cut the output into runs as an overflowing in-memory sort
        // buffer would, then sort, optionally combine, and spill each.
        let threshold = shared.engine.config.spill_threshold_records;
        for (run, chunk) in buffer.main.chunks(threshold).enumerate() {
            let records = if let Some(combiner) = &shared.combiner {
                let mut combined = BufferSink::new(immutable, shared.labels.clone());
                let groups = partitioned_groups(
                    chunk.to_vec(),
                    &*shared.partition_of,
                    &*shared.sort,
                    &*shared.group_eq,
                );
                for (key, values) in &groups {
                    run_user(&task_label, || {
                        let mut ctx = TaskContext {
                            info,
                            counters: &mut counters,
                            sink: &mut combined,
                        };
                        combiner.run(&mut ctx, key, values)
                    })?;
                }
                combined.close();
                for (label, pairs) in combined.named {
                    named.entry(label).or_default().extend(pairs);
                }
                sorted_run(&task_label, &combined.main, shared)?
            } else {
                sorted_run(&task_label, chunk, shared)?
            };
            let os_path = shared
                .scratch
                .join(format!("spill-p{}-t{}-{run}", place.0, task.task_id));
            let handle = spill::write_spill(
                &os_path,
                place,
                task.task_id,
                run as u32,
                shared.num_partitions,
                &records,
            )
            .map_err(fmt_err)?;
            delta.spill_bytes += handle.payload_bytes;
            shared.spills.lock().push(handle);
        }
        write_named_parts(
            shared.job,
            "",
            fs,
            &named,
            "part-m",
            task.task_id,
            None,
            immutable,
            &mut delta,
        )?;
    }
    delta.user_counters = counters;
    shared.metrics.lock().absorb(&delta);
    Ok(())
}

/// Snapshots, partitions, and sorts one run of map output by
/// (partition, sort key).
fn sorted_run(
    task_label: &str,
    pairs: &[Pair],
    shared: &BaselineShared<'_>,
) -> Result<Vec<(u32, Key, Pair)>, JobError> {
    let mut records: Vec<(u32, Key, Pair)> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let key = pair.key.get();
        let partition = (shared.partition_of)(&key);
        if partition.0 >= shared.num_partitions {
            return Err(JobError::UserFunction {
                task: task_label.to_string(),
                message: format!(
                    "partitioner sent a key to partition {} of {}",
                    partition.0, shared.num_partitions
                ),
            });
        }
        records.push((partition.0, key, pair.clone()));
    }
    let sort = &shared.sort;
    records.sort_by(|(pa, ka, _), (pb, kb, _)| pa.cmp(pb).then_with(|| sort(ka, kb)));
    Ok(records)
}

fn reduce_worker(shared: &BaselineShared<'_>, place: PlaceId) {
    loop {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        let partition = match shared.reduce_queues[place.0 as usize].lock().pop_front() {
            Some(r) => r,
            None => return,
        };
        if let Err(e) = run_reduce_task(shared, place, partition) {
            shared.fail(e);
            return;
        }
    }
}

fn run_reduce_task(
    shared: &BaselineShared<'_>,
    place: PlaceId,
    partition: PartitionId,
) -> Result<(), JobError> {
    shared
        .events
        .log(EventKind::ReduceTaskStart { place, partition });
    let task_label = format!("reduce task {} at {}", partition.0, place);
    let mut delta = JobMetrics::with_places(shared.num_places);

    // Fetch this partition's segment from every spill. The trailer is
    // re-read from disk, as a fetcher with nothing but the file would.
    let handles: Vec<SpillHandle> = shared.spills.lock().clone();
    let mut runs: Vec<VecDeque<(Key, Pair)>> = Vec::new();
    for handle in &handles {
        let segments = spill::read_segments(&handle.os_path).map_err(fmt_err)?;
        let (offset, length) = segments
            .get(partition.0 as usize)
            .copied()
            .ok_or_else(|| {
                JobError::Internal(format!(
                    "spill {} lacks partition {}",
                    handle.os_path.display(),
                    partition
                ))
            })?;
        if length == 0 {
            continue;
        }
        let pairs = spill::read_segment(&handle.os_path, offset, length).map_err(fmt_err)?;
        if handle.place == place {
            delta.bytes_serialized_local += length;
            delta.pairs_shuffled_local += pairs.len() as u64;
        } else {
            delta.bytes_serialized_remote += length;
            delta.pairs_shuffled_remote += pairs.len() as u64;
            delta.remote_bytes_by_dest[place.0 as usize] += length;
        }
        runs.push(pairs.into_iter().map(|p| (p.key.get(), p)).collect());
    }

    let mut merge_spilled = 0u64;
    let merged = spill::merge_sorted_runs(
        runs,
        &*shared.sort,
        shared.engine.config.merge_fan_in,
        &shared.scratch,
        &format!("merge-r{}", partition.0),
        &mut merge_spilled,
    )
    .map_err(fmt_err)?;
    delta.spill_bytes += merge_spilled;

    let reducer = shared.reducer.as_ref().expect("reduce phase needs a reducer");
    let immutable = shared.job.reducer_immutable_output;
    let mut counters = BTreeMap::new();
    let mut sink = BufferSink::new(immutable, shared.labels.clone());
    let info = TaskInfo {
        place,
        num_places: shared.num_places,
        num_partitions: shared.num_partitions,
        partition: Some(partition),
        split_partition: None,
    };
    let mut group: Vec<(Key, Pair)> = Vec::new();
    let flush = |group: &mut Vec<(Key, Pair)>,
                     counters: &mut BTreeMap<String, u64>,
                     sink: &mut BufferSink|
     -> Result<(), JobError> {
        if group.is_empty() {
            return Ok(());
        }
        let key = group[0].1.key.clone();
        let values: Vec<_> = group.iter().map(|(_, p)| p.value.clone()).collect();
        group.clear();
        run_user(&task_label, || {
            let mut ctx = TaskContext {
                info,
                counters,
                sink,
            };
            reducer.run(&mut ctx, &key, &values)
        })
    };
    for (key, pair) in merged {
        let breaks = group
            .last()
            .map(|(prev, _)| !(shared.group_eq)(prev, &key))
            .unwrap_or(false);
        if breaks {
            flush(&mut group, &mut counters, &mut sink)?;
        }
        group.push((key, pair));
    }
    flush(&mut group, &mut counters, &mut sink)?;
    sink.close();

    // Even an empty partition commits a part, so a dataset always has one
    // part per partition.
    let fs = shared.engine.fs(place);
    let part = part_path(&shared.job.output.main.path, "part", partition.0 as u64)?;
    let w = fs
        .write_output(
            &part,
            shared.job.output.main.kind,
            Some(partition),
            &sink.main,
            immutable,
            "",
        )
        .map_err(fs_err)?;
    delta.output_records += w.records;
    delta.backing_bytes_written += w.backing_bytes_written;
    write_named_parts(
        shared.job,
        "",
        fs,
        &sink.named,
        "part",
        partition.0 as u64,
        Some(partition),
        immutable,
        &mut delta,
    )?;
    delta.user_counters = counters;
    shared.metrics.lock().absorb(&delta);
    shared
        .events
        .log(EventKind::OutputCommitted { place, partition });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn startup_rejects_degenerate_configurations() {
        let tmp = tempfile::tempdir().unwrap();
        let base = |places| {
            BaselineConfig::new(
                places,
                tmp.path().join("backing"),
                tmp.path().join("scratch"),
            )
        };
        assert!(matches!(
            BaselineEngine::start(base(0)),
            Err(JobError::InvalidConfig(_))
        ));
        let mut c = base(1);
        c.merge_fan_in = 1;
        assert!(matches!(
            BaselineEngine::start(c),
            Err(JobError::InvalidConfig(_))
        ));
        let mut c = base(1);
        c.spill_threshold_records = 0;
        assert!(matches!(
            BaselineEngine::start(c),
            Err(JobError::InvalidConfig(_))
        ));
        assert!(BaselineEngine::start(base(2)).is_ok());
    }

    #[test]
    fn the_cache_stays_disabled() {
        let tmp = tempfile::tempdir().unwrap();
        let engine = BaselineEngine::start(BaselineConfig::new(
            1,
            tmp.path().join("backing"),
            tmp.path().join("scratch"),
        ))
        .unwrap();
        assert!(!engine.cache().enabled());
    }
}
