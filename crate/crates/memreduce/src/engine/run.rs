//! Job execution: planning, the map phase, the delivery barrier, and the
//! reduce phase, driven across worker threads within this process.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;

use crate::cachefs::{FsError, FsHandle};
use crate::codec::{deserialize_batch, BatchBuilder, DedupPolicy, ShuffleBatch};
use crate::engine::funcs::{MapFn, ReduceFn};
use crate::engine::task::{
    sort_and_group, BufferSink, EmitSink, GroupEqFn, PartitionFn, SortFn, TaskContext, TaskInfo,
};
use crate::engine::{
    Engine, EngineEvent, EventKind, JobConfig, JobError, JobMetrics, JobResult, JobStatus,
};
use crate::formats::{compute_splits, tag_splits, FormatError, InputFormatSpec, InputSplit};
use crate::kvstore::StorePath;
use crate::types::{Key, KeyHandle, Pair, PartitionId, PlaceId, Value, ValueHandle};

/// A serialized batch is handed to its destination once it grows past
/// this size; whatever remains goes at task end.
const BATCH_FLUSH_BYTES: u64 = 4 << 20;

pub(crate) fn run_job(engine: &Engine, job: &JobConfig) -> JobResult {
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

#[derive(Default)]
pub(crate) struct EventLog {
    entries: Mutex<Vec<EngineEvent>>,
}

impl EventLog {
    pub(crate) fn log(&self, kind: EventKind) {
        let mut entries = self.entries.lock();
        let seq = entries.len() as u64;
        entries.push(EngineEvent { seq, kind });
    }

    pub(crate) fn into_vec(self) -> Vec<EngineEvent> {
        self.entries.into_inner()
    }
}

pub(crate) fn fs_err(e: FsError) -> JobError {
    match e {
        FsError::InputNotFound(p) => JobError::InputNotFound(p),
        other => JobError::Storage(other.to_string()),
    }
}

pub(crate) fn fmt_err(e: FormatError) -> JobError {
    match e {
        FormatError::InputNotFound(p) => JobError::InputNotFound(p),
        other => JobError::Storage(other.to_string()),
    }
}

/// One chunk of map output in flight toward a destination place.
struct DeliveryUnit {
    src_place: u32,
    src_task: u64,
    seq: u64,
    payload: UnitPayload,
}

enum UnitPayload {
    /// Serialized batch; the destination decodes it into fresh objects.
    Wire(ShuffleBatch),
    /// Same-place shortcut: the very objects the producer emitted, with
    /// their partition already computed. Only immutable-flagged output
    /// travels this way.
    Direct(PartitionId, Vec<Pair>),
}

struct MapTask {
    task_id: u64,
    split: InputSplit,
}

struct ReduceTask {
    partition: PartitionId,
    pairs: Vec<Pair>,
}

/// Everything a worker thread needs to run tasks of the current job.
struct JobShared<'a> {
    engine: &'a Engine,
    job: &'a JobConfig,
    num_places: u32,
    num_partitions: u32,
    dedup: DedupPolicy,
    formats: Vec<InputFormatSpec>,
    mappers: Vec<Arc<dyn MapFn>>,
    combiner: Option<Arc<dyn ReduceFn>>,
    reducer: Option<Arc<dyn ReduceFn>>,
    partition_of: Arc<PartitionFn>,
    sort: Arc<SortFn>,
    group_eq: Arc<GroupEqFn>,
    labels: Vec<String>,
    read_only: bool,
    temp_prefix: String,
    inboxes: Vec<Mutex<Vec<DeliveryUnit>>>,
    map_queues: Vec<Mutex<VecDeque<MapTask>>>,
    tasks_remaining: Vec<AtomicUsize>,
    metrics: Mutex<JobMetrics>,
    events: &'a EventLog,
    failure: Mutex<Option<JobError>>,
    abort: AtomicBool,
}

impl JobShared<'_> {
    fn fail(&self, e: JobError) {
        let mut first = self.failure.lock();
        if first.is_none() {
            *first = Some(e);
        }
        self.abort.store(true, Ordering::SeqCst);
    }
}

fn execute(
    engine: &Engine,
    job: &JobConfig,
    events: &EventLog,
    metrics: &mut JobMetrics,
) -> Result<(), JobError> {
    job.validate()?;
    let num_places = engine.num_places();
    let fs0 = engine.fs_home();
    claim_outputs(fs0, job)?;

    // Plan every input's splits, each remembering which input it belongs
    // to so the right map function sees it.
    let mut splits: Vec<InputSplit> = Vec::new();
    for (idx, input) in job.inputs.iter().enumerate() {
        let planned = compute_splits(&input.format, fs0).map_err(fmt_err)?;
        splits.extend(tag_splits(planned, idx as u32));
    }

    // Send each map task where its data already lives: the place holding
    // it in cache, else the stable home of the partition that wrote it,
    // else round-robin.
    let mut queues: Vec<VecDeque<MapTask>> = (0..num_places).map(|_| VecDeque::new()).collect();
    let mut next_rr = 0u32;
    for (task_id, split) in splits.into_iter().enumerate() {
        let place = split
            .desc
            .cache_name()
            .and_then(|name| engine.cache().place_of(&name))
            .map(|p| p.0)
            .or_else(|| split.placement.map(|p| p.0 % num_places))
            .unwrap_or_else(|| {
                let p = next_rr % num_places;
                next_rr += 1;
                p
            });
        queues[place as usize].push_back(MapTask {
            task_id: task_id as u64,
            split,
        });
    }

    let map_only = job.num_reducers == 0;
    let shared = JobShared {
        engine,
        job,
        num_places,
        num_partitions: job.num_reducers,
        dedup: engine.config().dedup,
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
        temp_prefix: job.temp_prefix().to_string(),
        inboxes: (0..num_places).map(|_| Mutex::new(Vec::new())).collect(),
        tasks_remaining: queues
            .iter()
            .map(|q| AtomicUsize::new(q.len()))
            .collect(),
        map_queues: queues.into_iter().map(Mutex::new).collect(),
        metrics: Mutex::new(JobMetrics::with_places(num_places)),
        events,
        failure: Mutex::new(None),
        abort: AtomicBool::new(false),
    };

    let result = drive(&shared, engine.config().workers_per_place, map_only);
    metrics.absorb(&shared.metrics.into_inner());
    result
}

fn drive(shared: &JobShared<'_>, workers: u32, map_only: bool) -> Result<(), JobError> {
    shared.events.log(EventKind::MapPhaseStart);
    if !map_only {
        // A place with no map tasks has trivially delivered everything.
        for p in 0..shared.num_places {
            if shared.tasks_remaining[p as usize].load(Ordering::SeqCst) == 0 {
                shared.events.log(EventKind::DeliveryComplete { place: PlaceId(p) });
            }
        }
    }
    std::thread::scope(|scope| {
        for p in 0..shared.num_places {
            for _ in 0..workers {
                scope.spawn(move || map_worker(shared, PlaceId(p), map_only));
            }
        }
    });
    if let Some(e) = shared.failure.lock().take() {
        return Err(e);
    }
    if map_only {
        return Ok(());
    }

    // Every map task everywhere has finished and flushed, so every
    // delivery unit is in its inbox: the barrier opens.
    shared.events.log(EventKind::BarrierReleased);

    let reduce_queues = unpack_inboxes(shared)?;
    std::thread::scope(|scope| {
        for p in 0..shared.num_places {
            for _ in 0..workers {
                let queues = &reduce_queues;
                scope.spawn(move || reduce_worker(shared, queues, PlaceId(p)));
            }
        }
    });
    if let Some(e) = shared.failure.lock().take() {
        return Err(e);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Map phase
// ---------------------------------------------------------------------------

fn map_worker(shared: &JobShared<'_>, place: PlaceId, map_only: bool) {
    loop {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        let task = shared.map_queues[place.0 as usize].lock().pop_front();
        let Some(task) = task else { return };
        if let Err(e) = run_map_task(shared, place, &task, map_only) {
            shared.fail(e);
            return;
        }
        shared.events.log(EventKind::MapTaskEnd { place });
        if !map_only
            && shared.tasks_remaining[place.0 as usize].fetch_sub(1, Ordering::SeqCst) == 1
        {
            shared.events.log(EventKind::DeliveryComplete { place });
        }
    }
}

fn run_map_task(
    shared: &JobShared<'_>,
    place: PlaceId,
    task: &MapTask,
    map_only: bool,
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
    let mut counters: BTreeMap<String, u64> = BTreeMap::new();
    let mapper = &shared.mappers[input_idx];
    let immutable = shared.job.mapper_immutable_output;

    if map_only {
        let mut sink = BufferSink::new(immutable, shared.labels.clone());
        run_user(&task_label, || {
            let mut ctx = TaskContext {
                info,
                counters: &mut counters,
                sink: &mut sink,
            };
            mapper.run(&mut ctx, &outcome.pairs)
        })?;
        sink.close();
        let part = part_path(&shared.job.output.main.path, "part", task.task_id)?;
        let w = fs
            .write_output(
                &part,
                shared.job.output.main.kind,
                None,
                &sink.main,
                immutable,
                &shared.temp_prefix,
            )
            .map_err(fs_err)?;
        delta.output_records += w.records;
        delta.backing_bytes_written += w.backing_bytes_written;
        write_named_parts(
            shared.job,
            &shared.temp_prefix,
            fs,
            &sink.named,
            "part-m",
            task.task_id,
            None,
            immutable,
            &mut delta,
        )?;
    } else {
        let mut router = RouterSink::new(shared, place, task.task_id, immutable);
        if let Some(combiner) = &shared.combiner {
            // Map into a buffer, fold each partition's key groups through
            // the combiner, and shuffle the combiner's output instead.
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
            let groups = partitioned_groups(
                buffer.main,
                &*shared.partition_of,
                &*shared.sort,
                &*shared.group_eq,
            );
            for (key, values) in &groups {
                run_user(&task_label, || {
                    let mut ctx = TaskContext {
                        info,
                        counters: &mut counters,
                        sink: &mut router,
                    };
                    combiner.run(&mut ctx, key, values)
                })?;
            }
            for (label, pairs) in buffer.named {
                router.named.entry(label).or_default().extend(pairs);
            }
        } else {
            run_user(&task_label, || {
                let mut ctx = TaskContext {
                    info,
                    counters: &mut counters,
                    sink: &mut router,
                };
                mapper.run(&mut ctx, &outcome.pairs)
            })?;
        }
        let routed = router.finish();
        delta.absorb(&routed.delta);
        write_named_parts(
            shared.job,
            &shared.temp_prefix,
            fs,
            &routed.named,
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

/// Sorts combiner input by (partition, key) and groups it the same way
/// the reduce side will, never merging across a partition boundary.
pub(crate) fn partitioned_groups(
    pairs: Vec<Pair>,
    partition_of: &PartitionFn,
    sort: &SortFn,
    group_eq: &GroupEqFn,
) -> Vec<(KeyHandle, Vec<ValueHandle>)> {
    let mut keyed: Vec<(u32, Key, Pair)> = pairs
        .into_iter()
        .map(|p| {
            let key = p.key.get();
            (partition_of(&key).0, key, p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| sort(&a.1, &b.1)));
    let mut out: Vec<(KeyHandle, Vec<ValueHandle>)> = Vec::new();
    let mut rep: Option<(u32, Key)> = None;
    for (partition, key, pair) in keyed {
        let same = rep
            .as_ref()
            .map(|(rp, rk)| *rp == partition && group_eq(rk, &key))
            .unwrap_or(false);
        if same {
            out.last_mut().unwrap().1.push(pair.value);
        } else {
            rep = Some((partition, key));
            out.push((pair.key, vec![pair.value]));
        }
    }
    out
}

/// One finished delivery unit leaving a [`PairRouter`], tagged with a
/// per-producer sequence number that preserves emission order.
pub(crate) enum Routed {
    /// A serialized batch bound for `dest` — possibly the producer's own
    /// place, when the defensive copy forced encoding.
    Wire {
        dest: PlaceId,
        seq: u64,
        batch: ShuffleBatch,
    },
    /// Same-place shortcut: the very objects the producer emitted, with
    /// their partition already computed. Only immutable-flagged output
    /// travels this way.
    Direct {
        partition: PartitionId,
        seq: u64,
        pairs: Vec<Pair>,
    },
}

/// Routes each emitted pair to its partition's place, independent of how
/// finished units travel: the caller supplies delivery. Flagged
/// (immutable) output shares objects on the local route and rides the
/// de-duplicating serializer on remote routes; unflagged output is always
/// encoded, which is what realizes the defensive copy.
pub(crate) struct PairRouter {
    src_place: PlaceId,
    immutable: bool,
    dedup: DedupPolicy,
    num_places: u32,
    num_partitions: u32,
    partition_of: Arc<PartitionFn>,
    builders: Vec<Option<BatchBuilder>>,
    direct: BTreeMap<u32, Vec<Pair>>,
    unit_seq: u64,
    delta: JobMetrics,
    closed: bool,
}

impl PairRouter {
    pub(crate) fn new(
        src_place: PlaceId,
        immutable: bool,
        dedup: DedupPolicy,
        num_places: u32,
        num_partitions: u32,
        partition_of: Arc<PartitionFn>,
    ) -> PairRouter {
        PairRouter {
            src_place,
            immutable,
            dedup,
            num_places,
            num_partitions,
            partition_of,
            builders: (0..num_places).map(|_| None).collect(),
            direct: BTreeMap::new(),
            unit_seq: 0,
            delta: JobMetrics::with_places(num_places),
            closed: false,
        }
    }

    pub(crate) fn is_open(&self) -> bool {
        !self.closed
    }

    pub(crate) fn route(
        &mut self,
        pair: Pair,
        out: &mut dyn FnMut(Routed),
    ) -> Result<(), String> {
        if self.closed {
            return Err("emit after task end".into());
        }
        let key = pair.key.get();
        let partition = (self.partition_of)(&key);
        if partition.0 >= self.num_partitions {
            return Err(format!(
                "partitioner sent a key to partition {} of {}",
                partition.0, self.num_partitions
            ));
        }
        let dest = PlaceId(partition.0 % self.num_places);
        if dest == self.src_place {
            self.delta.pairs_shuffled_local += 1;
        } else {
            self.delta.pairs_shuffled_remote += 1;
        }
        if self.immutable && dest == self.src_place {
            self.direct.entry(partition.0).or_default().push(pair);
            return Ok(());
        }
        let d = dest.0 as usize;
        let dedup = self.dedup;
        let builder = self.builders[d].get_or_insert_with(|| BatchBuilder::new(dest, dedup));
        if self.immutable {
            builder.push(&pair);
        } else {
            builder.push_literal(&key, &pair.value.read());
        }
        if builder.byte_length() >= BATCH_FLUSH_BYTES {
            self.flush(d, out);
        }
        Ok(())
    }

    fn flush(&mut self, d: usize, out: &mut dyn FnMut(Routed)) {
        let Some(builder) = self.builders[d].take() else {
            return;
        };
        if builder.is_empty() {
            return;
        }
        let batch = builder.finish();
        let len = batch.byte_length();
        let dest = batch.destination;
        if dest == self.src_place {
            self.delta.bytes_serialized_local += len;
        } else {
            self.delta.bytes_serialized_remote += len;
            self.delta.remote_bytes_by_dest[dest.0 as usize] += len;
            self.delta.remote_dense_value_literals_by_dest[dest.0 as usize] +=
                batch.stats.dense_value_literals;
        }
        let seq = self.unit_seq;
        self.unit_seq += 1;
        out(Routed::Wire { dest, seq, batch });
    }

    /// Flushes every pending batch, hands over the local shortcut
    /// buffers, and closes the router, returning its measurements.
    pub(crate) fn finish(mut self, out: &mut dyn FnMut(Routed)) -> JobMetrics {
        self.closed = true;
        for d in 0..self.builders.len() {
            self.flush(d, out);
        }
        for (partition, pairs) in std::mem::take(&mut self.direct) {
            let seq = self.unit_seq;
            self.unit_seq += 1;
            out(Routed::Direct {
                partition: PartitionId(partition),
                seq,
                pairs,
            });
        }
        self.delta
    }
}

/// The in-process map-side emit sink: a [`PairRouter`] delivering into
/// the engine's place inboxes.
struct RouterSink<'a, 'b> {
    shared: &'a JobShared<'b>,
    src_place: PlaceId,
    src_task: u64,
    router: PairRouter,
    named: BTreeMap<String, Vec<Pair>>,
}

struct RoutedOutput {
    named: BTreeMap<String, Vec<Pair>>,
    delta: JobMetrics,
}

fn deliver_unit(shared: &JobShared<'_>, src_place: PlaceId, src_task: u64, routed: Routed) {
    let (dest, unit) = match routed {
        Routed::Wire { dest, seq, batch } => (
            dest,
            DeliveryUnit {
                src_place: src_place.0,
                src_task,
                seq,
                payload: UnitPayload::Wire(batch),
            },
        ),
        Routed::Direct {
            partition,
            seq,
            pairs,
        } => (
            src_place,
            DeliveryUnit {
                src_place: src_place.0,
                src_task,
                seq,
                payload: UnitPayload::Direct(partition, pairs),
            },
        ),
    };
    shared.inboxes[dest.0 as usize].lock().push(unit);
}

impl<'a, 'b> RouterSink<'a, 'b> {
    fn new(
        shared: &'a JobShared<'b>,
        src_place: PlaceId,
        src_task: u64,
        immutable: bool,
    ) -> Self {
        RouterSink {
            shared,
            src_place,
            src_task,
            router: PairRouter::new(
                src_place,
                immutable,
                shared.dedup,
                shared.num_places,
                shared.num_partitions,
                Arc::clone(&shared.partition_of),
            ),
            named: BTreeMap::new(),
        }
    }

    fn route(&mut self, pair: Pair) -> Result<(), String> {
        let (shared, src_place, src_task) = (self.shared, self.src_place, self.src_task);
        self.router
            .route(pair, &mut |routed| deliver_unit(shared, src_place, src_task, routed))
    }

    /// Flushes every pending batch and hands over the local shortcut
    /// buffers, closing the sink.
    fn finish(mut self) -> RoutedOutput {
        let (shared, src_place, src_task) = (self.shared, self.src_place, self.src_task);
        let delta = self
            .router
            .finish(&mut |routed| deliver_unit(shared, src_place, src_task, routed));
        RoutedOutput {
            named: std::mem::take(&mut self.named),
            delta,
        }
    }
}

impl EmitSink for RouterSink<'_, '_> {
    fn emit_shared(&mut self, key: &KeyHandle, value: &ValueHandle) -> Result<(), String> {
        self.route(Pair::from_handles(key, value))
    }

    fn emit_owned(&mut self, key: Key, value: Value) -> Result<(), String> {
        self.route(Pair::new(key, value))
    }

    fn emit_named(&mut self, label: &str, key: Key, value: Value) -> Result<(), String> {
        if !self.router.is_open() {
            return Err("emit after task end".into());
        }
        if !self.shared.labels.iter().any(|l| l == label) {
            return Err(format!("unknown named output \"{label}\""));
        }
        self.named
            .entry(label.to_string())
            .or_default()
            .push(Pair::new(key, value));
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reduce phase
// ---------------------------------------------------------------------------

/// Decodes and buckets every place's inbox into per-partition reduce
/// inputs, in a deterministic order: units by (source place, task,
/// sequence), pairs in batch order. Serialized pairs have their partition
/// recomputed from the decoded key; disagreement with the delivery place
/// means the partitioner is not a pure function of the key, which the
/// engine treats as fatal.
fn unpack_inboxes(
    shared: &JobShared<'_>,
) -> Result<Vec<Mutex<VecDeque<ReduceTask>>>, JobError> {
    let mut buckets: Vec<Vec<Pair>> = (0..shared.num_partitions).map(|_| Vec::new()).collect();
    for p in 0..shared.num_places {
        let mut units = std::mem::take(&mut *shared.inboxes[p as usize].lock());
        units.sort_by_key(|u| (u.src_place, u.src_task, u.seq));
        for unit in units {
            match unit.payload {
                UnitPayload::Direct(partition, pairs) => {
                    buckets[partition.0 as usize].extend(pairs);
                }
                UnitPayload::Wire(batch) => {
                    let (pairs, _) = deserialize_batch(&batch.bytes).map_err(|e| {
                        JobError::Internal(format!("undecodable shuffle batch: {e}"))
                    })?;
                    for pair in pairs {
                        let key = pair.key.get();
                        let partition = (shared.partition_of)(&key);
                        if partition.0 >= shared.num_partitions
                            || partition.0 % shared.num_places != p
                        {
                            return Err(JobError::Internal(format!(
                                "partitioner is not deterministic: key {key:?} \
                                 re-partitions to {partition} away from place p{p}"
                            )));
                        }
                        buckets[partition.0 as usize].push(pair);
                    }
                }
            }
        }
    }
    let mut queues: Vec<VecDeque<ReduceTask>> =
        (0..shared.num_places).map(|_| VecDeque::new()).collect();
    for (r, pairs) in buckets.into_iter().enumerate() {
        let partition = PartitionId(r as u32);
        queues[(partition.0 % shared.num_places) as usize].push_back(ReduceTask {
            partition,
            pairs,
        });
    }
    Ok(queues.into_iter().map(Mutex::new).collect())
}

fn reduce_worker(
    shared: &JobShared<'_>,
    queues: &[Mutex<VecDeque<ReduceTask>>],
    place: PlaceId,
) {
    loop {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        let task = queues[place.0 as usize].lock().pop_front();
        let Some(task) = task else { return };
        if let Err(e) = run_reduce_task(shared, place, task) {
            shared.fail(e);
            return;
        }
    }
}

fn run_reduce_task(
    shared: &JobShared<'_>,
    place: PlaceId,
    task: ReduceTask,
) -> Result<(), JobError> {
    let partition = task.partition;
    shared.events.log(EventKind::ReduceTaskStart { place, partition });
    let task_label = format!("reduce task {partition} at {place}");
    let reducer = shared.reducer.as_ref().expect("reduce phase needs a reducer");
    let immutable = shared.job.reducer_immutable_output;
    let mut delta = JobMetrics::with_places(shared.num_places);
    let mut counters: BTreeMap<String, u64> = BTreeMap::new();
    let mut sink = BufferSink::new(immutable, shared.labels.clone());
    let groups = sort_and_group(task.pairs, &*shared.sort, &*shared.group_eq);
    let info = TaskInfo {
        place,
        num_places: shared.num_places,
        num_partitions: shared.num_partitions,
        partition: Some(partition),
        split_partition: None,
    };
    for (i, (key, values)) in groups.iter().enumerate() {
        if i == 0 {
            shared.events.log(EventKind::ReduceGroupStart { place, partition });
        }
        run_user(&task_label, || {
            let mut ctx = TaskContext {
                info,
                counters: &mut counters,
                sink: &mut sink,
            };
            reducer.run(&mut ctx, key, values)
        })?;
    }
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
            &shared.temp_prefix,
        )
        .map_err(fs_err)?;
    delta.output_records += w.records;
    delta.backing_bytes_written += w.backing_bytes_written;
    write_named_parts(
        shared.job,
        &shared.temp_prefix,
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
    shared.events.log(EventKind::OutputCommitted { place, partition });
    Ok(())
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

pub(crate) fn part_path(dir: &StorePath, stem: &str, index: u64) -> Result<StorePath, JobError> {
    dir.join(&format!("{stem}-{index:05}"))
        .map_err(|e| JobError::Internal(format!("building part path: {e}")))
}

/// Claims the job's output paths: refuses (or clears, when overwriting)
/// any existing data, then creates the directories.
pub(crate) fn claim_outputs(fs0: &FsHandle, job: &JobConfig) -> Result<(), JobError> {
    let outputs: Vec<_> = std::iter::once(&job.output.main)
        .chain(job.output.named.iter().map(|(_, o)| o))
        .collect();
    for out in &outputs {
        match fs0.fs_get_status(&out.path) {
            Ok(_) => {
                if job.overwrite_outputs() {
                    fs0.fs_delete(&out.path).map_err(fs_err)?;
                } else {
                    return Err(JobError::OutputAlreadyExists(out.path.as_str().to_string()));
                }
            }
            Err(FsError::NotFound(_)) => {}
            Err(e) => return Err(fs_err(e)),
        }
        fs0.kv()
            .mkdirs(&out.path)
            .map_err(|e| JobError::Storage(e.to_string()))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write_named_parts(
    job: &JobConfig,
    temp_prefix: &str,
    fs: &FsHandle,
    named: &BTreeMap<String, Vec<Pair>>,
    stem: &str,
    index: u64,
    partition: Option<PartitionId>,
    immutable: bool,
    delta: &mut JobMetrics,
) -> Result<(), JobError> {
    for (label, pairs) in named {
        if pairs.is_empty() {
            continue;
        }
        let out = job
            .output
            .named(label)
            .expect("emit_named only accepts declared labels");
        let part = part_path(&out.path, stem, index)?;
        let w = fs
            .write_output(&part, out.kind, partition, pairs, immutable, temp_prefix)
            .map_err(fs_err)?;
        delta.output_records += w.records;
        delta.backing_bytes_written += w.backing_bytes_written;
    }
    Ok(())
}

/// Runs a user function, turning both `Err` returns and panics into a
/// job failure that names the task.
pub(crate) fn run_user(task: &str, f: impl FnOnce() -> Result<(), String>) -> Result<(), JobError> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Ok(()),
        Ok(Err(message)) => Err(JobError::UserFunction {
            task: task.to_string(),
            message,
        }),
        Err(panic) => Err(JobError::UserFunction {
            task: task.to_string(),
            message: panic_text(panic),
        }),
    }
}

fn panic_text(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".to_string()
    }
}
