//! The in-memory map/reduce engine.
//!
//! An [`Engine`] owns a fixed set of places (executors), one shared
//! in-memory cache, and a metadata store. Jobs run one at a time; a job
//! reads its inputs through the cache, shuffles map output toward reduce
//! partitions with a hard barrier in between, and writes its output parts
//! back through the cache so the next job in a sequence can read them
//! without touching backing storage.
//!
//! Two properties distinguish it from a disk-first engine:
//!
//! * **Partition stability.** Reduce partition `r` always runs at place
//!   `r mod num_places`. A job sequence that keeps its partitioning keeps
//!   its data local, so iteration `n + 1` reads iteration `n`'s output
//!   from the cache of the same place.
//! * **The cloning contract.** Emitted objects are defensively copied
//!   unless the producing function declares its output immutable; the
//!   declaration unlocks object sharing on local routes and identity-based
//!   de-duplication inside serialized batches.

pub mod funcs;
pub(crate) mod run;
pub mod task;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::cachefs::{CacheStore, FsHandle, FsMode};
use crate::codec::DedupPolicy;
use crate::formats::{InputFormatSpec, OutputSpec};
use crate::kvstore::{KvStore, StorePath};
use crate::types::{PartitionId, PlaceId};

pub use funcs::{GroupSpec, MapFn, MapperSpec, PartitionerSpec, ReduceFn, ReducerSpec, SortSpec};
pub use task::{EmitSink, TaskContext, TaskInfo};

/// How places talk to each other.
#[derive(Debug, Clone)]
pub enum TransportMode {
    /// All places are threads of this process; delivery is a queue push.
    InProcess,
    /// Places are child processes connected over local sockets, launched
    /// from the given executable.
    Socket { worker_exe: PathBuf },
}

/// Static configuration of an engine instance.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub num_places: u32,
    /// Concurrent tasks per place, for both map and reduce phases.
    pub workers_per_place: u32,
    /// De-duplication policy for serialized shuffle batches.
    pub dedup: DedupPolicy,
    pub transport: TransportMode,
    /// Directory backing durable output.
    pub backing_root: PathBuf,
    /// Whether writes are mirrored to backing storage (`Dual`) or held in
    /// cache only (`RawCache`).
    pub fs_mode: FsMode,
    /// Optional cap on cache residency, in approximate bytes.
    pub cache_limit_bytes: Option<u64>,
}

impl EngineConfig {
    /// In-process engine with the usual defaults: two workers per place,
    /// full de-duplication, dual cache-and-backing writes, no cache cap.
    pub fn in_process(num_places: u32, backing_root: impl Into<PathBuf>) -> EngineConfig {
        EngineConfig {
            num_places,
            workers_per_place: 2,
            dedup: DedupPolicy::Full,
            transport: TransportMode::InProcess,
            backing_root: backing_root.into(),
            fs_mode: FsMode::Dual,
            cache_limit_bytes: None,
        }
    }
}

/// One input of a job: a format (what to read) and, optionally, a map
/// function that overrides the job's mapper for this input alone.
#[derive(Debug, Clone)]
pub struct JobInput {
    pub format: InputFormatSpec,
    pub mapper: Option<MapperSpec>,
}

/// A complete job description. Built with the fluent helpers; a fresh
/// config is a map-only job with an identity mapper.
#[derive(Debug, Clone)]
pub struct JobConfig {
    pub name: String,
    pub inputs: Vec<JobInput>,
    pub mapper: MapperSpec,
    pub combiner: Option<ReducerSpec>,
    pub reducer: Option<ReducerSpec>,
    pub partitioner: PartitionerSpec,
    pub num_reducers: u32,
    pub output: OutputSpec,
    pub sort: SortSpec,
    pub group: GroupSpec,
    /// The mapper (and combiner) promise not to mutate emitted objects.
    pub mapper_immutable_output: bool,
    /// The reducer promises not to mutate emitted objects.
    pub reducer_immutable_output: bool,
    /// Free-form job properties; see [`JobConfig::overwrite_outputs`],
    /// [`JobConfig::temp_prefix`] and [`JobConfig::read_only_inputs`] for
    /// the ones the engine interprets.
    pub properties: BTreeMap<String, String>,
}

impl JobConfig {
    pub fn new(name: &str, output: OutputSpec) -> JobConfig {
        JobConfig {
            name: name.to_string(),
            inputs: Vec::new(),
            mapper: MapperSpec::Identity,
            combiner: None,
            reducer: None,
            partitioner: PartitionerSpec::HashKey,
            num_reducers: 0,
            output,
            sort: SortSpec::Natural,
            group: GroupSpec::SameAsSort,
            mapper_immutable_output: false,
            reducer_immutable_output: false,
            properties: BTreeMap::new(),
        }
    }

    pub fn input(mut self, format: InputFormatSpec) -> Self {
        self.inputs.push(JobInput {
            format,
            mapper: None,
        });
        self
    }

    /// Redirects the main output, keeping everything else; handy when the
    /// same job shape runs repeatedly against fresh paths.
    pub fn output_to(mut self, path: StorePath) -> Self {
        self.output.main.path = path;
        self
    }

    /// Adds an input read by its own map function instead of the job's.
    pub fn input_mapped(mut self, format: InputFormatSpec, mapper: MapperSpec) -> Self {
        self.inputs.push(JobInput {
            format,
            mapper: Some(mapper),
        });
        self
    }

    pub fn map(mut self, mapper: MapperSpec) -> Self {
        self.mapper = mapper;
        self
    }

    pub fn combine(mut self, combiner: ReducerSpec) -> Self {
        self.combiner = Some(combiner);
        self
    }

    pub fn reduce(mut self, reducer: ReducerSpec, num_reducers: u32) -> Self {
        self.reducer = Some(reducer);
        self.num_reducers = num_reducers;
        self
    }

    pub fn partition(mut self, partitioner: PartitionerSpec) -> Self {
        self.partitioner = partitioner;
        self
    }

    pub fn sort_by(mut self, sort: SortSpec) -> Self {
        self.sort = sort;
        self
    }

    pub fn group_by(mut self, group: GroupSpec) -> Self {
        self.group = group;
        self
    }

    pub fn immutable_map_output(mut self, on: bool) -> Self {
        self.mapper_immutable_output = on;
        self
    }

    pub fn immutable_reduce_output(mut self, on: bool) -> Self {
        self.reducer_immutable_output = on;
        self
    }

    pub fn property(mut self, key: &str, value: &str) -> Self {
        self.properties.insert(key.to_string(), value.to_string());
        self
    }

    pub fn overwrite(self) -> Self {
        self.property("overwrite", "true")
    }

    fn flag(&self, key: &str) -> bool {
        self.properties.get(key).map(String::as_str) == Some("true")
    }

    /// Existing data under an output path is deleted instead of failing
    /// the job. Off by default.
    pub fn overwrite_outputs(&self) -> bool {
        self.flag("overwrite")
    }

    /// Output paths whose name (or containing directory) starts with this
    /// prefix stay cache-only and never reach backing storage.
    pub fn temp_prefix(&self) -> &str {
        self.properties
            .get("tempPrefix")
            .map(String::as_str)
            .unwrap_or("temp")
    }

    /// The job promises its functions never mutate input records, letting
    /// the cache serve shared objects instead of copies. Off by default.
    pub fn read_only_inputs(&self) -> bool {
        self.flag("readOnlyInputs")
    }

    pub(crate) fn validate(&self) -> Result<(), JobError> {
        if self.inputs.is_empty() {
            return Err(JobError::InvalidConfig("job has no inputs".into()));
        }
        match (&self.reducer, self.num_reducers) {
            (None, 0) => {}
            (Some(_), n) if n > 0 => {}
            (None, _) => {
                return Err(JobError::InvalidConfig(
                    "reduce partitions configured without a reducer".into(),
                ))
            }
            (Some(_), _) => {
                return Err(JobError::InvalidConfig(
                    "a reducer needs at least one reduce partition".into(),
                ))
            }
        }
        if self.combiner.is_some() && self.reducer.is_none() {
            return Err(JobError::InvalidConfig(
                "a combiner without a reducer has no destination".into(),
            ));
        }
        let mut paths = vec![self.output.main.path.as_str().to_string()];
        let mut labels: Vec<&str> = Vec::new();
        for (label, out) in &self.output.named {
            if labels.contains(&label.as_str()) {
                return Err(JobError::InvalidConfig(format!(
                    "named output label \"{label}\" appears twice"
                )));
            }
            labels.push(label);
            paths.push(out.path.as_str().to_string());
        }
        paths.sort();
        if paths.windows(2).any(|w| w[0] == w[1]) {
            return Err(JobError::InvalidConfig(
                "output paths must be distinct".into(),
            ));
        }
        Ok(())
    }
}

/// Why a job (or a submission) failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, serde::Serialize, serde::Deserialize)]
pub enum JobError {
    #[error("user function failed in {task}: {message}")]
    UserFunction { task: String, message: String },
    #[error("input not found: {0}")]
    InputNotFound(String),
    #[error("output already exists: {0}")]
    OutputAlreadyExists(String),
    #[error("engine is shut down")]
    EngineDown,
    #[error("another job is already running")]
    JobInFlight,
    #[error("invalid job: {0}")]
    InvalidConfig(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("transport could not be brought up: {0}")]
    TransportInit(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("engine invariant violated: {0}")]
    Internal(String),
}

/// Everything the engine measured while running one job. All fields are
/// totals over every task at every place.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct JobMetrics {
    pub wall_millis: u64,
    /// Bytes of shuffle data serialized for same-place destinations.
    /// Sharing (the immutable-output flag) makes local routes free.
    pub bytes_serialized_local: u64,
    /// Bytes of shuffle data serialized for other places.
    pub bytes_serialized_remote: u64,
    pub pairs_shuffled_local: u64,
    pub pairs_shuffled_remote: u64,
    /// Times a record reader actually ran (cache could not serve).
    pub reader_invocations: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Bytes spilled to scratch storage (always zero for this engine;
    /// the disk-first engine reports its spill volume here).
    pub spill_bytes: u64,
    pub backing_bytes_read: u64,
    pub backing_bytes_written: u64,
    /// Records written across all outputs.
    pub output_records: u64,
    /// Remote shuffle bytes broken down by destination place.
    pub remote_bytes_by_dest: Vec<u64>,
    /// Dense-vector literals inside remote batches, by destination place.
    /// Back-references are not counted, so this measures how many vector
    /// payloads actually crossed the wire.
    pub remote_dense_value_literals_by_dest: Vec<u64>,
    pub user_counters: BTreeMap<String, u64>,
}

impl JobMetrics {
    pub fn with_places(num_places: u32) -> JobMetrics {
        JobMetrics {
            remote_bytes_by_dest: vec![0; num_places as usize],
            remote_dense_value_literals_by_dest: vec![0; num_places as usize],
            ..JobMetrics::default()
        }
    }

    /// Adds every counter of `other` into `self`. Wall time is a span,
    /// not a counter, and is left untouched.
    pub fn absorb(&mut self, other: &JobMetrics) {
        self.bytes_serialized_local += other.bytes_serialized_local;
        self.bytes_serialized_remote += other.bytes_serialized_remote;
        self.pairs_shuffled_local += other.pairs_shuffled_local;
        self.pairs_shuffled_remote += other.pairs_shuffled_remote;
        self.reader_invocations += other.reader_invocations;
        self.cache_hits += other.cache_hits;
        self.cache_misses += other.cache_misses;
        self.spill_bytes += other.spill_bytes;
        self.backing_bytes_read += other.backing_bytes_read;
        self.backing_bytes_written += other.backing_bytes_written;
        self.output_records += other.output_records;
        if self.remote_bytes_by_dest.len() < other.remote_bytes_by_dest.len() {
            self.remote_bytes_by_dest
                .resize(other.remote_bytes_by_dest.len(), 0);
        }
        for (i, b) in other.remote_bytes_by_dest.iter().enumerate() {
            self.remote_bytes_by_dest[i] += b;
        }
        if self.remote_dense_value_literals_by_dest.len()
            < other.remote_dense_value_literals_by_dest.len()
        {
            self.remote_dense_value_literals_by_dest
                .resize(other.remote_dense_value_literals_by_dest.len(), 0);
        }
        for (i, b) in other.remote_dense_value_literals_by_dest.iter().enumerate() {
            self.remote_dense_value_literals_by_dest[i] += b;
        }
        for (name, delta) in &other.user_counters {
            *self.user_counters.entry(name.clone()).or_insert(0) += delta;
        }
    }
}

/// Milestones of a job run, in one global order (`seq` is dense from 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineEvent {
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EventKind {
    MapPhaseStart,
    MapTaskEnd { place: PlaceId },
    /// The place has finished every map task assigned to it, so it has
    /// delivered everything it will deliver this job.
    DeliveryComplete { place: PlaceId },
    /// All deliveries everywhere are complete; reducing may begin.
    BarrierReleased,
    ReduceTaskStart { place: PlaceId, partition: PartitionId },
    /// First reduce call of the task (logged once per task).
    ReduceGroupStart { place: PlaceId, partition: PartitionId },
    OutputCommitted { place: PlaceId, partition: PartitionId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobStatus {
    Succeeded,
    Failed,
}

/// The outcome of one job: final status, measurements, the failure if
/// any, and the run's event log.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub status: JobStatus,
    pub metrics: JobMetrics,
    pub failure: Option<JobError>,
    pub events: Vec<EngineEvent>,
}

impl JobResult {
    pub fn is_success(&self) -> bool {
        self.status == JobStatus::Succeeded
    }

    /// The failure, for asserting on failed runs.
    pub fn error(&self) -> Option<&JobError> {
        self.failure.as_ref()
    }
}

struct EngineState {
    down: bool,
    in_flight: bool,
}

/// A running engine: places, cache, metadata store, and the job gate.
pub struct Engine {
    config: EngineConfig,
    cache: Arc<CacheStore>,
    fs: Vec<FsHandle>,
    state: Mutex<EngineState>,
}

impl Engine {
    /// Brings up an engine: creates the backing directory, the shared
    /// cache, the metadata store, and one filesystem view per place.
    pub fn start(config: EngineConfig) -> Result<Engine, JobError> {
        if config.num_places == 0 {
            return Err(JobError::InvalidConfig(
                "an engine needs at least one place".into(),
            ));
        }
        if config.workers_per_place == 0 {
            return Err(JobError::InvalidConfig(
                "an engine needs at least one worker per place".into(),
            ));
        }
        if let TransportMode::Socket { .. } = config.transport {
            return Err(JobError::InvalidConfig(
                "socket transport is driven through the network runtime, not Engine::start".into(),
            ));
        }
        std::fs::create_dir_all(&config.backing_root)
            .map_err(|e| JobError::Storage(format!("creating backing root: {e}")))?;
        let cache = CacheStore::with_limit(config.cache_limit_bytes);
        let kv = KvStore::new_in_process(config.num_places);
        let fs = (0..config.num_places)
            .map(|p| {
                FsHandle::new(
                    PlaceId(p),
                    config.fs_mode,
                    config.backing_root.clone(),
                    Arc::clone(&cache),
                    kv.clone(),
                )
            })
            .collect();
        Ok(Engine {
            config,
            cache,
            fs,
            state: Mutex::new(EngineState {
                down: false,
                in_flight: false,
            }),
        })
    }

    pub fn config(&self) -> &EngineConfig {
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

    /// The filesystem view of one place.
    pub fn fs(&self, place: PlaceId) -> &FsHandle {
        &self.fs[place.0 as usize]
    }

    /// The place-0 view, convenient for staging inputs and checking
    /// outputs from the driver.
    pub fn fs_home(&self) -> &FsHandle {
        &self.fs[0]
    }

    /// Runs one job to completion. `Err` is reserved for submission
    /// problems (engine down, another job running); anything that goes
    /// wrong inside the job comes back as a `Failed` [`JobResult`].
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
        let _clear = ClearInFlight(&self.state);
        Ok(run::run_job(self, job))
    }

    /// Runs jobs in order, stopping after the first failure. The returned
    /// list holds one result per job started.
    pub fn run_job_sequence(&self, jobs: &[JobConfig]) -> Result<Vec<JobResult>, JobError> {
        let mut results = Vec::with_capacity(jobs.len());
        for job in jobs {
            let result = self.submit_job(job)?;
            let failed = !result.is_success();
            results.push(result);
            if failed {
                break;
            }
        }
        Ok(results)
    }

    /// Refuses further submissions. Idempotent; running jobs finish.
    pub fn shutdown(&self) {
        self.state.lock().down = true;
    }

    pub fn is_down(&self) -> bool {
        self.state.lock().down
    }
}

struct ClearInFlight<'a>(&'a Mutex<EngineState>);

impl Drop for ClearInFlight<'_> {
    fn drop(&mut self) {
        self.0.lock().in_flight = false;
    }
}
