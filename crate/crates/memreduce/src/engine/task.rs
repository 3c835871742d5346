//! Task execution context: the emit interface user functions see, the
//! buffered sink used for combiner input and task outputs, and the
//! sort/group pass that shapes reduce input.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::types::{Key, KeyHandle, Pair, PartitionId, PlaceId, Value, ValueHandle};

/// Key ordering used to sort a partition's reduce input.
pub type SortFn = dyn Fn(&Key, &Key) -> Ordering + Send + Sync;
/// Key equivalence that coarsens the sort order into reduce groups.
pub type GroupEqFn = dyn Fn(&Key, &Key) -> bool + Send + Sync;
/// Key to partition assignment.
pub type PartitionFn = dyn Fn(&Key) -> PartitionId + Send + Sync;

/// Where emitted pairs go. Implementations enforce the cloning contract:
/// without the producer's immutable-output flag, every emission is
/// defensively copied at the moment of the call, so later mutation of the
/// emitted objects is never observable downstream.
pub trait EmitSink {
    fn emit_shared(&mut self, key: &KeyHandle, value: &ValueHandle) -> Result<(), String>;
    fn emit_owned(&mut self, key: Key, value: Value) -> Result<(), String>;
    fn emit_named(&mut self, label: &str, key: Key, value: Value) -> Result<(), String>;
}

/// Immutable facts about the running task, exposed on [`TaskContext`].
#[derive(Debug, Clone, Copy)]
pub struct TaskInfo {
    pub place: PlaceId,
    pub num_places: u32,
    pub num_partitions: u32,
    /// The reduce partition, for reduce tasks.
    pub partition: Option<PartitionId>,
    /// The partition the input split was produced by, for map tasks over
    /// partitioned datasets.
    pub split_partition: Option<PartitionId>,
}

/// What a user function gets to work with: task facts, named counters,
/// and the emit sink.
pub struct TaskContext<'a> {
    pub(crate) info: TaskInfo,
    pub(crate) counters: &'a mut BTreeMap<String, u64>,
    pub(crate) sink: &'a mut dyn EmitSink,
}

impl<'a> TaskContext<'a> {
    pub fn place(&self) -> PlaceId {
        self.info.place
    }

    pub fn num_places(&self) -> u32 {
        self.info.num_places
    }

    pub fn num_partitions(&self) -> u32 {
        self.info.num_partitions
    }

    pub fn partition(&self) -> Option<PartitionId> {
        self.info.partition
    }

    pub fn split_partition(&self) -> Option<PartitionId> {
        self.info.split_partition
    }

    /// Emits freshly built content. The pair gets its own identity; the
    /// caller keeps no handle to it.
    pub fn emit(&mut self, key: Key, value: Value) -> Result<(), String> {
        self.sink.emit_owned(key, value)
    }

    /// Emits via handles the caller may still hold. Without the
    /// immutable-output flag the engine copies the content now; with it,
    /// the handles are shared downstream, which both enables batch
    /// de-duplication and makes post-emit mutation the caller's contract
    /// violation.
    pub fn emit_shared(&mut self, key: &KeyHandle, value: &ValueHandle) -> Result<(), String> {
        self.sink.emit_shared(key, value)
    }

    /// Emits to one of the job's additional named outputs.
    pub fn emit_named(&mut self, label: &str, key: Key, value: Value) -> Result<(), String> {
        self.sink.emit_named(label, key, value)
    }

    /// Adds to a named counter. Counters only ever grow during a task and
    /// are summed across all tasks and places at job end.
    pub fn add_counter(&mut self, name: &str, delta: u64) {
        *self.counters.entry(name.to_string()).or_insert(0) += delta;
    }
}

/// A buffering sink: collects the main-output emissions of one task (and
/// any named-output emissions) for a later step — combining, or writing
/// output parts.
pub struct BufferSink {
    immutable: bool,
    labels: Vec<String>,
    pub main: Vec<Pair>,
    pub named: BTreeMap<String, Vec<Pair>>,
    closed: bool,
}

impl BufferSink {
    pub fn new(immutable: bool, labels: Vec<String>) -> BufferSink {
        BufferSink {
            immutable,
            labels,
            main: Vec::new(),
            named: BTreeMap::new(),
            closed: false,
        }
    }

    /// No further emissions are accepted; a late emit (for example from a
    /// leaked context) is an error rather than silent data loss.
    pub fn close(&mut self) {
        self.closed = true;
    }

    fn guard(&self) -> Result<(), String> {
        if self.closed {
            Err("emit after task end".to_string())
        } else {
            Ok(())
        }
    }
}

impl EmitSink for BufferSink {
    fn emit_shared(&mut self, key: &KeyHandle, value: &ValueHandle) -> Result<(), String> {
        self.guard()?;
        let pair = if self.immutable {
            Pair::from_handles(key, value)
        } else {
            Pair::from_handles(key, value).deep_clone()
        };
        self.main.push(pair);
        Ok(())
    }

    fn emit_owned(&mut self, key: Key, value: Value) -> Result<(), String> {
        self.guard()?;
        self.main.push(Pair::new(key, value));
        Ok(())
    }

    fn emit_named(&mut self, label: &str, key: Key, value: Value) -> Result<(), String> {
        self.guard()?;
        if !self.labels.iter().any(|l| l == label) {
            return Err(format!("unknown named output \"{label}\""));
        }
        self.named
            .entry(label.to_string())
            .or_default()
            .push(Pair::new(key, value));
        Ok(())
    }
}

/// Stable-sorts pairs by the sort order, then cuts them into groups of
/// consecutive keys equal under the group equivalence. Each group keeps
/// its first key as the representative the reducer sees.
///
/// Keys are snapshotted once up front: comparisons never take two handle
/// guards at a time, and a misbehaving producer mutating a key mid-sort
/// cannot corrupt the ordering invariant.
pub fn sort_and_group(
    pairs: Vec<Pair>,
    sort: &SortFn,
    group_eq: &GroupEqFn,
) -> Vec<(KeyHandle, Vec<ValueHandle>)> {
    let mut keyed: Vec<(Key, Pair)> = pairs.into_iter().map(|p| (p.key.get(), p)).collect();
    keyed.sort_by(|a, b| sort(&a.0, &b.0));
    let mut out: Vec<(KeyHandle, Vec<ValueHandle>)> = Vec::new();
    let mut rep: Option<Key> = None;
    for (key, pair) in keyed {
        let same_group = rep.as_ref().map(|r| group_eq(r, &key)).unwrap_or(false);
        if same_group {
            out.last_mut().unwrap().1.push(pair.value);
        } else {
            rep = Some(key);
            out.push((pair.key, vec![pair.value]));
        }
    }
    out
}
