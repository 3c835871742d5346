//! User-function surface: map/reduce traits, the named built-in functions
//! jobs are normally assembled from, and partition/sort/group selectors.
//!
//! Built-ins exist so that job descriptions can be sent to other processes
//! by name; fully custom closures are supported in-process via the
//! `Custom` variants.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use crate::codec::encode_key_into;
use crate::engine::task::{GroupEqFn, PartitionFn, SortFn, TaskContext};
use crate::types::{Handle, Key, KeyHandle, Pair, PartitionId, Value, ValueHandle};
use crate::util::{fnv1a64, mix64};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A map function. Called once per task with every record of the task's
/// input split, in split order.
pub trait MapFn: Send + Sync {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String>;
}

/// A reduce (or combine) function. Called once per key group with the
/// group's representative key and its values in arrival order after the
/// sort.
pub trait ReduceFn: Send + Sync {
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String>;
}

/// Selects the map function of a job (or of one input of a job).
#[derive(Clone)]
pub enum MapperSpec {
    /// Re-emits every input pair unchanged, sharing the input objects.
    Identity,
    /// Splits text values into words; emits a fresh `(word, 1)` per word.
    WordCountFresh,
    /// Splits text values into words; emits through one reused key box and
    /// one reused count box, mutating the key box between emissions. Only
    /// correct without the immutable-output flag (the engine copies at
    /// emit); with the flag set this is a deliberate contract violation.
    WordCountReuse,
    /// Forwards each pair, rerouting a seeded `remote_fraction` of them to
    /// the same single foreign key so they leave the producing place.
    MicroScatter { remote_fraction: f64, seed: u64 },
    /// Broadcasts each vector block `(j, 0)` to every block coordinate
    /// `(i, j)`, sharing the one vector object across all copies.
    MatvecBroadcastV { block_rows: i32 },
    /// Rewrites `(i, j)` keys to `(i, 0)`, sharing the values.
    MatvecRekey,
    Custom(Arc<dyn MapFn>),
}

/// Selects the reduce (and combine) function of a job.
#[derive(Clone)]
pub enum ReducerSpec {
    /// Re-emits every value under its group key, sharing the objects.
    Identity,
    /// Sums integer counts into one `(key, total)` pair.
    SumCounts,
    /// Multiplies the group's sparse block by its dense vector block.
    MatvecMultiply,
    /// Sums the group's dense vectors elementwise.
    SumVecs,
    Custom(Arc<dyn ReduceFn>),
}

/// Selects the key-to-partition assignment.
#[derive(Clone)]
pub enum PartitionerSpec {
    /// FNV-1a over the encoded key, mod the partition count.
    HashKey,
    /// Integer keys map to `key mod partitions` (euclidean, so negative
    /// keys stay in range). Non-integer keys fall back to [`HashKey`].
    ///
    /// [`HashKey`]: PartitionerSpec::HashKey
    IntKeyMod,
    /// Block keys map to `row mod partitions`; others fall back to the
    /// hash rule.
    BlockRowMod,
    Custom(Arc<dyn Fn(&Key, u32) -> PartitionId + Send + Sync>),
}

/// Selects the within-partition key order reducers see.
#[derive(Clone)]
pub enum SortSpec {
    /// The natural total order on keys.
    Natural,
    Custom(Arc<dyn Fn(&Key, &Key) -> Ordering + Send + Sync>),
}

/// Selects which consecutive keys (under the sort order) share one reduce
/// call.
#[derive(Clone)]
pub enum GroupSpec {
    /// Keys grouped iff they compare equal under the sort order.
    SameAsSort,
    Custom(Arc<dyn Fn(&Key, &Key) -> bool + Send + Sync>),
}

macro_rules! debug_by_name {
    ($ty:ident { $($unit:ident),* $(,)? }) => {
        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $($ty::$unit { .. } => write!(f, stringify!($unit)),)*
                    #[allow(unreachable_patterns)]
                    _ => write!(f, "Custom"),
                }
            }
        }
    };
}

debug_by_name!(MapperSpec {
    Identity,
    WordCountFresh,
    WordCountReuse,
    MicroScatter,
    MatvecBroadcastV,
    MatvecRekey
});
debug_by_name!(ReducerSpec { Identity, SumCounts, MatvecMultiply, SumVecs });
debug_by_name!(PartitionerSpec { HashKey, IntKeyMod, BlockRowMod });
debug_by_name!(SortSpec { Natural });
debug_by_name!(GroupSpec { SameAsSort });

impl MapperSpec {
    pub fn instantiate(&self) -> Arc<dyn MapFn> {
        match self {
            MapperSpec::Identity => Arc::new(IdentityMap),
            MapperSpec::WordCountFresh => Arc::new(WordCountFresh),
            MapperSpec::WordCountReuse => Arc::new(WordCountReuse),
            MapperSpec::MicroScatter {
                remote_fraction,
                seed,
            } => Arc::new(MicroScatter {
                remote_fraction: *remote_fraction,
                seed: *seed,
            }),
            MapperSpec::MatvecBroadcastV { block_rows } => Arc::new(MatvecBroadcastV {
                block_rows: *block_rows,
            }),
            MapperSpec::MatvecRekey => Arc::new(MatvecRekey),
            MapperSpec::Custom(f) => Arc::clone(f),
        }
    }
}

impl ReducerSpec {
    pub fn instantiate(&self) -> Arc<dyn ReduceFn> {
        match self {
            ReducerSpec::Identity => Arc::new(IdentityReduce),
            ReducerSpec::SumCounts => Arc::new(SumCounts),
            ReducerSpec::MatvecMultiply => Arc::new(MatvecMultiply),
            ReducerSpec::SumVecs => Arc::new(SumVecs),
            ReducerSpec::Custom(f) => Arc::clone(f),
        }
    }
}

fn hash_partition(key: &Key, partitions: u32) -> PartitionId {
    let mut buf = Vec::with_capacity(16);
    encode_key_into(&mut buf, key);
    PartitionId((fnv1a64(&buf) % partitions as u64) as u32)
}

impl PartitionerSpec {
    pub fn compile(&self, partitions: u32) -> Arc<PartitionFn> {
        assert!(partitions > 0, "a job needs at least one partition");
        match self {
            PartitionerSpec::HashKey => {
                Arc::new(move |key: &Key| hash_partition(key, partitions))
            }
            PartitionerSpec::IntKeyMod => Arc::new(move |key: &Key| match key {
                Key::Int(v) => PartitionId(v.rem_euclid(partitions as i64) as u32),
                other => hash_partition(other, partitions),
            }),
            PartitionerSpec::BlockRowMod => Arc::new(move |key: &Key| match key {
                Key::BlockIdx { row, .. } => {
                    PartitionId(row.rem_euclid(partitions as i32) as u32)
                }
                other => hash_partition(other, partitions),
            }),
            PartitionerSpec::Custom(f) => {
                let f = Arc::clone(f);
                Arc::new(move |key: &Key| f(key, partitions))
            }
        }
    }
}

impl SortSpec {
    pub fn compile(&self) -> Arc<SortFn> {
        match self {
            SortSpec::Natural => Arc::new(|a: &Key, b: &Key| a.cmp(b)),
            SortSpec::Custom(f) => {
                let f = Arc::clone(f);
                Arc::new(move |a: &Key, b: &Key| f(a, b))
            }
        }
    }
}

impl GroupSpec {
    pub fn compile(&self, sort: &SortSpec) -> Arc<GroupEqFn> {
        match self {
            GroupSpec::SameAsSort => {
                let sort = sort.compile();
                Arc::new(move |a: &Key, b: &Key| sort(a, b) == Ordering::Equal)
            }
            GroupSpec::Custom(f) => {
                let f = Arc::clone(f);
                Arc::new(move |a: &Key, b: &Key| f(a, b))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in map functions
// ---------------------------------------------------------------------------

struct IdentityMap;

impl MapFn for IdentityMap {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        for pair in input {
            ctx.emit_shared(&pair.key, &pair.value)?;
        }
        Ok(())
    }
}

fn words_of(value: &Value) -> Result<Vec<Vec<u8>>, String> {
    let bytes = value
        .as_bytes()
        .ok_or_else(|| "word count expects byte-string values".to_string())?;
    Ok(bytes
        .split(|b| b.is_ascii_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_vec())
        .collect())
}

struct WordCountFresh;

impl MapFn for WordCountFresh {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        for pair in input {
            for word in words_of(&pair.value.read())? {
                ctx.emit(Key::Text(word), Value::Count(1))?;
            }
        }
        Ok(())
    }
}

struct WordCountReuse;

impl MapFn for WordCountReuse {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        // One key box and one value box for the whole task; the key box is
        // rewritten before every emission.
        let key = Handle::new(Key::Text(Vec::new()));
        let one = Handle::new(Value::Count(1));
        for pair in input {
            for word in words_of(&pair.value.read())? {
                key.set(Key::Text(word));
                ctx.emit_shared(&key, &one)?;
            }
        }
        Ok(())
    }
}

struct MicroScatter {
    remote_fraction: f64,
    seed: u64,
}

impl MapFn for MicroScatter {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        // The "home" of this split is derived from the partition that
        // produced it, not from where the task happens to run, so the
        // output is identical on any engine and any placement.
        let split_partition = ctx
            .split_partition()
            .ok_or_else(|| "scatter mapper needs partitioned input".to_string())?;
        let places = ctx.num_places() as i64;
        let home = split_partition.0 as i64 % places;
        let foreign = Handle::new(Key::Int((home + 1) % places));
        for pair in input {
            let k = pair
                .key
                .read()
                .as_int()
                .ok_or_else(|| "scatter mapper expects integer keys".to_string())?;
            // Seeded per record key, so the remote/local decision does not
            // depend on how the input was split into tasks.
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(mix64(self.seed) ^ k as u64));
            if rng.gen::<f64>() < self.remote_fraction {
                ctx.emit_shared(&foreign, &pair.value)?;
            } else {
                ctx.emit_shared(&pair.key, &pair.value)?;
            }
        }
        Ok(())
    }
}

struct MatvecBroadcastV {
    block_rows: i32,
}

impl MapFn for MatvecBroadcastV {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        for pair in input {
            let (j, _) = pair
                .key
                .read()
                .as_block_idx()
                .ok_or_else(|| "vector broadcast expects block keys".to_string())?;
            for i in 0..self.block_rows {
                let key = Handle::new(Key::BlockIdx { row: i, col: j });
                ctx.emit_shared(&key, &pair.value)?;
            }
        }
        Ok(())
    }
}

struct MatvecRekey;

impl MapFn for MatvecRekey {
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        for pair in input {
            let (i, _) = pair
                .key
                .read()
                .as_block_idx()
                .ok_or_else(|| "rekey expects block keys".to_string())?;
            let key = Handle::new(Key::BlockIdx { row: i, col: 0 });
            ctx.emit_shared(&key, &pair.value)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Built-in reduce functions
// ---------------------------------------------------------------------------

struct IdentityReduce;

impl ReduceFn for IdentityReduce {
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String> {
        for value in values {
            ctx.emit_shared(key, value)?;
        }
        Ok(())
    }
}

struct SumCounts;

impl ReduceFn for SumCounts {
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String> {
        let mut total: i64 = 0;
        for value in values {
            total += value
                .read()
                .as_count()
                .ok_or_else(|| "count sum expects count values".to_string())?;
        }
        ctx.emit_shared(key, &Handle::new(Value::Count(total)))?;
        Ok(())
    }
}

struct MatvecMultiply;

impl ReduceFn for MatvecMultiply {
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String> {
        // The group for block coordinate (i, j) holds the sparse block
        // G[i][j] and the broadcast vector block v[j], distinguished by
        // value kind.
        let mut product: Option<Vec<f64>> = None;
        let mut block: Option<ValueHandle> = None;
        let mut vector: Option<ValueHandle> = None;
        for value in values {
            let guard = value.read();
            match &*guard {
                Value::Csc(_) if block.is_none() => {
                    drop(guard);
                    block = Some(value.clone());
                }
                Value::DenseVec(_) if vector.is_none() => {
                    drop(guard);
                    vector = Some(value.clone());
                }
                Value::Csc(_) | Value::DenseVec(_) => {
                    return Err(format!(
                        "block multiply saw a duplicate operand for key {:?}",
                        key.read()
                    ))
                }
                other => {
                    return Err(format!(
                        "block multiply cannot use a {other:?} value",
                    ))
                }
            }
        }
        if let (Some(block), Some(vector)) = (&block, &vector) {
            let guard_b = block.read();
            let guard_v = vector.read();
            let b = guard_b.as_csc().unwrap();
            let x = guard_v.as_dense().unwrap();
            product = Some(b.multiply(x)?);
        } else if block.is_some() {
            return Err(format!(
                "block multiply is missing the vector operand for key {:?}",
                key.read()
            ));
        }
        // A vector block with no matrix block contributes nothing.
        if let Some(y) = product {
            ctx.emit_shared(key, &Handle::new(Value::DenseVec(y)))?;
        }
        Ok(())
    }
}

struct SumVecs;

impl ReduceFn for SumVecs {
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String> {
        let mut total: Option<Vec<f64>> = None;
        for value in values {
            let guard = value.read();
            let xs = guard
                .as_dense()
                .ok_or_else(|| "vector sum expects dense vector values".to_string())?;
            match &mut total {
                None => total = Some(xs.to_vec()),
                Some(acc) => {
                    if acc.len() != xs.len() {
                        return Err(format!(
                            "vector sum length mismatch: {} vs {}",
                            acc.len(),
                            xs.len()
                        ));
                    }
                    for (a, x) in acc.iter_mut().zip(xs.iter()) {
                        *a += x;
                    }
                }
            }
        }
        if let Some(total) = total {
            ctx.emit_shared(key, &Handle::new(Value::DenseVec(total)))?;
        }
        Ok(())
    }
}
