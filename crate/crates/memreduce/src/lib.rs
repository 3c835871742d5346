//! memreduce: an in-memory-first MapReduce runtime.
//!
//! The crate provides two engines over one job model:
//!
//! * [`engine`] — a resident engine that keeps a fixed set of places alive
//!   across a job sequence, caches job outputs in memory at the place that
//!   produced them, maps partitions to places with a stable pure function, and
//!   de-duplicates repeated objects inside shuffle batches.
//! * [`baseline`] — a conventional disk-backed engine: map outputs are sorted
//!   and spilled to scratch files, reducers fetch and merge partition ranges,
//!   and reduce placement is drawn at random per job.
//!
//! Shared infrastructure: a typed record model with observable object identity
//! ([`types`]), a self-delimiting binary record format and shuffle batch codec
//! ([`codec`]), a hierarchical in-memory key/value store with serializable
//! operations ([`kvstore`]), a write-through caching filesystem layer
//! ([`cachefs`]), input/output formats and split planning ([`formats`]), and
//! ready-made benchmark workloads ([`workloads`]).

pub mod baseline;
pub mod cachefs;
pub mod codec;
pub mod engine;
pub mod formats;
pub mod kvstore;
pub mod net;
pub mod placement;
pub mod types;
pub mod util;
pub mod workloads;
