//! Partition-to-place mapping.
//!
//! The map is a pure function of the partition index and the place count, so
//! any job run on the same engine (or any engine with the same place count)
//! homes a given partition at the same place. That stability is what lets a
//! job chain keep reduce output resident where the next job's map wants it.

use crate::types::{PartitionId, PlaceId};

/// Where a reduce partition runs and where its output is homed.
pub fn partition_to_place(partition: PartitionId, num_places: u32) -> PlaceId {
    assert!(num_places > 0, "place count must be positive");
    PlaceId(partition.0 % num_places)
}

/// The full partition map for a job with `num_reducers` partitions.
pub fn partition_map(num_reducers: u32, num_places: u32) -> Vec<PlaceId> {
    (0..num_reducers)
        .map(|p| partition_to_place(PartitionId(p), num_places))
        .collect()
}
