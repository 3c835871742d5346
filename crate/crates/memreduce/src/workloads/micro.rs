//! Iterated shuffle microbenchmark.
//!
//! A seeded dataset of integer-keyed byte payloads is forwarded through a
//! chain of identical jobs. Each job keeps every record on its producing
//! place except for a tunable fraction rerouted to one foreign key, so
//! the amount of cross-place traffic is a direct function of
//! `remote_fraction` while the total work stays fixed. Intermediate
//! datasets use temp-prefixed names, letting an engine with resident
//! storage keep them off the backing store entirely.

use crate::engine::{
    JobConfig, JobError, JobResult, MapperSpec, PartitionerSpec, ReducerSpec,
};
use crate::formats::{GenSpec, InputFormatSpec, OutputSpec};
use crate::kvstore::StorePath;
use crate::util::mix64;

use super::{check_result, join_path, AnyEngine};

/// Shape of one microbenchmark run.
#[derive(Debug, Clone)]
pub struct MicroSpec {
    /// Records in the dataset.
    pub num_pairs: u64,
    /// Payload bytes per record.
    pub value_bytes: u32,
    /// Fraction of records rerouted off their producing place, `0.0..=1.0`.
    pub remote_fraction: f64,
    /// Chained forwarding jobs after the setup job.
    pub iterations: u32,
    /// Seed for the dataset and the per-record reroute decisions.
    pub seed: u64,
    /// Directory all datasets of this run live under.
    pub root: StorePath,
}

impl MicroSpec {
    pub fn new(num_pairs: u64, value_bytes: u32, remote_fraction: f64, iterations: u32) -> Self {
        MicroSpec {
            num_pairs,
            value_bytes,
            remote_fraction,
            iterations,
            seed: 7,
            root: StorePath::parse("/micro").expect("literal path"),
        }
    }
}

/// Results of a completed run, in submission order.
#[derive(Debug)]
pub struct MicroRun {
    /// The job that materialized the seeded dataset.
    pub setup: JobResult,
    /// One result per chained forwarding job.
    pub iterations: Vec<JobResult>,
    /// Where the final iteration's records ended up.
    pub output: StorePath,
}

/// Runs the whole chain on `engine`, dropping each intermediate dataset
/// once its consumer has finished. Stops at the first failed job and
/// returns its error.
pub fn run(engine: &AnyEngine, spec: &MicroSpec) -> Result<MicroRun, JobError> {
    assert!(
        (0.0..=1.0).contains(&spec.remote_fraction),
        "remote_fraction must be a probability"
    );
    let reducers = engine.num_places();

    let first = join_path(&spec.root, "input-0")?;
    let setup = engine.submit_job(
        &JobConfig::new("micro-setup", OutputSpec::pair_file(first.clone()))
            .input(InputFormatSpec::Generator {
                gen: GenSpec::Pairs {
                    num_pairs: spec.num_pairs,
                    value_bytes: spec.value_bytes,
                    seed: spec.seed,
                },
                slices: reducers,
            })
            .reduce(ReducerSpec::Identity, reducers)
            .partition(PartitionerSpec::IntKeyMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true),
    )?;
    check_result(&setup)?;

    let final_output = join_path(&spec.root, "out")?;
    let mut results = Vec::with_capacity(spec.iterations as usize);
    let mut prev = first;
    for i in 1..=spec.iterations {
        let dst = if i == spec.iterations {
            final_output.clone()
        } else {
            join_path(&spec.root, &format!("temp-inter-{i}"))?
        };
        let result = engine.submit_job(
            &JobConfig::new(&format!("micro-iter-{i}"), OutputSpec::pair_file(dst.clone()))
                .input(InputFormatSpec::PairFile {
                    path: prev.clone(),
                    target_splits: reducers,
                })
                .map(MapperSpec::MicroScatter {
                    remote_fraction: spec.remote_fraction,
                    // Independent reroute draws each iteration, still fixed
                    // by the spec seed.
                    seed: mix64(spec.seed ^ u64::from(i)),
                })
                .reduce(ReducerSpec::Identity, reducers)
                .partition(PartitionerSpec::IntKeyMod)
                .immutable_map_output(true)
                .immutable_reduce_output(true)
                .property("readOnlyInputs", "true"),
        )?;
        check_result(&result)?;
        engine.drop_resident(&prev)?;
        results.push(result);
        prev = dst;
    }

    Ok(MicroRun {
        setup,
        iterations: results,
        output: prev,
    })
}
