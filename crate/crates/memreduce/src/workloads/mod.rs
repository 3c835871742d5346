//! Benchmark workloads that run unchanged on either engine.
//!
//! Each workload stages its own input, builds ordinary [`JobConfig`]s,
//! and iterates them through [`AnyEngine`], so the resident and the
//! disk-based engine can be compared record for record on identical work.

pub mod matvec;
pub mod micro;
pub mod wordcount;

use crate::baseline::BaselineEngine;
use crate::cachefs::FsHandle;
use crate::engine::run::{fmt_err, fs_err};
use crate::engine::{Engine, JobConfig, JobError, JobResult};
use crate::formats::{compute_splits, write_pair_file, InputFormatSpec};
use crate::kvstore::StorePath;
use crate::types::{Key, PlaceId, Value};

/// Either engine behind one dispatch surface.
pub enum AnyEngine {
    Resident(Engine),
    Baseline(BaselineEngine),
}

impl AnyEngine {
    pub fn name(&self) -> &'static str {
        match self {
            AnyEngine::Resident(_) => "resident",
            AnyEngine::Baseline(_) => "baseline",
        }
    }

    pub fn num_places(&self) -> u32 {
        match self {
            AnyEngine::Resident(e) => e.num_places(),
            AnyEngine::Baseline(e) => e.num_places(),
        }
    }

    pub fn fs_home(&self) -> &FsHandle {
        match self {
            AnyEngine::Resident(e) => e.fs_home(),
            AnyEngine::Baseline(e) => e.fs_home(),
        }
    }

    pub fn fs(&self, place: PlaceId) -> &FsHandle {
        match self {
            AnyEngine::Resident(e) => e.fs(place),
            AnyEngine::Baseline(e) => e.fs(place),
        }
    }

    pub fn submit_job(&self, job: &JobConfig) -> Result<JobResult, JobError> {
        match self {
            AnyEngine::Resident(e) => e.submit_job(job),
            AnyEngine::Baseline(e) => e.submit_job(job),
        }
    }

    pub fn run_job_sequence(&self, jobs: &[JobConfig]) -> Result<Vec<JobResult>, JobError> {
        match self {
            AnyEngine::Resident(e) => e.run_job_sequence(jobs),
            AnyEngine::Baseline(e) => e.run_job_sequence(jobs),
        }
    }

    pub fn shutdown(&self) {
        match self {
            AnyEngine::Resident(e) => e.shutdown(),
            AnyEngine::Baseline(e) => e.shutdown(),
        }
    }

    /// Reads a whole dataset back through the same resolution a job's
    /// input would use, wherever its records live.
    pub fn read_dataset(&self, path: &StorePath) -> Result<Vec<(Key, Value)>, JobError> {
        let fs = self.fs_home();
        let format = InputFormatSpec::PairFile {
            path: path.clone(),
            target_splits: 1,
        };
        let splits = compute_splits(&format, fs).map_err(fmt_err)?;
        let mut out = Vec::new();
        for split in splits {
            let outcome = fs.read_input(&format, &split, true).map_err(fs_err)?;
            out.extend(outcome.pairs.iter().map(crate::types::Pair::content));
        }
        Ok(out)
    }

    /// Drops a consumed intermediate dataset from memory and the metadata
    /// store; anything already on the backing store stays there.
    pub fn drop_resident(&self, path: &StorePath) -> Result<(), JobError> {
        self.fs_home().raw_cache().fs_delete(path).map_err(fs_err)
    }
}

/// Places records as a single pair file under the engine's backing root,
/// where jobs will find it as a plain input file.
pub fn stage_pairs(
    engine: &AnyEngine,
    path: &StorePath,
    records: &[(Key, Value)],
) -> Result<u64, JobError> {
    let os = engine.fs_home().os_path(path);
    write_pair_file(&os, records.iter().map(|(k, v)| (k, v))).map_err(fmt_err)
}

/// Places raw bytes (for line-oriented inputs) under the backing root.
pub fn stage_bytes(engine: &AnyEngine, path: &StorePath, bytes: &[u8]) -> Result<(), JobError> {
    let os = engine.fs_home().os_path(path);
    if let Some(parent) = os.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| JobError::Storage(format!("staging {}: {e}", path.as_str())))?;
    }
    std::fs::write(&os, bytes).map_err(|e| JobError::Storage(format!("staging {}: {e}", path.as_str())))
}

/// Bails out of a workload with the failed job's error, keeping `Err`
/// for "the workload could not continue".
pub(crate) fn check_result(result: &JobResult) -> Result<(), JobError> {
    match result.error() {
        None => Ok(()),
        Some(e) => Err(e.clone()),
    }
}

pub(crate) fn join_path(path: &StorePath, name: &str) -> Result<StorePath, JobError> {
    path.join(name).map_err(JobError::InvalidConfig)
}
