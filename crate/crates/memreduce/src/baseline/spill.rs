//! Sorted on-disk runs of map output, segmented by partition.
//!
//! A spill file holds one sorted run: records grouped by ascending
//! partition, sorted within each partition by the job's sort order. The
//! layout is a magic header, the record segments back to back, then a
//! trailer of `(offset, length)` entries — one per partition — and a
//! closing partition count. A fetcher reads the trailer, seeks to its
//! partition's segment, and never touches the rest of the file.

use std::collections::VecDeque;
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::codec::{decode_kv, encode_key_into, encode_value_into};
use crate::engine::task::SortFn;
use crate::formats::FormatError;
use crate::types::{Key, Pair, PlaceId};

const SPILL_MAGIC: &[u8; 8] = b"spilrun1";

/// An in-memory description of one spill file, kept by the writer so the
/// reduce side knows where to fetch from and who wrote it.
#[derive(Debug, Clone)]
pub(crate) struct SpillHandle {
    pub os_path: PathBuf,
    /// The place whose map task wrote the file; a fetch from any other
    /// place counts as remote.
    pub place: PlaceId,
    pub task_id: u64,
    pub run: u32,
    /// Record bytes only — what a fetch of every segment would read.
    pub payload_bytes: u64,
    /// Whole file including framing; only integrity checks look at it.
    #[cfg_attr(not(test), allow(dead_code))]
    pub file_bytes: u64,
}

/// Writes one sorted run. `records` must be ordered by non-decreasing
/// partition; each entry carries a snapshot of its key taken when the run
/// was sorted, so the bytes written match the order established then.
pub(crate) fn write_spill(
    os_path: &Path,
    place: PlaceId,
    task_id: u64,
    run: u32,
    num_partitions: u32,
    records: &[(u32, Key, Pair)],
) -> Result<SpillHandle, FormatError> {
    let mut buf = Vec::with_capacity(4096);
    buf.extend_from_slice(SPILL_MAGIC);
    let mut segments: Vec<(u64, u64)> = Vec::with_capacity(num_partitions as usize);
    let mut next = 0usize;
    for r in 0..num_partitions {
        let start = buf.len() as u64;
        while let Some((partition, key, pair)) = records.get(next) {
            debug_assert!(*partition >= r, "records not ordered by partition");
            if *partition != r {
                break;
            }
            encode_key_into(&mut buf, key);
            encode_value_into(&mut buf, &pair.value.read());
            next += 1;
        }
        segments.push((start, buf.len() as u64 - start));
    }
    debug_assert_eq!(next, records.len(), "record partition out of range");
    let payload_bytes = buf.len() as u64 - SPILL_MAGIC.len() as u64;
    for (offset, length) in &segments {
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&length.to_le_bytes());
    }
    buf.extend_from_slice(&num_partitions.to_le_bytes());
    let mut file = fs::File::create(os_path)?;
    file.write_all(&buf)?;
    Ok(SpillHandle {
        os_path: os_path.to_path_buf(),
        place,
        task_id,
        run,
        payload_bytes,
        file_bytes: buf.len() as u64,
    })
}

/// Reads the trailer: the `(offset, length)` of every partition segment.
pub(crate) fn read_segments(os_path: &Path) -> Result<Vec<(u64, u64)>, FormatError> {
    let mut file = fs::File::open(os_path)?;
    let file_len = file.metadata()?.len();
    let malformed = |why: &str| {
        FormatError::Malformed(format!("spill file {}: {why}", os_path.display()))
    };
    if file_len < (SPILL_MAGIC.len() + 4) as u64 {
        return Err(malformed("too short for a trailer"));
    }
    file.seek(SeekFrom::End(-4))?;
    let mut count_bytes = [0u8; 4];
    file.read_exact(&mut count_bytes)?;
    let count = u32::from_le_bytes(count_bytes) as u64;
    let trailer_len = count * 16 + 4;
    if file_len < SPILL_MAGIC.len() as u64 + trailer_len {
        return Err(malformed("partition count exceeds file size"));
    }
    file.seek(SeekFrom::End(-(trailer_len as i64)))?;
    let mut trailer = vec![0u8; (count * 16) as usize];
    file.read_exact(&mut trailer)?;
    let mut segments = Vec::with_capacity(count as usize);
    for entry in trailer.chunks_exact(16) {
        let offset = u64::from_le_bytes(entry[..8].try_into().unwrap());
        let length = u64::from_le_bytes(entry[8..].try_into().unwrap());
        if offset < SPILL_MAGIC.len() as u64 || offset + length > file_len - trailer_len {
            return Err(malformed("segment outside record region"));
        }
        segments.push((offset, length));
    }
    Ok(segments)
}

/// Reads and decodes one partition segment.
pub(crate) fn read_segment(
    os_path: &Path,
    offset: u64,
    length: u64,
) -> Result<Vec<Pair>, FormatError> {
    let mut file = fs::File::open(os_path)?;
    file.seek(SeekFrom::Start(offset))?;
    let mut bytes = vec![0u8; length as usize];
    file.read_exact(&mut bytes)?;
    let mut pairs = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let (key, value, used) = decode_kv(&bytes[pos..])?;
        pairs.push(Pair::new(key, value));
        pos += used;
    }
    Ok(pairs)
}

/// Merges already-sorted runs into one sorted stream. With more runs than
/// `fan_in`, intermediate passes merge `fan_in` runs at a time, parking
/// each merged run on disk under `scratch_dir` until the survivors fit in
/// a single pass; the extra bytes written are added to `spilled`.
pub(crate) fn merge_sorted_runs(
    runs: Vec<VecDeque<(Key, Pair)>>,
    sort: &SortFn,
    fan_in: usize,
    scratch_dir: &Path,
    tag: &str,
    spilled: &mut u64,
) -> Result<Vec<(Key, Pair)>, FormatError> {
    assert!(fan_in >= 2, "merging needs a fan-in of at least 2");
    let mut pending: VecDeque<MergeRun> = runs.into_iter().map(MergeRun::Mem).collect();
    let mut pass = 0u32;
    while pending.len() > fan_in {
        let batch: Vec<MergeRun> = pending.drain(..fan_in).collect();
        let loaded = batch
            .into_iter()
            .map(|r| r.load())
            .collect::<Result<Vec<_>, _>>()?;
        let merged = merge_once(loaded, sort);
        let os_path = scratch_dir.join(format!("{tag}-pass{pass}"));
        let flat: Vec<(u32, Key, Pair)> = merged
            .into_iter()
            .map(|(key, pair)| (0, key, pair))
            .collect();
        let handle = write_spill(&os_path, PlaceId(0), 0, pass, 1, &flat)?;
        *spilled += handle.payload_bytes;
        pending.push_back(MergeRun::File(os_path));
        pass += 1;
    }
    let loaded = pending
        .into_iter()
        .map(|r| r.load())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(merge_once(loaded, sort))
}

enum MergeRun {
    Mem(VecDeque<(Key, Pair)>),
    File(PathBuf),
}

impl MergeRun {
    fn load(self) -> Result<VecDeque<(Key, Pair)>, FormatError> {
        match self {
            MergeRun::Mem(run) => Ok(run),
            MergeRun::File(os_path) => {
                let (offset, length) = read_segments(&os_path)?[0];
                Ok(read_segment(&os_path, offset, length)?
                    .into_iter()
                    .map(|pair| (pair.key.get(), pair))
                    .collect())
            }
        }
    }
}

/// One pass of k-way merging; ties go to the earlier run, so the merge is
/// stable with respect to run order.
fn merge_once(mut runs: Vec<VecDeque<(Key, Pair)>>, sort: &SortFn) -> Vec<(Key, Pair)> {
    let total = runs.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(total);
    loop {
        let mut best = usize::MAX;
        for i in 0..runs.len() {
            let Some((key, _)) = runs[i].front() else {
                continue;
            };
            if best == usize::MAX {
                best = i;
                continue;
            }
            let (best_key, _) = runs[best].front().unwrap();
            if sort(key, best_key) == std::cmp::Ordering::Less {
                best = i;
            }
        }
        if best == usize::MAX {
            return out;
        }
        out.push(runs[best].pop_front().unwrap());
    }
}
