//! On-disk container for key/value records.
//!
//! A pair file is the 8-byte magic `MRPAIRS1` followed by a flat run of
//! encoded records. Records are self-delimiting, so the file needs no
//! index or footer: readers can decode sequentially, and the split
//! planner can find record boundaries with a forward scan.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::codec::{decode_kv, encode_key_into, encode_value_into, record_len};
use crate::types::{Key, Value};

use super::FormatError;

/// Magic bytes at offset 0 of every pair file.
pub const PAIR_FILE_MAGIC: &[u8; 8] = b"MRPAIRS1";

/// Byte offset of the first record (just past the magic).
pub const RECORD_REGION_START: u64 = 8;

/// Serializes records into pair-file bytes (magic + encoded records).
pub fn encode_pair_file<'a, I>(records: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a Key, &'a Value)>,
{
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(PAIR_FILE_MAGIC);
    for (k, v) in records {
        encode_key_into(&mut out, k);
        encode_value_into(&mut out, v);
    }
    out
}

/// Writes a pair file atomically: the bytes land under a temporary name in
/// the destination directory and are renamed into place, so concurrent
/// readers never observe a half-written file.
pub fn write_pair_file<'a, I>(os_path: &Path, records: I) -> Result<u64, FormatError>
where
    I: IntoIterator<Item = (&'a Key, &'a Value)>,
{
    let bytes = encode_pair_file(records);
    write_file_atomic(os_path, &bytes)?;
    Ok(bytes.len() as u64)
}

/// Writes `bytes` to `os_path` via a sibling temp file plus rename.
pub fn write_file_atomic(os_path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = os_path.parent().ok_or_else(|| {
        FormatError::Malformed(format!("output path {} has no parent", os_path.display()))
    })?;
    fs::create_dir_all(dir)?;
    let file_name = os_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{}.wip-{}", file_name, std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, os_path)?;
    Ok(())
}

fn check_magic(os_path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if bytes.len() < PAIR_FILE_MAGIC.len() || &bytes[..PAIR_FILE_MAGIC.len()] != PAIR_FILE_MAGIC {
        return Err(FormatError::BadMagic {
            path: os_path.display().to_string(),
        });
    }
    Ok(())
}

/// Decodes every record of a pair file.
pub fn read_pair_file(os_path: &Path) -> Result<Vec<(Key, Value)>, FormatError> {
    let bytes = read_whole(os_path)?;
    check_magic(os_path, &bytes)?;
    decode_region(&bytes, RECORD_REGION_START, bytes.len() as u64 - RECORD_REGION_START)
}

/// Decodes the records in `[start, start + length)`. `start` must sit on a
/// record boundary and the range must end on one; anything else is reported
/// as a malformed range rather than silently truncated.
pub fn read_pair_range(
    os_path: &Path,
    start: u64,
    length: u64,
) -> Result<Vec<(Key, Value)>, FormatError> {
    let bytes = read_whole(os_path)?;
    check_magic(os_path, &bytes)?;
    if start < RECORD_REGION_START || start + length > bytes.len() as u64 {
        return Err(FormatError::Malformed(format!(
            "range {}+{} outside record region of {} ({} bytes)",
            start,
            length,
            os_path.display(),
            bytes.len()
        )));
    }
    decode_region(&bytes, start, length)
}

fn read_whole(os_path: &Path) -> Result<Vec<u8>, FormatError> {
    match fs::read(os_path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(FormatError::InputNotFound(os_path.display().to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn decode_region(bytes: &[u8], start: u64, length: u64) -> Result<Vec<(Key, Value)>, FormatError> {
    let end = (start + length) as usize;
    let mut pos = start as usize;
    let mut out = Vec::new();
    while pos < end {
        let (k, v, used) = decode_kv(&bytes[pos..end])?;
        out.push((k, v));
        pos += used;
    }
    Ok(out)
}

/// Returns the byte offset and length of every record in the file, in
/// order. Used by the split planner to cut record-aligned byte ranges.
pub fn scan_record_spans(os_path: &Path) -> Result<Vec<(u64, u64)>, FormatError> {
    let bytes = read_whole(os_path)?;
    check_magic(os_path, &bytes)?;
    let mut spans = Vec::new();
    let mut pos = RECORD_REGION_START as usize;
    while pos < bytes.len() {
        let len = record_len(&bytes[pos..])?;
        spans.push((pos as u64, len as u64));
        pos += len;
    }
    Ok(spans)
}
