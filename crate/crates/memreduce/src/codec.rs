//! Binary record format and shuffle batch serialization.
//!
//! A record is one tag byte plus a kind-specific payload for the key, then the
//! same for the value. All integers are little-endian; byte strings and arrays
//! carry 32-bit length prefixes (or lengths implied by earlier fields, for the
//! sparse-block arrays). Records are self-delimiting, so a stream of them
//! needs no framing.
//!
//! Shuffle batches add one layer on top: each key or value slot is either a
//! literal (marker byte 0, then the encoded form) or a back-reference (marker
//! byte 1, then a 32-bit index into the batch's literal table). The builder
//! de-duplicates by *object identity*, never content: when the configured
//! policy allows, a key or value object that was already written into this
//! batch is emitted as a back-reference, and decoding yields aliases of one
//! shared object. The literal table is scoped to a single batch.

use std::collections::HashMap;

use crate::types::{CscBlock, Key, KeyHandle, Pair, PlaceId, Value, ValueHandle};

const KEY_TAG_INT: u8 = 0;
const KEY_TAG_TEXT: u8 = 1;
const KEY_TAG_BLOCKIDX: u8 = 2;

const VALUE_TAG_BYTES: u8 = 0;
const VALUE_TAG_COUNT: u8 = 1;
const VALUE_TAG_CSC: u8 = 2;
const VALUE_TAG_DENSEVEC: u8 = 3;

const MARKER_LITERAL: u8 = 0;
const MARKER_BACKREF: u8 = 1;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed record at byte {offset}: {reason}")]
    MalformedRecord { offset: usize, reason: String },
}

fn malformed(offset: usize, reason: impl Into<String>) -> CodecError {
    CodecError::MalformedRecord {
        offset,
        reason: reason.into(),
    }
}

/// Which previously serialized objects a batch may back-reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DedupPolicy {
    /// Any object already serialized in this batch.
    Full,
    /// Only an object identical to the corresponding slot of the immediately
    /// previous entry from the same producer.
    Consecutive,
    /// No back-references; every slot is a literal.
    Off,
}

// ---------------------------------------------------------------------------
// Plain record encoding
// ---------------------------------------------------------------------------

pub fn encode_key_into(buf: &mut Vec<u8>, key: &Key) {
    match key {
        Key::Int(v) => {
            buf.push(KEY_TAG_INT);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Key::Text(bytes) => {
            buf.push(KEY_TAG_TEXT);
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(bytes);
        }
        Key::BlockIdx { row, col } => {
            buf.push(KEY_TAG_BLOCKIDX);
            buf.extend_from_slice(&row.to_le_bytes());
            buf.extend_from_slice(&col.to_le_bytes());
        }
    }
}

pub fn encode_value_into(buf: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Bytes(bytes) => {
            buf.push(VALUE_TAG_BYTES);
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(bytes);
        }
        Value::Count(v) => {
            buf.push(VALUE_TAG_COUNT);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Value::Csc(b) => {
            buf.push(VALUE_TAG_CSC);
            buf.extend_from_slice(&b.rows.to_le_bytes());
            buf.extend_from_slice(&b.cols.to_le_bytes());
            for p in &b.col_ptr {
                buf.extend_from_slice(&p.to_le_bytes());
            }
            for r in &b.row_idx {
                buf.extend_from_slice(&r.to_le_bytes());
            }
            for v in &b.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Value::DenseVec(xs) => {
            buf.push(VALUE_TAG_DENSEVEC);
            buf.extend_from_slice(&(xs.len() as u32).to_le_bytes());
            for v in xs {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Encodes a (key, value) record.
pub fn encode_kv(key: &Key, value: &Value) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_key_into(&mut buf, key);
    encode_value_into(&mut buf, value);
    buf
}

/// Encodes the pair's current content.
pub fn encode_pair(pair: &Pair) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_key_into(&mut buf, &pair.key.read());
    encode_value_into(&mut buf, &pair.value.read());
    buf
}

/// Byte reader with offset-carrying truncation errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < n {
            return Err(malformed(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, CodecError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_key_at(cur: &mut Cursor<'_>) -> Result<Key, CodecError> {
    let at = cur.pos;
    match cur.u8()? {
        KEY_TAG_INT => Ok(Key::Int(cur.i64()?)),
        KEY_TAG_TEXT => {
            let len = cur.u32()? as usize;
            Ok(Key::Text(cur.take(len)?.to_vec()))
        }
        KEY_TAG_BLOCKIDX => Ok(Key::BlockIdx {
            row: cur.i32()?,
            col: cur.i32()?,
        }),
        tag => Err(malformed(at, format!("unknown key tag {tag}"))),
    }
}

fn decode_value_at(cur: &mut Cursor<'_>) -> Result<Value, CodecError> {
    let at = cur.pos;
    match cur.u8()? {
        VALUE_TAG_BYTES => {
            let len = cur.u32()? as usize;
            Ok(Value::Bytes(cur.take(len)?.to_vec()))
        }
        VALUE_TAG_COUNT => Ok(Value::Count(cur.i64()?)),
        VALUE_TAG_CSC => {
            let rows = cur.u32()?;
            let cols = cur.u32()?;
            let mut col_ptr = Vec::with_capacity(cols as usize + 1);
            for _ in 0..=cols {
                col_ptr.push(cur.u32()?);
            }
            let nnz = *col_ptr.last().unwrap() as usize;
            let mut row_idx = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                row_idx.push(cur.u32()?);
            }
            let mut values = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                values.push(cur.f64()?);
            }
            let block = CscBlock {
                rows,
                cols,
                col_ptr,
                row_idx,
                values,
            };
            block
                .validate()
                .map_err(|reason| malformed(at, format!("invalid sparse block: {reason}")))?;
            Ok(Value::Csc(block))
        }
        VALUE_TAG_DENSEVEC => {
            let len = cur.u32()? as usize;
            let mut xs = Vec::with_capacity(len);
            for _ in 0..len {
                xs.push(cur.f64()?);
            }
            Ok(Value::DenseVec(xs))
        }
        tag => Err(malformed(at, format!("unknown value tag {tag}"))),
    }
}

/// Decodes one record from the front of `bytes`; returns the content and the
/// number of bytes consumed.
pub fn decode_kv(bytes: &[u8]) -> Result<(Key, Value, usize), CodecError> {
    let mut cur = Cursor::new(bytes);
    let key = decode_key_at(&mut cur)?;
    let value = decode_value_at(&mut cur)?;
    Ok((key, value, cur.pos))
}

/// Decodes one record into a freshly allocated pair.
pub fn decode_pair(bytes: &[u8]) -> Result<(Pair, usize), CodecError> {
    let (key, value, used) = decode_kv(bytes)?;
    Ok((Pair::new(key, value), used))
}

/// Length in bytes of the record starting at the front of `bytes`, without
/// materializing it. Used by split computation to walk record boundaries.
pub fn record_len(bytes: &[u8]) -> Result<usize, CodecError> {
    // Decoding is cheap at the scales this engine targets; reuse it rather
    // than maintaining a parallel skipping parser that could drift.
    let (_, _, used) = decode_kv(bytes)?;
    Ok(used)
}

// ---------------------------------------------------------------------------
// Shuffle batches
// ---------------------------------------------------------------------------

/// Literal/back-reference counts observed while building or decoding a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub key_literals: u64,
    pub key_backrefs: u64,
    pub value_literals: u64,
    pub value_backrefs: u64,
    /// Of the value literals, how many were dense vectors. Lets callers
    /// measure broadcast de-duplication of vector payloads without
    /// re-parsing batches.
    pub dense_value_literals: u64,
}

impl BatchStats {
    pub fn merge(&mut self, other: &BatchStats) {
        self.key_literals += other.key_literals;
        self.key_backrefs += other.key_backrefs;
        self.value_literals += other.value_literals;
        self.value_backrefs += other.value_backrefs;
        self.dense_value_literals += other.dense_value_literals;
    }
}

/// A serialized run of shuffle entries bound for one place.
#[derive(Debug, Clone)]
pub struct ShuffleBatch {
    pub destination: PlaceId,
    pub bytes: Vec<u8>,
    pub entries: u32,
    pub stats: BatchStats,
}

impl ShuffleBatch {
    pub fn byte_length(&self) -> u64 {
        self.bytes.len() as u64
    }
}

/// Incremental batch serializer with identity-based de-duplication.
pub struct BatchBuilder {
    destination: PlaceId,
    policy: DedupPolicy,
    body: Vec<u8>,
    entries: u32,
    table_len: u32,
    seen_keys: HashMap<usize, u32>,
    seen_values: HashMap<usize, u32>,
    last_key: Option<(usize, u32)>,
    last_value: Option<(usize, u32)>,
    // Strong references to every object whose address sits in the maps
    // above. Callers may drop a pair as soon as `push` returns; without
    // the pin the allocator could hand the freed address to an unrelated
    // later object, which would then be mistaken for the earlier one.
    pinned_keys: Vec<KeyHandle>,
    pinned_values: Vec<ValueHandle>,
    stats: BatchStats,
}

enum Slot<'a> {
    Key(&'a KeyHandle),
    Value(&'a ValueHandle),
}

impl BatchBuilder {
    pub fn new(destination: PlaceId, policy: DedupPolicy) -> Self {
        BatchBuilder {
            destination,
            policy,
            body: Vec::new(),
            entries: 0,
            table_len: 0,
            seen_keys: HashMap::new(),
            seen_values: HashMap::new(),
            last_key: None,
            last_value: None,
            pinned_keys: Vec::new(),
            pinned_values: Vec::new(),
            stats: BatchStats::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Bytes accumulated so far (entry region only).
    pub fn byte_length(&self) -> u64 {
        self.body.len() as u64
    }

    fn backref_for(&self, id: usize, slot: &Slot<'_>) -> Option<u32> {
        match self.policy {
            DedupPolicy::Off => None,
            DedupPolicy::Full => match slot {
                Slot::Key(_) => self.seen_keys.get(&id).copied(),
                Slot::Value(_) => self.seen_values.get(&id).copied(),
            },
            DedupPolicy::Consecutive => {
                let last = match slot {
                    Slot::Key(_) => self.last_key,
                    Slot::Value(_) => self.last_value,
                };
                last.and_then(|(lid, idx)| (lid == id).then_some(idx))
            }
        }
    }

    fn push_slot(&mut self, slot: Slot<'_>) {
        let id = match &slot {
            Slot::Key(k) => k.id(),
            Slot::Value(v) => v.id(),
        };
        if let Some(idx) = self.backref_for(id, &slot) {
            self.body.push(MARKER_BACKREF);
            self.body.extend_from_slice(&idx.to_le_bytes());
            match slot {
                Slot::Key(_) => {
                    self.stats.key_backrefs += 1;
                    self.last_key = Some((id, idx));
                }
                Slot::Value(_) => {
                    self.stats.value_backrefs += 1;
                    self.last_value = Some((id, idx));
                }
            }
            return;
        }
        let idx = self.table_len;
        self.table_len += 1;
        self.body.push(MARKER_LITERAL);
        let pin = self.policy != DedupPolicy::Off;
        match slot {
            Slot::Key(k) => {
                encode_key_into(&mut self.body, &k.read());
                self.seen_keys.insert(id, idx);
                self.last_key = Some((id, idx));
                if pin {
                    self.pinned_keys.push(k.clone());
                }
                self.stats.key_literals += 1;
            }
            Slot::Value(v) => {
                let value = v.read();
                if matches!(&*value, Value::DenseVec(_)) {
                    self.stats.dense_value_literals += 1;
                }
                encode_value_into(&mut self.body, &value);
                drop(value);
                self.seen_values.insert(id, idx);
                self.last_value = Some((id, idx));
                if pin {
                    self.pinned_values.push(v.clone());
                }
                self.stats.value_literals += 1;
            }
        }
    }

    pub fn push(&mut self, pair: &Pair) {
        self.push_slot(Slot::Key(&pair.key));
        self.push_slot(Slot::Value(&pair.value));
        self.entries += 1;
    }

    /// Appends an entry as plain literals, exempt from de-duplication in
    /// both directions: it never back-references an earlier entry and is
    /// never referenced by a later one. This is the path for defensive
    /// copies, where object identity is deliberately not preserved.
    pub fn push_literal(&mut self, key: &Key, value: &Value) {
        self.body.push(MARKER_LITERAL);
        encode_key_into(&mut self.body, key);
        self.stats.key_literals += 1;
        self.body.push(MARKER_LITERAL);
        if matches!(value, Value::DenseVec(_)) {
            self.stats.dense_value_literals += 1;
        }
        encode_value_into(&mut self.body, value);
        self.stats.value_literals += 1;
        // These literals still occupy table positions on the decode side.
        self.table_len += 2;
        self.last_key = None;
        self.last_value = None;
        self.entries += 1;
    }

    pub fn finish(self) -> ShuffleBatch {
        let mut bytes = Vec::with_capacity(4 + self.body.len());
        bytes.extend_from_slice(&self.entries.to_le_bytes());
        bytes.extend_from_slice(&self.body);
        ShuffleBatch {
            destination: self.destination,
            bytes,
            entries: self.entries,
            stats: self.stats,
        }
    }
}

/// Serializes a pair sequence into one batch under the given policy.
pub fn serialize_batch(pairs: &[Pair], destination: PlaceId, policy: DedupPolicy) -> ShuffleBatch {
    let mut b = BatchBuilder::new(destination, policy);
    for p in pairs {
        b.push(p);
    }
    b.finish()
}

enum TableEntry {
    Key(KeyHandle),
    Value(ValueHandle),
}

/// Decodes a batch body back into pairs. Entries that were back-references
/// come out as aliases of the shared decoded object.
pub fn deserialize_batch(bytes: &[u8]) -> Result<(Vec<Pair>, BatchStats), CodecError> {
    let mut cur = Cursor::new(bytes);
    let count = cur.u32()?;
    let mut table: Vec<TableEntry> = Vec::new();
    let mut out = Vec::with_capacity(count as usize);
    let mut stats = BatchStats::default();

    let read_key = |cur: &mut Cursor<'_>, table: &mut Vec<TableEntry>, stats: &mut BatchStats| -> Result<KeyHandle, CodecError> {
        let at = cur.pos;
        match cur.u8()? {
            MARKER_LITERAL => {
                let h = crate::types::Handle::new(decode_key_at(cur)?);
                table.push(TableEntry::Key(h.clone()));
                stats.key_literals += 1;
                Ok(h)
            }
            MARKER_BACKREF => {
                let idx = cur.u32()? as usize;
                stats.key_backrefs += 1;
                match table.get(idx) {
                    Some(TableEntry::Key(h)) => Ok(h.clone()),
                    Some(TableEntry::Value(_)) => {
                        Err(malformed(at, format!("back-reference {idx} names a value in a key slot")))
                    }
                    None => Err(malformed(at, format!("back-reference {idx} out of range"))),
                }
            }
            m => Err(malformed(at, format!("unknown slot marker {m}"))),
        }
    };
    let read_value = |cur: &mut Cursor<'_>, table: &mut Vec<TableEntry>, stats: &mut BatchStats| -> Result<ValueHandle, CodecError> {
        let at = cur.pos;
        match cur.u8()? {
            MARKER_LITERAL => {
                let v = decode_value_at(cur)?;
                if matches!(v, Value::DenseVec(_)) {
                    stats.dense_value_literals += 1;
                }
                let h = crate::types::Handle::new(v);
                table.push(TableEntry::Value(h.clone()));
                stats.value_literals += 1;
                Ok(h)
            }
            MARKER_BACKREF => {
                let idx = cur.u32()? as usize;
                stats.value_backrefs += 1;
                match table.get(idx) {
                    Some(TableEntry::Value(h)) => Ok(h.clone()),
                    Some(TableEntry::Key(_)) => {
                        Err(malformed(at, format!("back-reference {idx} names a key in a value slot")))
                    }
                    None => Err(malformed(at, format!("back-reference {idx} out of range"))),
                }
            }
            m => Err(malformed(at, format!("unknown slot marker {m}"))),
        }
    };

    for _ in 0..count {
        let key = read_key(&mut cur, &mut table, &mut stats)?;
        let value = read_value(&mut cur, &mut table, &mut stats)?;
        out.push(Pair { key, value });
    }
    if cur.pos != bytes.len() {
        return Err(malformed(cur.pos, "trailing bytes after final entry"));
    }
    Ok((out, stats))
}
