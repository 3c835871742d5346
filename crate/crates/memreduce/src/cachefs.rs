//! The caching filesystem layer.
//!
//! Job inputs and outputs flow through an [`FsHandle`], which layers an
//! in-memory pair cache over a byte-oriented backing directory and the
//! metadata store. Outputs are cached at the writing place and, unless
//! the path is temporary, also serialized to backing storage; inputs are
//! served from the cache when an entry with the split's name is resident,
//! falling back to the real record reader otherwise. A raw-cache handle
//! exposes the same namespace operations but touches only the cache, so
//! programs can drop cached data without disturbing backing files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::formats::{
    gen_slice, read_lines_range, read_pair_file, read_pair_range, write_lines, write_pair_file,
    DatasetView, FormatError, InputFormatSpec, InputSplit, OutputKind, PartMeta, ResolvedInput,
    SplitDesc,
};
use crate::kvstore::{BlockKind, KvStore, PathKind, StoreError, StorePath};
use crate::types::{Key, PartitionId, PlaceId, Value};
use crate::types::Pair;

#[derive(Debug, Error)]
pub enum FsError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not in cache: {0}")]
    NotInCache(String),
    #[error("input not found: {0}")]
    InputNotFound(String),
    #[error("cache full: {needed} bytes needed, limit {limit}")]
    CacheFull { needed: u64, limit: u64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Format(FormatError),
}

impl From<FormatError> for FsError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::InputNotFound(p) => FsError::InputNotFound(p),
            other => FsError::Format(other),
        }
    }
}

/// Whether namespace operations reach the backing store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FsMode {
    /// Cache plus backing store (the normal job-facing handle).
    Dual,
    /// Cache only; the backing store is never touched.
    RawCache,
}

/// True when outputs under `path` must stay out of the backing store:
/// the final component, or the directory containing it, starts with the
/// configured prefix. An empty prefix disables the rule.
pub fn is_temporary(path: &StorePath, temp_prefix: &str) -> bool {
    if temp_prefix.is_empty() {
        return false;
    }
    let last_starts = path.name().starts_with(temp_prefix);
    let dir_starts = path
        .parent()
        .map(|p| !p.is_root() && p.name().starts_with(temp_prefix))
        .unwrap_or(false);
    last_starts || dir_starts
}

/// One resident cache entry: the pair sequence of a named split or an
/// output part, held at a single place.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub name: String,
    pub place: PlaceId,
    pub partition: Option<PartitionId>,
    pub pairs: Vec<Pair>,
}

struct StoredEntry {
    place: PlaceId,
    partition: Option<PartitionId>,
    pairs: Vec<Pair>,
    seq: u64,
    approx_bytes: u64,
}

struct CacheState {
    /// Keyed by (place, name): each place caches independently.
    entries: BTreeMap<(u32, String), StoredEntry>,
    used_bytes: u64,
    next_seq: u64,
}

/// The in-memory pair cache shared by all handles of one process. Entries
/// are immutable after insertion; there is no eviction — data leaves the
/// cache only through explicit delete or rename, and an optional byte
/// limit rejects insertions outright rather than evicting silently.
pub struct CacheStore {
    state: RwLock<CacheState>,
    enabled: AtomicBool,
    max_bytes: Option<u64>,
}

fn approx_pair_bytes(p: &Pair) -> u64 {
    let key = match &*p.key.read() {
        Key::Int(_) => 9,
        Key::Text(t) => t.len() as u64 + 5,
        Key::BlockIdx { .. } => 9,
    };
    let value = match &*p.value.read() {
        Value::Bytes(b) => b.len() as u64 + 5,
        Value::Count(_) => 9,
        Value::Csc(b) => 13 + 4 * (b.col_ptr.len() + b.row_idx.len()) as u64 + 8 * b.values.len() as u64,
        Value::DenseVec(v) => 5 + 8 * v.len() as u64,
    };
    key + value
}

/// Does `name` denote `path` itself or something beneath it? Sub-range
/// entries (`path#start-length`) count as beneath their file.
fn name_under(name: &str, path: &str) -> bool {
    if path == "/" {
        return true;
    }
    name == path
        || name
            .strip_prefix(path)
            .is_some_and(|rest| rest.starts_with('/') || rest.starts_with('#'))
}

impl CacheStore {
    pub fn new() -> Arc<CacheStore> {
        CacheStore::with_limit(None)
    }

    pub fn with_limit(max_bytes: Option<u64>) -> Arc<CacheStore> {
        Arc::new(CacheStore {
            state: RwLock::new(CacheState {
                entries: BTreeMap::new(),
                used_bytes: 0,
                next_seq: 0,
            }),
            enabled: AtomicBool::new(true),
            max_bytes,
        })
    }

    /// Turns the cache off (and back on) for transparency testing: while
    /// disabled, lookups miss and insertions are dropped.
    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::SeqCst);
    }

    pub fn enabled(&self) -> bool {
        self.enabled.load(Ordering::SeqCst)
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<(), FsError> {
        if !self.enabled() {
            return Ok(());
        }
        let approx: u64 = entry.pairs.iter().map(approx_pair_bytes).sum();
        let mut st = self.state.write();
        let key = (entry.place.0, entry.name);
        let replaced = st.entries.get(&key).map(|e| e.approx_bytes).unwrap_or(0);
        let needed = st.used_bytes - replaced + approx;
        if let Some(limit) = self.max_bytes {
            if needed > limit {
                return Err(FsError::CacheFull { needed, limit });
            }
        }
        let seq = st.next_seq;
        st.next_seq += 1;
        st.entries.insert(
            key,
            StoredEntry {
                place: entry.place,
                partition: entry.partition,
                pairs: entry.pairs,
                seq,
                approx_bytes: approx,
            },
        );
        st.used_bytes = needed;
        Ok(())
    }

    /// Alias handles to the entry resident at `place`, if any.
    pub fn lookup(&self, place: PlaceId, name: &str) -> Option<Vec<Pair>> {
        if !self.enabled() {
            return None;
        }
        let st = self.state.read();
        st.entries
            .get(&(place.0, name.to_string()))
            .map(|e| e.pairs.clone())
    }

    /// Alias handles to the entry under `name` at whichever place holds
    /// it (lowest place wins when several do).
    pub fn lookup_any(&self, name: &str) -> Option<Vec<Pair>> {
        if !self.enabled() {
            return None;
        }
        let st = self.state.read();
        st.entries
            .iter()
            .find(|((_, n), _)| n == name)
            .map(|(_, e)| e.pairs.clone())
    }

    /// The place holding `name`, used for locality-aware task placement.
    pub fn place_of(&self, name: &str) -> Option<PlaceId> {
        if !self.enabled() {
            return None;
        }
        let st = self.state.read();
        st.entries
            .iter()
            .filter(|((_, n), _)| n == name)
            .min_by_key(|(_, e)| e.seq)
            .map(|(_, e)| e.place)
    }

    /// Removes every entry at or beneath `path` across all places.
    pub fn delete_under(&self, path: &str) -> usize {
        let mut st = self.state.write();
        let doomed: Vec<(u32, String)> = st
            .entries
            .keys()
            .filter(|(_, n)| name_under(n, path))
            .cloned()
            .collect();
        for key in &doomed {
            if let Some(e) = st.entries.remove(key) {
                st.used_bytes -= e.approx_bytes;
            }
        }
        doomed.len()
    }

    /// Renames every entry at or beneath `src` to live under `dest`,
    /// preserving insertion order and partitions.
    pub fn rename_under(&self, src: &str, dest: &str) -> usize {
        let mut st = self.state.write();
        let moved: Vec<(u32, String)> = st
            .entries
            .keys()
            .filter(|(_, n)| name_under(n, src))
            .cloned()
            .collect();
        for (place, name) in &moved {
            if let Some(e) = st.entries.remove(&(*place, name.clone())) {
                let new_name = if name == src {
                    dest.to_string()
                } else {
                    format!("{dest}{}", &name[src.len()..])
                };
                st.entries.insert((*place, new_name), e);
            }
        }
        moved.len()
    }

    /// Entries at or beneath `path`, ordered partition-ascending (entries
    /// without a partition last) then by insertion.
    pub fn entries_under(&self, path: &str) -> Vec<CacheEntry> {
        let st = self.state.read();
        let mut found: Vec<(&(u32, String), &StoredEntry)> = st
            .entries
            .iter()
            .filter(|((_, n), _)| name_under(n, path))
            .collect();
        found.sort_by_key(|(_, e)| (e.partition.map(|p| p.0).unwrap_or(u32::MAX), e.seq));
        found
            .into_iter()
            .map(|((_, name), e)| CacheEntry {
                name: name.clone(),
                place: e.place,
                partition: e.partition,
                pairs: e.pairs.clone(),
            })
            .collect()
    }

    pub fn entry_count(&self) -> usize {
        self.state.read().entries.len()
    }

    pub fn used_bytes(&self) -> u64 {
        self.state.read().used_bytes
    }
}

/// What happened during one split read.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub pairs: Vec<Pair>,
    pub cache_hit: bool,
    pub cache_miss: bool,
    pub reader_invoked: bool,
    pub backing_bytes_read: u64,
}

/// What happened during one part write.
#[derive(Debug, Default, Clone, Copy)]
pub struct WriteOutcome {
    pub records: u64,
    pub backing_bytes_written: u64,
    pub cached: bool,
}

/// Status of a path as seen through a handle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsStatus {
    pub path: StorePath,
    pub is_dir: bool,
    /// Total records known from registered metadata or cache entries.
    pub records: Option<u64>,
    /// Backing-store size for plain files; temp (cache-only) data has none.
    pub bytes: Option<u64>,
}

/// A place-bound view over cache, metadata store, and backing directory.
#[derive(Clone)]
pub struct FsHandle {
    place: PlaceId,
    mode: FsMode,
    backing_root: PathBuf,
    cache: Arc<CacheStore>,
    kv: KvStore,
}

impl FsHandle {
    pub fn new(
        place: PlaceId,
        mode: FsMode,
        backing_root: PathBuf,
        cache: Arc<CacheStore>,
        kv: KvStore,
    ) -> FsHandle {
        FsHandle {
            place,
            mode,
            backing_root,
            cache,
            kv,
        }
    }

    /// A fresh handle onto the same cache that never touches the backing
    /// store, for explicit cache manipulation by programs.
    pub fn raw_cache(&self) -> FsHandle {
        let mut h = self.clone();
        h.mode = FsMode::RawCache;
        h
    }

    /// The same view bound to a different place.
    pub fn at_place(&self, place: PlaceId) -> FsHandle {
        let mut h = self.clone();
        h.place = place;
        h
    }

    pub fn place(&self) -> PlaceId {
        self.place
    }

    pub fn mode(&self) -> FsMode {
        self.mode
    }

    pub fn cache(&self) -> &Arc<CacheStore> {
        &self.cache
    }

    pub fn kv(&self) -> &KvStore {
        &self.kv
    }

    pub fn backing_root(&self) -> &Path {
        &self.backing_root
    }

    /// Backing-store location of a store path.
    pub fn os_path(&self, path: &StorePath) -> PathBuf {
        let rel = path.as_str().trim_start_matches('/');
        if rel.is_empty() {
            self.backing_root.clone()
        } else {
            self.backing_root.join(rel)
        }
    }

    /// Reads one split. Cache hits skip the record reader entirely; misses
    /// of nameable splits populate the cache at this handle's place.
    /// Returned pairs are deep clones unless `read_only` promises the
    /// consumer will not mutate them.
    pub fn read_input(
        &self,
        format: &InputFormatSpec,
        split: &InputSplit,
        read_only: bool,
    ) -> Result<ReadOutcome, FsError> {
        let desc = match &split.desc {
            SplitDesc::Tagged { inner, .. } => inner.as_ref(),
            d => d,
        };
        let name = desc.cache_name();
        let mut out = ReadOutcome::default();
        if let Some(name) = &name {
            let resident = self
                .cache
                .lookup(self.place, name)
                .or_else(|| self.cache.lookup_any(name));
            if let Some(pairs) = resident {
                out.cache_hit = true;
                out.pairs = serve(pairs, read_only);
                return Ok(out);
            }
        }
        out.reader_invoked = true;
        let (pairs, bytes) = self.invoke_reader(format, desc)?;
        out.backing_bytes_read = bytes;
        if let Some(name) = name {
            out.cache_miss = true;
            if self.cache.enabled() {
                self.cache.insert(CacheEntry {
                    name,
                    place: self.place,
                    partition: split.placement,
                    pairs: pairs.clone(),
                })?;
                out.pairs = serve(pairs, read_only);
                return Ok(out);
            }
        }
        // Nothing else holds these pairs; hand them over as-is.
        out.pairs = pairs;
        Ok(out)
    }

    fn invoke_reader(
        &self,
        format: &InputFormatSpec,
        desc: &SplitDesc,
    ) -> Result<(Vec<Pair>, u64), FsError> {
        let to_pairs =
            |recs: Vec<(Key, Value)>| recs.into_iter().map(|(k, v)| Pair::new(k, v)).collect();
        match desc {
            SplitDesc::File {
                path,
                start,
                length,
                whole,
            } => {
                let os = self.os_path(path);
                match format {
                    InputFormatSpec::PairFile { .. } => {
                        let recs = if *whole {
                            read_pair_file(&os)?
                        } else {
                            read_pair_range(&os, *start, *length)?
                        };
                        Ok((to_pairs(recs), *length))
                    }
                    InputFormatSpec::TextLine { .. } => {
                        Ok((to_pairs(read_lines_range(&os, *start, *length)?), *length))
                    }
                    InputFormatSpec::Generator { .. } => Err(FsError::Format(
                        FormatError::Malformed("generator input cannot read files".into()),
                    )),
                }
            }
            SplitDesc::Named { path } => {
                let os = self.os_path(path);
                let recs = read_pair_file(&os)
                    .map_err(|e| match e {
                        FormatError::InputNotFound(_) => {
                            FsError::InputNotFound(path.as_str().to_string())
                        }
                        other => other.into(),
                    })?;
                let bytes = std::fs::metadata(&os).map(|m| m.len()).unwrap_or(0);
                Ok((to_pairs(recs), bytes))
            }
            SplitDesc::Generator { gen, index, count } => {
                Ok((to_pairs(gen_slice(gen, *index, *count)), 0))
            }
            SplitDesc::Tagged { .. } => unreachable!("tags are stripped before reading"),
        }
    }

    /// Writes one output part: always into the cache at this place, into
    /// the metadata store, and — unless the path is temporary or the
    /// handle is cache-only — serialized to the backing store.
    /// `immutable` means the producer guarantees it will not mutate the
    /// pairs afterward, allowing the cache to share them instead of
    /// cloning.
    pub fn write_output(
        &self,
        path: &StorePath,
        kind: OutputKind,
        partition: Option<PartitionId>,
        pairs: &[Pair],
        immutable: bool,
        temp_prefix: &str,
    ) -> Result<WriteOutcome, FsError> {
        let mut out = WriteOutcome {
            records: pairs.len() as u64,
            ..WriteOutcome::default()
        };
        if self.cache.enabled() {
            let cached_pairs: Vec<Pair> = if immutable {
                pairs.to_vec()
            } else {
                pairs.iter().map(Pair::deep_clone).collect()
            };
            self.cache.insert(CacheEntry {
                name: path.as_str().to_string(),
                place: self.place,
                partition,
                pairs: cached_pairs,
            })?;
            out.cached = true;
        }
        if let Some(parent) = path.parent() {
            self.kv.mkdirs(&parent)?;
        }
        self.kv.register_block(
            self.place,
            path,
            BlockKind::PairSeq,
            pairs.len() as u64,
            partition,
        )?;
        if self.mode == FsMode::Dual && !is_temporary(path, temp_prefix) {
            let os = self.os_path(path);
            let content: Vec<(Key, Value)> = pairs.iter().map(Pair::content).collect();
            out.backing_bytes_written = match kind {
                OutputKind::PairFile => {
                    write_pair_file(&os, content.iter().map(|(k, v)| (k, v)))?
                }
                OutputKind::TextLine => write_lines(&os, content.iter().map(|(k, v)| (k, v)))?,
            };
        }
        Ok(out)
    }

    /// Removes a path everywhere this handle can see it: cache entries
    /// and registered metadata always, backing files only in dual mode.
    pub fn fs_delete(&self, path: &StorePath) -> Result<(), FsError> {
        if path.is_root() {
            return Err(StoreError::InvalidPath("the root cannot be deleted".into()).into());
        }
        let cache_removed = self.cache.delete_under(path.as_str()) > 0;
        let kv_removed = match self.kv.delete(path) {
            Ok(()) => true,
            Err(StoreError::NotFound(_)) => false,
            Err(e) => return Err(e.into()),
        };
        let mut backing_removed = false;
        if self.mode == FsMode::Dual {
            let os = self.os_path(path);
            match std::fs::metadata(&os) {
                Ok(m) => {
                    if m.is_dir() {
                        std::fs::remove_dir_all(&os).map_err(FormatError::Io)?;
                    } else {
                        std::fs::remove_file(&os).map_err(FormatError::Io)?;
                    }
                    backing_removed = true;
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(FormatError::Io(e).into()),
            }
        }
        if cache_removed || kv_removed || backing_removed {
            Ok(())
        } else {
            Err(FsError::NotFound(path.as_str().to_string()))
        }
    }

    /// Moves a path (with everything beneath it) to a new name in the
    /// cache, the metadata store, and — in dual mode — the backing store.
    pub fn fs_rename(&self, src: &StorePath, dest: &StorePath) -> Result<(), FsError> {
        if src.is_root() || dest.is_root() {
            return Err(StoreError::InvalidPath("the root cannot be renamed".into()).into());
        }
        if src == dest || src.is_ancestor_of(dest) {
            return Err(StoreError::InvalidPath(format!(
                "cannot rename {} into itself",
                src.as_str()
            ))
            .into());
        }
        let kv_has = self.kv.get_info(src).is_ok();
        // The metadata store validates first (including destination
        // collisions); nothing else is touched if it refuses.
        if kv_has {
            self.kv.rename(src, dest)?;
        }
        let mut moved = kv_has;
        if self.mode == FsMode::Dual {
            let src_os = self.os_path(src);
            if src_os.exists() {
                let dest_os = self.os_path(dest);
                if dest_os.exists() {
                    return Err(StoreError::DestinationExists(dest.clone()).into());
                }
                if let Some(parent) = dest_os.parent() {
                    std::fs::create_dir_all(parent).map_err(FormatError::Io)?;
                }
                std::fs::rename(&src_os, &dest_os).map_err(FormatError::Io)?;
                moved = true;
            }
        }
        if self.cache.rename_under(src.as_str(), dest.as_str()) > 0 {
            moved = true;
        }
        if moved {
            Ok(())
        } else {
            Err(FsError::NotFound(src.as_str().to_string()))
        }
    }

    /// Reports what is known about a path. Cache-only data reports its
    /// record count and no byte size; backing files report bytes.
    pub fn fs_get_status(&self, path: &StorePath) -> Result<FsStatus, FsError> {
        if self.mode == FsMode::RawCache {
            let entries = self.cache.entries_under(path.as_str());
            if entries.is_empty() {
                return Err(FsError::NotFound(path.as_str().to_string()));
            }
            let is_dir = entries.iter().any(|e| e.name != path.as_str());
            let records = entries.iter().map(|e| e.pairs.len() as u64).sum();
            return Ok(FsStatus {
                path: path.clone(),
                is_dir,
                records: Some(records),
                bytes: None,
            });
        }
        if let Ok(info) = self.kv.get_info(path) {
            let records: u64 = match info.kind {
                PathKind::File => info
                    .blocks
                    .iter()
                    .filter(|b| b.kind == BlockKind::PairSeq)
                    .map(|b| b.length)
                    .sum(),
                PathKind::Directory => {
                    let mut total = 0;
                    for child in self.kv.children(path)? {
                        let Ok(child_path) = path.join(&child) else {
                            continue;
                        };
                        if let Ok(ci) = self.kv.get_info(&child_path) {
                            total += ci
                                .blocks
                                .iter()
                                .filter(|b| b.kind == BlockKind::PairSeq)
                                .map(|b| b.length)
                                .sum::<u64>();
                        }
                    }
                    total
                }
            };
            let os = self.os_path(path);
            let bytes = std::fs::metadata(&os).ok().filter(|m| m.is_file()).map(|m| m.len());
            return Ok(FsStatus {
                path: path.clone(),
                is_dir: info.kind == PathKind::Directory,
                records: if records > 0 { Some(records) } else { None },
                bytes,
            });
        }
        let os = self.os_path(path);
        match std::fs::metadata(&os) {
            Ok(m) => Ok(FsStatus {
                path: path.clone(),
                is_dir: m.is_dir(),
                records: None,
                bytes: if m.is_file() { Some(m.len()) } else { None },
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let entries = self.cache.entries_under(path.as_str());
                if entries.is_empty() {
                    Err(FsError::NotFound(path.as_str().to_string()))
                } else {
                    Ok(FsStatus {
                        path: path.clone(),
                        is_dir: entries.iter().any(|e| e.name != path.as_str()),
                        records: Some(entries.iter().map(|e| e.pairs.len() as u64).sum()),
                        bytes: None,
                    })
                }
            }
            Err(e) => Err(FsError::Format(FormatError::Io(e))),
        }
    }

    /// Iterates all cached pairs at or beneath `path`: partitions in
    /// ascending order, write order within each. Yields clones so the
    /// resident entries stay pristine.
    pub fn get_cache_record_reader(&self, path: &StorePath) -> Result<Vec<Pair>, FsError> {
        let entries = self.cache.entries_under(path.as_str());
        if entries.is_empty() {
            return Err(FsError::NotInCache(path.as_str().to_string()));
        }
        Ok(entries
            .iter()
            .flat_map(|e| e.pairs.iter().map(Pair::deep_clone))
            .collect())
    }
}

fn serve(pairs: Vec<Pair>, read_only: bool) -> Vec<Pair> {
    if read_only {
        pairs
    } else {
        pairs.iter().map(Pair::deep_clone).collect()
    }
}

impl DatasetView for FsHandle {
    fn resolve_input(&self, path: &StorePath) -> ResolvedInput {
        if let Ok(info) = self.kv.get_info(path) {
            match info.kind {
                PathKind::File => {
                    let part = info
                        .blocks
                        .iter()
                        .filter(|b| b.kind == BlockKind::PairSeq)
                        .next_back();
                    if let Some(block) = part {
                        return ResolvedInput::RegisteredParts(vec![PartMeta {
                            path: path.clone(),
                            partition: block.partition,
                        }]);
                    }
                }
                PathKind::Directory => {
                    if let Ok(children) = self.kv.children(path) {
                        let mut parts = Vec::new();
                        for child in children {
                            let Ok(child_path) = path.join(&child) else {
                                continue;
                            };
                            if let Ok(ci) = self.kv.get_info(&child_path) {
                                if let Some(block) = ci
                                    .blocks
                                    .iter()
                                    .filter(|b| b.kind == BlockKind::PairSeq)
                                    .next_back()
                                {
                                    parts.push(PartMeta {
                                        path: child_path,
                                        partition: block.partition,
                                    });
                                }
                            }
                        }
                        if !parts.is_empty() {
                            return ResolvedInput::RegisteredParts(parts);
                        }
                    }
                }
            }
        }
        let os = self.os_path(path);
        match std::fs::metadata(&os) {
            Ok(m) if m.is_file() => ResolvedInput::BackingFile(os),
            Ok(m) if m.is_dir() => {
                let mut children: Vec<(StorePath, PathBuf)> = Vec::new();
                if let Ok(rd) = std::fs::read_dir(&os) {
                    for entry in rd.flatten() {
                        let ft = entry.file_type();
                        if ft.map(|t| t.is_file()).unwrap_or(false) {
                            let name = entry.file_name().to_string_lossy().into_owned();
                            if let Ok(child_path) = path.join(&name) {
                                children.push((child_path, entry.path()));
                            }
                        }
                    }
                }
                children.sort();
                ResolvedInput::BackingDir(children)
            }
            _ => ResolvedInput::Missing,
        }
    }
}
