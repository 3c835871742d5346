//! Hierarchical in-memory key/value store spanning all places.
//!
//! Metadata for a path lives at the place selected by hashing the canonical
//! path; block data lives at the place that created it. Every operation is
//! atomic and serializable: an operation locks every path it will read or
//! write under strict two-phase locking, acquiring the least common ancestor
//! of its path set first and the rest in canonical depth-then-lexicographic
//! order, holding everything until it finishes. Lock state is kept in the
//! metadata table itself (see [`shard`]), mirroring how the entries are
//! swapped for lock and monitor records.

pub mod path;
pub mod shard;

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use path::{least_common_ancestor, StorePath};
pub use shard::{BlockData, LocalShard, MetaEntry, ShardAccess};

use crate::types::{Key, Pair, PartitionId, PlaceId, Value};
use crate::util::fnv1a64;

pub type TaskId = u64;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(StorePath),
    #[error("parent directory missing: {0}")]
    ParentNotFound(StorePath),
    #[error("path is a directory: {0}")]
    IsDirectory(StorePath),
    #[error("destination exists: {0}")]
    DestinationExists(StorePath),
    #[error("ancestor is not a directory: {0}")]
    AncestorIsFile(StorePath),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("block not found")]
    BlockNotFound,
    #[error("block kind mismatch")]
    WrongBlockKind,
    #[error("remote store failure: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BlockKind {
    /// Raw byte blocks; `length` counts bytes.
    FileBytes,
    /// Record-sequence blocks; `length` counts records.
    PairSeq,
}

/// Description of one stored block. Equality covers every field, so a reader
/// can name the exact block it wants.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BlockInfo {
    pub id: u64,
    pub home: PlaceId,
    pub kind: BlockKind,
    pub length: u64,
    pub partition: Option<PartitionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PathKind {
    File,
    Directory,
}

/// Metadata for one path. A file's blocks appear in creation (writer close)
/// order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathInfo {
    pub path: StorePath,
    pub kind: PathKind,
    pub blocks: Vec<BlockInfo>,
    pub created_at: u64,
}

struct Inner {
    num_places: u32,
    shards: Vec<Arc<dyn ShardAccess>>,
    next_task: AtomicU64,
    next_block: AtomicU64,
    clock: AtomicU64,
}

/// Handle to the store; cheap to clone.
#[derive(Clone)]
pub struct KvStore {
    inner: Arc<Inner>,
}

impl KvStore {
    /// Store with all shards in this process.
    pub fn new_in_process(num_places: u32) -> KvStore {
        assert!(num_places > 0);
        let locals: Vec<Arc<LocalShard>> = (0..num_places).map(|_| Arc::new(LocalShard::new())).collect();
        let root_place = (fnv1a64(StorePath::root().as_str().as_bytes()) % num_places as u64) as usize;
        locals[root_place].install_root(PathInfo {
            path: StorePath::root(),
            kind: PathKind::Directory,
            blocks: Vec::new(),
            created_at: 0,
        });
        let shards = locals.into_iter().map(|s| s as Arc<dyn ShardAccess>).collect();
        KvStore::from_shards(num_places, shards, 0)
    }

    /// Store over externally provided shards (used when places live in other
    /// processes). The shard owning the root path must already hold the root
    /// entry.
    pub fn from_shards(num_places: u32, shards: Vec<Arc<dyn ShardAccess>>, id_base: u64) -> KvStore {
        assert_eq!(shards.len(), num_places as usize);
        KvStore {
            inner: Arc::new(Inner {
                num_places,
                shards,
                next_task: AtomicU64::new(id_base << 48 | 1),
                next_block: AtomicU64::new(id_base << 48 | 1),
                clock: AtomicU64::new(1),
            }),
        }
    }

    pub fn num_places(&self) -> u32 {
        self.inner.num_places
    }

    /// Place owning a path's metadata: FNV-1a of the canonical path string,
    /// modulo the place count.
    pub fn metadata_place(&self, path: &StorePath) -> PlaceId {
        PlaceId((fnv1a64(path.as_str().as_bytes()) % self.inner.num_places as u64) as u32)
    }

    fn meta_shard(&self, path: &StorePath) -> &Arc<dyn ShardAccess> {
        &self.inner.shards[self.metadata_place(path).0 as usize]
    }

    fn data_shard(&self, place: PlaceId) -> &Arc<dyn ShardAccess> {
        &self.inner.shards[place.0 as usize]
    }

    fn tx(&self) -> Tx<'_> {
        Tx {
            store: self,
            task: self.inner.next_task.fetch_add(1, Ordering::Relaxed),
            locked: Vec::new(),
            index: HashMap::new(),
            committed: false,
        }
    }

    fn tick(&self) -> u64 {
        self.inner.clock.fetch_add(1, Ordering::Relaxed)
    }

    // -- operations ---------------------------------------------------------

    /// Metadata for a path.
    pub fn get_info(&self, path: &StorePath) -> Result<PathInfo, StoreError> {
        let mut tx = self.tx();
        let info = tx.lock(path).cloned();
        tx.commit();
        info.ok_or_else(|| StoreError::NotFound(path.clone()))
    }

    /// Creates the directory and any missing ancestors; a no-op for paths
    /// that already are directories.
    pub fn mkdirs(&self, path: &StorePath) -> Result<(), StoreError> {
        if path.is_root() {
            return Ok(());
        }
        // The chain from the root down is both the read set (ancestors must
        // be directories) and the write set (missing ones are created), so it
        // is exactly the lock set; its LCA is the root.
        let mut chain = vec![StorePath::root()];
        let comps = path.components();
        for i in 1..=comps.len() {
            chain.push(StorePath::parse(&format!("/{}", comps[..i].join("/"))).unwrap());
        }
        let mut tx = self.tx();
        for p in &chain {
            tx.lock(p);
        }
        for p in &chain[1..] {
            if let Some(info) = tx.current(p) {
                if info.kind != PathKind::Directory {
                    return Err(StoreError::AncestorIsFile(p.clone()));
                }
            }
        }
        for i in 1..chain.len() {
            let p = &chain[i];
            if tx.current(p).is_none() {
                let info = PathInfo {
                    path: p.clone(),
                    kind: PathKind::Directory,
                    blocks: Vec::new(),
                    created_at: self.tick(),
                };
                tx.set_current(p, Some(info));
                self.meta_shard(&chain[i - 1]).add_child(&chain[i - 1], p.name());
            }
        }
        tx.commit();
        Ok(())
    }

    /// Opens a writer that will append one new block to `path`, homed at the
    /// invoking place `at`. The block becomes visible atomically when the
    /// writer is closed.
    pub fn create_writer(
        &self,
        at: PlaceId,
        path: &StorePath,
        kind: BlockKind,
        partition: Option<PartitionId>,
    ) -> Result<Writer, StoreError> {
        if path.is_root() {
            return Err(StoreError::IsDirectory(path.clone()));
        }
        let parent = path.parent().unwrap();
        let mut tx = self.tx();
        tx.lock(&parent);
        tx.lock(path);
        validate_parent_dir(&tx, &parent)?;
        if let Some(info) = tx.current(path) {
            if info.kind == PathKind::Directory {
                return Err(StoreError::IsDirectory(path.clone()));
            }
        }
        tx.commit();
        Ok(Writer {
            store: self.clone(),
            at,
            path: path.clone(),
            partition,
            kind,
            data: match kind {
                BlockKind::FileBytes => BlockData::Bytes(Vec::new()),
                BlockKind::PairSeq => BlockData::Pairs(Vec::new()),
            },
        })
    }

    /// Records a block descriptor on a file without storing block content
    /// in the store. Used by layers that keep the actual data elsewhere
    /// (caches, backing files) but need cross-place metadata: the file
    /// appears in `get_info`/`children` with its record or byte count and
    /// producing partition, while `create_reader` on such a block reports
    /// `BlockNotFound`.
    pub fn register_block(
        &self,
        at: PlaceId,
        path: &StorePath,
        kind: BlockKind,
        length: u64,
        partition: Option<PartitionId>,
    ) -> Result<BlockInfo, StoreError> {
        if path.is_root() {
            return Err(StoreError::IsDirectory(path.clone()));
        }
        let parent = path.parent().unwrap();
        let mut tx = self.tx();
        tx.lock(&parent);
        tx.lock(path);
        validate_parent_dir(&tx, &parent)?;
        if let Some(info) = tx.current(path) {
            if info.kind == PathKind::Directory {
                return Err(StoreError::IsDirectory(path.clone()));
            }
        }
        let id = self.inner.next_block.fetch_add(1, Ordering::Relaxed);
        let block = BlockInfo {
            id,
            home: at,
            kind,
            length,
            partition,
        };
        let newly_created = tx.current(path).is_none();
        let mut info = tx.current(path).cloned().unwrap_or_else(|| PathInfo {
            path: path.clone(),
            kind: PathKind::File,
            blocks: Vec::new(),
            created_at: self.tick(),
        });
        info.blocks.push(block.clone());
        tx.set_current(path, Some(info));
        if newly_created {
            self.meta_shard(&parent).add_child(&parent, path.name());
        }
        tx.commit();
        Ok(block)
    }

    /// Opens a reader over the file's block equal to `block`. Works from any
    /// place; remote block content is fetched by value.
    pub fn create_reader(&self, path: &StorePath, block: &BlockInfo) -> Result<Reader, StoreError> {
        let mut tx = self.tx();
        let info = tx
            .lock(path)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(path.clone()))?;
        if info.kind != PathKind::File {
            return Err(StoreError::IsDirectory(path.clone()));
        }
        if !info.blocks.iter().any(|b| b == block) {
            return Err(StoreError::BlockNotFound);
        }
        let data = self
            .data_shard(block.home)
            .get_block(block.id)
            .ok_or(StoreError::BlockNotFound)?;
        tx.commit();
        Ok(Reader { data })
    }

    /// Removes a path and, for directories, its whole subtree. The root is
    /// protected.
    pub fn delete(&self, path: &StorePath) -> Result<(), StoreError> {
        if path.is_root() {
            return Err(StoreError::InvalidPath("the root cannot be deleted".into()));
        }
        let parent = path.parent().unwrap();
        let mut tx = self.tx();
        tx.lock(&parent);
        if tx.lock(path).is_none() {
            return Err(StoreError::NotFound(path.clone()));
        }
        let order = self.lock_subtree(&mut tx, path)?;
        for p in &order {
            if let Some(info) = tx.current(p) {
                for b in &info.blocks {
                    self.data_shard(b.home).remove_block(b.id);
                }
            }
            self.meta_shard(p).put_children(p, Vec::new());
            tx.set_current(p, None);
        }
        self.meta_shard(&parent).remove_child(&parent, path.name());
        tx.commit();
        Ok(())
    }

    /// Moves a path (and its subtree) to a new name. Block data does not
    /// move: block homes and ids are preserved, only metadata is rewritten.
    pub fn rename(&self, src: &StorePath, dest: &StorePath) -> Result<(), StoreError> {
        if src.is_root() || dest.is_root() {
            return Err(StoreError::InvalidPath("the root cannot be renamed".into()));
        }
        if src == dest {
            return Err(StoreError::InvalidPath("source and destination are identical".into()));
        }
        if src.is_ancestor_of(dest) {
            return Err(StoreError::InvalidPath(format!(
                "destination {dest} lies inside source subtree {src}"
            )));
        }
        let sp = src.parent().unwrap();
        let dp = dest.parent().unwrap();
        let plan = lock_plan(&[sp.clone(), src.clone(), dp.clone(), dest.clone()]);
        let mut tx = self.tx();
        for p in &plan {
            tx.lock(p);
        }
        if tx.current(src).is_none() {
            return Err(StoreError::NotFound(src.clone()));
        }
        if tx.current(dest).is_some() {
            return Err(StoreError::DestinationExists(dest.clone()));
        }
        validate_parent_dir(&tx, &dp).map_err(|_| StoreError::NotFound(dp.clone()))?;

        let src_order = self.lock_subtree(&mut tx, src)?;
        let mut moves = Vec::with_capacity(src_order.len());
        for s in &src_order {
            let twin = if s == src {
                dest.clone()
            } else {
                dest.join(s.strip_ancestor(src).unwrap())
                    .map_err(StoreError::InvalidPath)?
            };
            if &twin != dest {
                tx.lock(&twin);
                if tx.current(&twin).is_some() {
                    return Err(StoreError::DestinationExists(twin));
                }
            }
            moves.push((s.clone(), twin));
        }
        for (from, to) in &moves {
            let mut info = tx.current(from).cloned().expect("locked source entry");
            info.path = to.clone();
            let names = self.meta_shard(from).read_children(from);
            self.meta_shard(from).put_children(from, Vec::new());
            self.meta_shard(to).put_children(to, names);
            tx.set_current(to, Some(info));
            tx.set_current(from, None);
        }
        self.meta_shard(&sp).remove_child(&sp, src.name());
        self.meta_shard(&dp).add_child(&dp, dest.name());
        tx.commit();
        Ok(())
    }

    /// Child names of a directory (empty for files). Listing helper used for
    /// dataset enumeration; not part of the minimal store surface.
    pub fn children(&self, path: &StorePath) -> Result<Vec<String>, StoreError> {
        let mut tx = self.tx();
        let info = tx
            .lock(path)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(path.clone()))?;
        let names = if info.kind == PathKind::Directory {
            self.meta_shard(path).read_children(path)
        } else {
            Vec::new()
        };
        tx.commit();
        Ok(names)
    }

    /// Acquires the locks an operation over `paths` would take, in protocol
    /// order, and holds them until the returned guard drops. Exposed so tests
    /// can observe and interleave the locking protocol directly.
    pub fn lock_paths(&self, paths: &[StorePath]) -> LockedPaths<'_> {
        let plan = lock_plan(paths);
        let mut tx = self.tx();
        for p in &plan {
            tx.lock(p);
        }
        LockedPaths { tx }
    }

    // -- internals ----------------------------------------------------------

    /// Breadth-first walk of a locked path's subtree, locking every
    /// descendant. Returns the walk order (root of the subtree first); the
    /// BFS over lexicographically sorted child names yields the canonical
    /// depth-then-lexicographic order.
    fn lock_subtree(&self, tx: &mut Tx<'_>, root: &StorePath) -> Result<Vec<StorePath>, StoreError> {
        let mut order = vec![root.clone()];
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(d) = queue.pop_front() {
            let is_dir = matches!(tx.current(&d), Some(i) if i.kind == PathKind::Directory);
            if !is_dir {
                continue;
            }
            for name in self.meta_shard(&d).read_children(&d) {
                let child = d.join(&name).map_err(StoreError::InvalidPath)?;
                tx.lock(&child);
                if tx.current(&child).is_some() {
                    order.push(child.clone());
                    queue.push_back(child);
                }
            }
        }
        Ok(order)
    }

    // -- diagnostics --------------------------------------------------------

    /// Total lock or monitor entries across all shards; zero when quiescent.
    pub fn lock_entry_leaks(&self) -> usize {
        self.inner.shards.iter().map(|s| s.lock_entry_count()).sum()
    }

    /// The place whose shard actually holds `path` right now, if any.
    pub fn resident_place_of(&self, path: &StorePath) -> Option<PlaceId> {
        for (i, shard) in self.inner.shards.iter().enumerate() {
            if shard.resident_paths().contains(path) {
                return Some(PlaceId(i as u32));
            }
        }
        None
    }
}

fn validate_parent_dir(tx: &Tx<'_>, parent: &StorePath) -> Result<(), StoreError> {
    match tx.current(parent) {
        Some(info) if info.kind == PathKind::Directory => Ok(()),
        _ => Err(StoreError::ParentNotFound(parent.clone())),
    }
}

/// The order in which an operation over `paths` acquires locks: the least
/// common ancestor of the set first, then every path in canonical
/// depth-then-lexicographic order.
pub fn lock_plan(paths: &[StorePath]) -> Vec<StorePath> {
    let mut v = paths.to_vec();
    v.push(least_common_ancestor(paths));
    v.sort_by(|a, b| a.cmp_depth_lex(b));
    v.dedup();
    v
}

/// Guard over a set of held path locks; dropping it releases them unchanged.
pub struct LockedPaths<'a> {
    tx: Tx<'a>,
}

impl LockedPaths<'_> {
    pub fn acquisition_order(&self) -> Vec<StorePath> {
        self.tx.locked.iter().map(|l| l.path.clone()).collect()
    }
}

struct LockedSlot {
    path: StorePath,
    original: Option<PathInfo>,
    current: Option<PathInfo>,
}

/// One operation's lock set: strict two-phase locking with growing-phase
/// acquisition and release-everything at commit (or abort on drop, which
/// restores the pre-operation entries).
struct Tx<'a> {
    store: &'a KvStore,
    task: TaskId,
    locked: Vec<LockedSlot>,
    index: HashMap<StorePath, usize>,
    committed: bool,
}

impl Tx<'_> {
    fn lock(&mut self, path: &StorePath) -> Option<&PathInfo> {
        if let Some(&i) = self.index.get(path) {
            return self.locked[i].current.as_ref();
        }
        let info = self.store.meta_shard(path).lock(self.task, path);
        let i = self.locked.len();
        self.locked.push(LockedSlot {
            path: path.clone(),
            original: info.clone(),
            current: info,
        });
        self.index.insert(path.clone(), i);
        self.locked[i].current.as_ref()
    }

    fn current(&self, path: &StorePath) -> Option<&PathInfo> {
        let i = *self.index.get(path).expect("path not locked by this operation");
        self.locked[i].current.as_ref()
    }

    fn set_current(&mut self, path: &StorePath, info: Option<PathInfo>) {
        let i = *self.index.get(path).expect("path not locked by this operation");
        self.locked[i].current = info;
    }

    fn commit(mut self) {
        for slot in self.locked.drain(..).rev() {
            self.store
                .meta_shard(&slot.path)
                .unlock(self.task, &slot.path, slot.current);
        }
        self.committed = true;
    }
}

impl Drop for Tx<'_> {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        // Abort: restore every entry to its pre-operation state.
        for slot in self.locked.drain(..).rev() {
            self.store
                .meta_shard(&slot.path)
                .unlock(self.task, &slot.path, slot.original);
        }
    }
}

/// Writer for one new block; see [`KvStore::create_writer`].
pub struct Writer {
    store: KvStore,
    at: PlaceId,
    path: StorePath,
    partition: Option<PartitionId>,
    kind: BlockKind,
    data: BlockData,
}

impl Writer {
    pub fn append_pair(&mut self, key: Key, value: Value) -> Result<(), StoreError> {
        match &mut self.data {
            BlockData::Pairs(v) => {
                v.push((key, value));
                Ok(())
            }
            BlockData::Bytes(_) => Err(StoreError::WrongBlockKind),
        }
    }

    pub fn append_bytes(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        match &mut self.data {
            BlockData::Bytes(v) => {
                v.extend_from_slice(bytes);
                Ok(())
            }
            BlockData::Pairs(_) => Err(StoreError::WrongBlockKind),
        }
    }

    /// Publishes the block: data lands at the writer's place, the block
    /// descriptor is appended to the file (created if absent), and both
    /// become visible atomically.
    pub fn close(self) -> Result<BlockInfo, StoreError> {
        let parent = self.path.parent().unwrap();
        let store = self.store.clone();
        let mut tx = store.tx();
        tx.lock(&parent);
        tx.lock(&self.path);
        validate_parent_dir(&tx, &parent)?;
        if let Some(info) = tx.current(&self.path) {
            if info.kind == PathKind::Directory {
                return Err(StoreError::IsDirectory(self.path.clone()));
            }
        }
        let id = store.inner.next_block.fetch_add(1, Ordering::Relaxed);
        let block = BlockInfo {
            id,
            home: self.at,
            kind: self.kind,
            length: self.data.length(),
            partition: self.partition,
        };
        store.data_shard(self.at).put_block(id, self.data);
        let newly_created = tx.current(&self.path).is_none();
        let mut info = tx.current(&self.path).cloned().unwrap_or_else(|| PathInfo {
            path: self.path.clone(),
            kind: PathKind::File,
            blocks: Vec::new(),
            created_at: store.tick(),
        });
        info.blocks.push(block.clone());
        tx.set_current(&self.path, Some(info));
        if newly_created {
            store.meta_shard(&parent).add_child(&parent, self.path.name());
        }
        tx.commit();
        Ok(block)
    }
}

/// Reader over one block's content, fetched by value at open time.
pub struct Reader {
    data: BlockData,
}

impl Reader {
    pub fn pairs(&self) -> Result<Vec<Pair>, StoreError> {
        match &self.data {
            BlockData::Pairs(v) => Ok(v
                .iter()
                .map(|(k, val)| Pair::new(k.clone(), val.clone()))
                .collect()),
            BlockData::Bytes(_) => Err(StoreError::WrongBlockKind),
        }
    }

    pub fn bytes(&self) -> Result<&[u8], StoreError> {
        match &self.data {
            BlockData::Bytes(b) => Ok(b),
            BlockData::Pairs(_) => Err(StoreError::WrongBlockKind),
        }
    }
}
