//! One place's slice of the store: a metadata table whose entries double as
//! lock records, a child-name index for directory walks, and a block data
//! table.
//!
//! Locking a path swaps its metadata entry for a lock entry owned by the
//! locking task (inserting one if the path had no entry). A second task that
//! hits a lock entry upgrades it to a monitor entry and blocks; every release
//! wakes all monitor waiters, which re-contend. Fairness is not guaranteed.

use std::collections::{BTreeSet, HashMap};

use parking_lot::{Condvar, Mutex};

use crate::types::{Key, Value};

use super::path::StorePath;
use super::{PathInfo, TaskId};

/// Stored content of one block. Pair-sequence blocks hold owned record
/// content; readers materialize fresh handles from it.
#[derive(Debug, Clone)]
pub enum BlockData {
    Bytes(Vec<u8>),
    Pairs(Vec<(Key, Value)>),
}

impl BlockData {
    pub fn length(&self) -> u64 {
        match self {
            BlockData::Bytes(b) => b.len() as u64,
            BlockData::Pairs(p) => p.len() as u64,
        }
    }
}

/// A metadata table slot. `Present` is the steady state; the other two exist
/// only while some task holds or awaits the path's lock.
#[derive(Debug)]
pub enum MetaEntry {
    Present(PathInfo),
    Locked {
        owner: TaskId,
        info: Option<PathInfo>,
    },
    Monitor {
        owner: TaskId,
        info: Option<PathInfo>,
        waiters: u32,
    },
}

/// Place-local or remote access to one shard. Operations above this trait
/// implement the actual store semantics; implementations only move entries,
/// children, and blocks.
///
/// Contract: `read_children` / `put_children` / block mutation for a path are
/// only called by the task currently holding that path's lock.
pub trait ShardAccess: Send + Sync {
    /// Blocks until the path's lock is held by `task`; returns the metadata
    /// that was present, if any.
    fn lock(&self, task: TaskId, path: &StorePath) -> Option<PathInfo>;

    /// Releases `task`'s lock, installing `final_state` (or removing the
    /// entry when `None`) and waking all waiters.
    fn unlock(&self, task: TaskId, path: &StorePath, final_state: Option<PathInfo>);

    fn read_children(&self, path: &StorePath) -> Vec<String>;
    fn put_children(&self, path: &StorePath, names: Vec<String>);
    fn add_child(&self, path: &StorePath, name: &str);
    fn remove_child(&self, path: &StorePath, name: &str);

    fn put_block(&self, id: u64, data: BlockData);
    fn get_block(&self, id: u64) -> Option<BlockData>;
    fn remove_block(&self, id: u64);

    /// Count of non-`Present` metadata slots; used by tests to prove that no
    /// lock or monitor entry leaks once operations quiesce.
    fn lock_entry_count(&self) -> usize;

    /// Paths whose metadata this shard currently holds (diagnostics).
    fn resident_paths(&self) -> Vec<StorePath>;
}

#[derive(Default)]
struct ShardState {
    slots: HashMap<StorePath, MetaEntry>,
    children: HashMap<StorePath, BTreeSet<String>>,
    data: HashMap<u64, BlockData>,
}

/// In-process shard implementation.
pub struct LocalShard {
    state: Mutex<ShardState>,
    released: Condvar,
}

impl LocalShard {
    pub fn new() -> LocalShard {
        LocalShard {
            state: Mutex::new(ShardState::default()),
            released: Condvar::new(),
        }
    }

    /// Installs the root directory entry; called once on the shard that owns
    /// the root path's metadata.
    pub fn install_root(&self, info: PathInfo) {
        let mut st = self.state.lock();
        st.slots.insert(StorePath::root(), MetaEntry::Present(info));
    }
}

impl Default for LocalShard {
    fn default() -> Self {
        Self::new()
    }
}

impl ShardAccess for LocalShard {
    fn lock(&self, task: TaskId, path: &StorePath) -> Option<PathInfo> {
        let mut st = self.state.lock();
        loop {
            let acquired: Option<Option<PathInfo>> = match st.slots.get_mut(path) {
                None => {
                    st.slots
                        .insert(path.clone(), MetaEntry::Locked { owner: task, info: None });
                    Some(None)
                }
                Some(slot) => {
                    let placeholder = MetaEntry::Locked { owner: task, info: None };
                    match std::mem::replace(slot, placeholder) {
                        MetaEntry::Present(info) => {
                            *slot = MetaEntry::Locked {
                                owner: task,
                                info: Some(info.clone()),
                            };
                            Some(Some(info))
                        }
                        MetaEntry::Locked { owner, info } => {
                            // Second contender: upgrade to a monitor entry.
                            *slot = MetaEntry::Monitor {
                                owner,
                                info,
                                waiters: 1,
                            };
                            None
                        }
                        MetaEntry::Monitor { owner, info, waiters } => {
                            *slot = MetaEntry::Monitor {
                                owner,
                                info,
                                waiters: waiters + 1,
                            };
                            None
                        }
                    }
                }
            };
            match acquired {
                Some(info) => return info,
                None => {
                    self.released.wait(&mut st);
                    // Woken by a release (or spuriously): drop our waiter
                    // claim if the monitor survived, then re-contend.
                    if let Some(MetaEntry::Monitor { waiters, .. }) = st.slots.get_mut(path) {
                        *waiters = waiters.saturating_sub(1);
                    }
                }
            }
        }
    }

    fn unlock(&self, task: TaskId, path: &StorePath, final_state: Option<PathInfo>) {
        let mut st = self.state.lock();
        let owner = match st.slots.get(path) {
            Some(MetaEntry::Locked { owner, .. }) | Some(MetaEntry::Monitor { owner, .. }) => *owner,
            other => panic!("unlock of {path} which is not locked (slot: {other:?})"),
        };
        assert_eq!(owner, task, "unlock of {path} by non-owner task");
        match final_state {
            Some(info) => {
                st.slots.insert(path.clone(), MetaEntry::Present(info));
            }
            None => {
                st.slots.remove(path);
            }
        }
        // Wake every waiter; they re-contend without any fairness order.
        self.released.notify_all();
    }

    fn read_children(&self, path: &StorePath) -> Vec<String> {
        let st = self.state.lock();
        st.children
            .get(path)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    fn put_children(&self, path: &StorePath, names: Vec<String>) {
        let mut st = self.state.lock();
        if names.is_empty() {
            st.children.remove(path);
        } else {
            st.children.insert(path.clone(), names.into_iter().collect());
        }
    }

    fn add_child(&self, path: &StorePath, name: &str) {
        let mut st = self.state.lock();
        st.children.entry(path.clone()).or_default().insert(name.to_string());
    }

    fn remove_child(&self, path: &StorePath, name: &str) {
        let mut st = self.state.lock();
        if let Some(set) = st.children.get_mut(path) {
            set.remove(name);
            if set.is_empty() {
                st.children.remove(path);
            }
        }
    }

    fn put_block(&self, id: u64, data: BlockData) {
        self.state.lock().data.insert(id, data);
    }

    fn get_block(&self, id: u64) -> Option<BlockData> {
        self.state.lock().data.get(&id).cloned()
    }

    fn remove_block(&self, id: u64) {
        self.state.lock().data.remove(&id);
    }

    fn lock_entry_count(&self) -> usize {
        self.state
            .lock()
            .slots
            .values()
            .filter(|e| !matches!(e, MetaEntry::Present(_)))
            .count()
    }

    fn resident_paths(&self) -> Vec<StorePath> {
        let mut v: Vec<StorePath> = self.state.lock().slots.keys().cloned().collect();
        v.sort();
        v
    }
}
