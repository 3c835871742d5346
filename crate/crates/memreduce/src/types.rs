//! Typed key/value data model shared by the engines.
//!
//! Keys and values travel through the system behind [`Handle`]s: shared,
//! internally mutable boxes with observable object identity. Identity is what
//! the shuffle de-duplication and the local no-copy fast path key on, and it is
//! what lets tests distinguish "same object" from "equal content".

use std::fmt;
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};

/// A place is one member of the fixed set of executors the engine starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct PlaceId(pub u32);

/// A reduce partition index, dense from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct PartitionId(pub u32);

impl fmt::Display for PlaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Sparse matrix block in compressed-sparse-column layout.
///
/// `col_ptr` has `cols + 1` entries; column `j`'s nonzeros live at positions
/// `col_ptr[j] .. col_ptr[j + 1]` of `row_idx` / `values`, with row indices
/// strictly increasing within a column.
#[derive(Debug, Clone, PartialEq)]
pub struct CscBlock {
    pub rows: u32,
    pub cols: u32,
    pub col_ptr: Vec<u32>,
    pub row_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CscBlock {
    /// An all-zero block with the given dimensions.
    pub fn zero(rows: u32, cols: u32) -> Self {
        CscBlock {
            rows,
            cols,
            col_ptr: vec![0; cols as usize + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation found.
    pub fn validate(&self) -> Result<(), String> {
        if self.col_ptr.len() != self.cols as usize + 1 {
            return Err(format!(
                "col_ptr length {} != cols + 1 = {}",
                self.col_ptr.len(),
                self.cols + 1
            ));
        }
        if self.col_ptr[0] != 0 {
            return Err("col_ptr[0] != 0".into());
        }
        for w in self.col_ptr.windows(2) {
            if w[1] < w[0] {
                return Err("col_ptr not nondecreasing".into());
            }
        }
        let nnz = *self.col_ptr.last().unwrap() as usize;
        if self.row_idx.len() != nnz || self.values.len() != nnz {
            return Err(format!(
                "array lengths (row_idx {}, values {}) != col_ptr[cols] = {}",
                self.row_idx.len(),
                self.values.len(),
                nnz
            ));
        }
        for j in 0..self.cols as usize {
            let (lo, hi) = (self.col_ptr[j] as usize, self.col_ptr[j + 1] as usize);
            for k in lo..hi {
                if self.row_idx[k] >= self.rows {
                    return Err(format!("row index {} out of range", self.row_idx[k]));
                }
                if k > lo && self.row_idx[k] <= self.row_idx[k - 1] {
                    return Err(format!("row indices not strictly increasing in column {j}"));
                }
            }
        }
        Ok(())
    }

    /// Multiplies this block by a dense vector of length `cols`.
    pub fn multiply(&self, x: &[f64]) -> Result<Vec<f64>, String> {
        if x.len() != self.cols as usize {
            return Err(format!(
                "dimension mismatch: block has {} columns, vector has {}",
                self.cols,
                x.len()
            ));
        }
        let mut y = vec![0.0; self.rows as usize];
        for j in 0..self.cols as usize {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j] as usize..self.col_ptr[j + 1] as usize {
                y[self.row_idx[k] as usize] += self.values[k] * xj;
            }
        }
        Ok(y)
    }
}

/// The key kinds a job may shuffle on. Each kind carries a total order; keys of
/// different kinds are never compared within one job, but the derived order is
/// total (kind first) so sorting mixed data is still well defined.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Int(i64),
    Text(Vec<u8>),
    BlockIdx { row: i32, col: i32 },
}

impl Key {
    pub fn text(s: &str) -> Key {
        Key::Text(s.as_bytes().to_vec())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Key::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_block_idx(&self) -> Option<(i32, i32)> {
        match self {
            Key::BlockIdx { row, col } => Some((*row, *col)),
            _ => None,
        }
    }
}

/// The value kinds a job may carry.
#[derive(Debug, Clone)]
pub enum Value {
    Bytes(Vec<u8>),
    Count(i64),
    Csc(CscBlock),
    DenseVec(Vec<f64>),
}

impl Value {
    pub fn as_count(&self) -> Option<i64> {
        match self {
            Value::Count(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_dense(&self) -> Option<&[f64]> {
        match self {
            Value::DenseVec(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_csc(&self) -> Option<&CscBlock> {
        match self {
            Value::Csc(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }
}

// Value equality compares floats bit for bit, so round-trip tests can assert
// exact preservation and Eq/Hash stay coherent.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        fn bits(xs: &[f64]) -> Vec<u64> {
            xs.iter().map(|x| x.to_bits()).collect()
        }
        match (self, other) {
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::Count(a), Value::Count(b)) => a == b,
            (Value::DenseVec(a), Value::DenseVec(b)) => bits(a) == bits(b),
            (Value::Csc(a), Value::Csc(b)) => {
                a.rows == b.rows
                    && a.cols == b.cols
                    && a.col_ptr == b.col_ptr
                    && a.row_idx == b.row_idx
                    && bits(&a.values) == bits(&b.values)
            }
            _ => false,
        }
    }
}

impl Eq for Value {}

/// Shared, mutable box with observable identity.
///
/// Cloning a `Handle` produces an alias of the same object; [`Handle::ptr_eq`]
/// distinguishes aliases from equal-content copies.
#[derive(Debug)]
pub struct Handle<T>(Arc<RwLock<T>>);

impl<T> Clone for Handle<T> {
    fn clone(&self) -> Self {
        Handle(Arc::clone(&self.0))
    }
}

impl<T: Clone> Handle<T> {
    pub fn new(value: T) -> Self {
        Handle(Arc::new(RwLock::new(value)))
    }

    /// Clones the current content out of the box.
    pub fn get(&self) -> T {
        self.0.read().clone()
    }

    /// Read access without copying.
    pub fn read(&self) -> RwLockReadGuard<'_, T> {
        self.0.read()
    }

    /// Replaces the content in place; aliases observe the new content.
    pub fn set(&self, value: T) {
        *self.0.write() = value;
    }

    /// True iff the two handles alias the same underlying object.
    pub fn ptr_eq(&self, other: &Handle<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Stable address-based identity token, valid while the object is alive.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as *const () as usize
    }
}

pub type KeyHandle = Handle<Key>;
pub type ValueHandle = Handle<Value>;

/// One record: a key box and a value box. Cloning a `Pair` aliases both boxes;
/// use [`Pair::deep_clone`] for an independent copy.
#[derive(Debug, Clone)]
pub struct Pair {
    pub key: KeyHandle,
    pub value: ValueHandle,
}

impl Pair {
    pub fn new(key: Key, value: Value) -> Pair {
        Pair {
            key: Handle::new(key),
            value: Handle::new(value),
        }
    }

    pub fn from_handles(key: &KeyHandle, value: &ValueHandle) -> Pair {
        Pair {
            key: key.clone(),
            value: value.clone(),
        }
    }

    /// Copies the current content into fresh boxes. The result shares no state
    /// with the original: mutating either never affects the other.
    pub fn deep_clone(&self) -> Pair {
        Pair {
            key: Handle::new(self.key.get()),
            value: Handle::new(self.value.get()),
        }
    }

    /// Snapshot of the current content.
    pub fn content(&self) -> (Key, Value) {
        (self.key.get(), self.value.get())
    }

    pub fn content_eq(&self, other: &Pair) -> bool {
        self.content() == other.content()
    }
}
