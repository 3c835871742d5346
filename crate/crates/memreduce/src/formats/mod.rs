//! Input formats, output descriptions, and split planning.
//!
//! A job names its inputs as store paths plus a format; the planner turns
//! each input into [`InputSplit`]s — the unit of map-task scheduling. A
//! split carries an optional partition hint (where the data already
//! lives) and a *cache name*: the stable identity under which the caching
//! layer may retain its records across jobs. Splits without a name (the
//! synthesized kind) can never be cached.

mod gen;
mod pairfile;
mod textline;

pub use gen::{gen_slice, seeded_value, GenSpec};
pub use pairfile::{
    encode_pair_file, read_pair_file, read_pair_range, scan_record_spans, write_file_atomic,
    write_pair_file, PAIR_FILE_MAGIC, RECORD_REGION_START,
};
pub use textline::{lines_in_range, read_lines_range, write_lines};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::kvstore::StorePath;
use crate::types::PartitionId;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: not a pair file (bad magic)")]
    BadMagic { path: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("input not found: {0}")]
    InputNotFound(String),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// How the records behind one input path are encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputFormatSpec {
    /// Binary pair-file container; splits are cut on record boundaries.
    PairFile {
        path: StorePath,
        target_splits: u32,
    },
    /// Newline-delimited text; splits are cut at arbitrary byte offsets
    /// and readers resynchronize on line starts.
    TextLine {
        path: StorePath,
        target_splits: u32,
    },
    /// Records synthesized from a seed; splits are index slices.
    Generator { gen: GenSpec, slices: u32 },
}

impl InputFormatSpec {
    /// The store path this input reads, if it reads one at all.
    pub fn path(&self) -> Option<&StorePath> {
        match self {
            InputFormatSpec::PairFile { path, .. } | InputFormatSpec::TextLine { path, .. } => {
                Some(path)
            }
            InputFormatSpec::Generator { .. } => None,
        }
    }
}

/// What one map task reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitDesc {
    /// A byte range of a file. `whole` marks a range spanning the entire
    /// record region, which is what makes the split nameable by its path
    /// alone.
    File {
        path: StorePath,
        start: u64,
        length: u64,
        whole: bool,
    },
    /// An entire engine-produced part, addressed by its store path.
    Named { path: StorePath },
    /// Slice `index` of `count` equal slices of a synthesized dataset.
    Generator {
        gen: GenSpec,
        index: u32,
        count: u32,
    },
    /// A split of input `input_index` in a multi-input job. At most one
    /// level of tagging is ever applied.
    Tagged {
        inner: Box<SplitDesc>,
        input_index: u32,
    },
}

impl SplitDesc {
    /// Stable identity for caching, or `None` if the split cannot be
    /// cached. Whole files and parts are named by their path; a proper
    /// sub-range is named `path#start-length`.
    pub fn cache_name(&self) -> Option<String> {
        match self {
            SplitDesc::File {
                path,
                start,
                length,
                whole,
            } => {
                if *whole {
                    Some(path.as_str().to_string())
                } else {
                    Some(format!("{}#{}-{}", path.as_str(), start, length))
                }
            }
            SplitDesc::Named { path } => Some(path.as_str().to_string()),
            SplitDesc::Generator { .. } => None,
            SplitDesc::Tagged { inner, .. } => inner.cache_name(),
        }
    }

    /// Which job input this split belongs to (0 unless tagged).
    pub fn input_index(&self) -> u32 {
        match self {
            SplitDesc::Tagged { input_index, .. } => *input_index,
            _ => 0,
        }
    }

    /// The store path read by this split, if any.
    pub fn data_path(&self) -> Option<&StorePath> {
        match self {
            SplitDesc::File { path, .. } | SplitDesc::Named { path } => Some(path),
            SplitDesc::Generator { .. } => None,
            SplitDesc::Tagged { inner, .. } => inner.data_path(),
        }
    }
}

/// A planned split plus the partition its data is already associated
/// with, when known. The scheduler uses the hint to run the map task
/// where the records live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSplit {
    pub desc: SplitDesc,
    pub placement: Option<PartitionId>,
}

/// Wraps each split with its input index so a multi-input job can route
/// records to per-input map functions. Panics on double tagging.
pub fn tag_splits(splits: Vec<InputSplit>, input_index: u32) -> Vec<InputSplit> {
    splits
        .into_iter()
        .map(|s| {
            assert!(
                !matches!(s.desc, SplitDesc::Tagged { .. }),
                "splits are tagged at most once"
            );
            InputSplit {
                desc: SplitDesc::Tagged {
                    inner: Box::new(s.desc),
                    input_index,
                },
                placement: s.placement,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    PairFile,
    TextLine,
}

/// One destination directory for job output parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOutput {
    pub kind: OutputKind,
    pub path: StorePath,
}

/// The main output of a job plus any additional named outputs. Named
/// outputs are addressed from user functions by their label; they cannot
/// themselves have named outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub main: JobOutput,
    pub named: Vec<(String, JobOutput)>,
}

impl OutputSpec {
    pub fn pair_file(path: StorePath) -> Self {
        OutputSpec {
            main: JobOutput {
                kind: OutputKind::PairFile,
                path,
            },
            named: Vec::new(),
        }
    }

    pub fn text(path: StorePath) -> Self {
        OutputSpec {
            main: JobOutput {
                kind: OutputKind::TextLine,
                path,
            },
            named: Vec::new(),
        }
    }

    pub fn named(&self, label: &str) -> Option<&JobOutput> {
        self.named
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, o)| o)
    }
}

/// A registered part of an engine-produced dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartMeta {
    pub path: StorePath,
    pub partition: Option<PartitionId>,
}

/// What the planner found behind an input path.
#[derive(Debug, Clone)]
pub enum ResolvedInput {
    /// A dataset directory whose parts are registered in the metadata
    /// store, each with the partition that produced it.
    RegisteredParts(Vec<PartMeta>),
    /// A plain file in backing storage.
    BackingFile(PathBuf),
    /// A backing directory; children are `(store path, file path)` pairs
    /// sorted by name.
    BackingDir(Vec<(StorePath, PathBuf)>),
    Missing,
}

/// How the planner looks up what lives behind a store path. Implemented
/// by the filesystem layer; tests substitute small fakes.
pub trait DatasetView {
    fn resolve_input(&self, path: &StorePath) -> ResolvedInput;
}

/// Plans the splits for one input. Deterministic for a given view state:
/// parts and directory children are taken in sorted order and chunk
/// boundaries depend only on sizes and `target_splits`.
pub fn compute_splits(
    spec: &InputFormatSpec,
    view: &dyn DatasetView,
) -> Result<Vec<InputSplit>, FormatError> {
    match spec {
        InputFormatSpec::PairFile {
            path,
            target_splits,
        } => match view.resolve_input(path) {
            ResolvedInput::RegisteredParts(parts) => Ok(parts
                .into_iter()
                .map(|p| InputSplit {
                    desc: SplitDesc::Named { path: p.path },
                    placement: p.partition,
                })
                .collect()),
            ResolvedInput::BackingFile(os) => pair_file_splits(path, &os, *target_splits),
            ResolvedInput::BackingDir(children) => {
                let mut out = Vec::new();
                for (child, os) in children {
                    out.extend(pair_file_splits(&child, &os, 1)?);
                }
                Ok(out)
            }
            ResolvedInput::Missing => Err(FormatError::InputNotFound(path.as_str().to_string())),
        },
        InputFormatSpec::TextLine {
            path,
            target_splits,
        } => match view.resolve_input(path) {
            ResolvedInput::RegisteredParts(_) => Err(FormatError::Malformed(format!(
                "{}: text input cannot read an in-memory dataset",
                path.as_str()
            ))),
            ResolvedInput::BackingFile(os) => text_splits(path, &os, *target_splits),
            ResolvedInput::BackingDir(children) => {
                let mut out = Vec::new();
                for (child, os) in children {
                    out.extend(text_splits(&child, &os, 1)?);
                }
                Ok(out)
            }
            ResolvedInput::Missing => Err(FormatError::InputNotFound(path.as_str().to_string())),
        },
        InputFormatSpec::Generator { gen, slices } => {
            let count = (*slices).clamp(1, gen.num_records().max(1) as u32);
            Ok((0..count)
                .map(|index| InputSplit {
                    desc: SplitDesc::Generator {
                        gen: gen.clone(),
                        index,
                        count,
                    },
                    placement: None,
                })
                .collect())
        }
    }
}

/// Cuts a pair file into up to `target` record-aligned ranges with
/// near-equal record counts.
fn pair_file_splits(
    path: &StorePath,
    os: &std::path::Path,
    target: u32,
) -> Result<Vec<InputSplit>, FormatError> {
    let spans = scan_record_spans(os)?;
    let n = spans.len() as u64;
    let k = u64::from(target.max(1)).min(n.max(1));
    if k <= 1 {
        let length = spans.iter().map(|(_, l)| l).sum();
        return Ok(vec![InputSplit {
            desc: SplitDesc::File {
                path: path.clone(),
                start: RECORD_REGION_START,
                length,
                whole: true,
            },
            placement: None,
        }]);
    }
    let mut out = Vec::new();
    for i in 0..k {
        let lo = (n * i / k) as usize;
        let hi = (n * (i + 1) / k) as usize;
        let start = spans[lo].0;
        let end = spans[hi - 1].0 + spans[hi - 1].1;
        out.push(InputSplit {
            desc: SplitDesc::File {
                path: path.clone(),
                start,
                length: end - start,
                whole: false,
            },
            placement: None,
        });
    }
    Ok(out)
}

/// Cuts a text file into up to `target` byte ranges (line resync happens
/// at read time).
fn text_splits(
    path: &StorePath,
    os: &std::path::Path,
    target: u32,
) -> Result<Vec<InputSplit>, FormatError> {
    let size = match std::fs::metadata(os) {
        Ok(m) => m.len(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::InputNotFound(os.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let k = u64::from(target.max(1)).min(size.max(1));
    if k <= 1 {
        return Ok(vec![InputSplit {
            desc: SplitDesc::File {
                path: path.clone(),
                start: 0,
                length: size,
                whole: true,
            },
            placement: None,
        }]);
    }
    let mut out = Vec::new();
    for i in 0..k {
        let start = size * i / k;
        let end = size * (i + 1) / k;
        out.push(InputSplit {
            desc: SplitDesc::File {
                path: path.clone(),
                start,
                length: end - start,
                whole: false,
            },
            placement: None,
        });
    }
    Ok(out)
}
