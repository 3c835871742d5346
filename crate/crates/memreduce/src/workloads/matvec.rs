//! Iterated sparse matrix–vector multiplication over blocked operands.
//!
//! The matrix is an `n × n` grid of `block_size × block_size` sparse
//! blocks keyed `(i, j)`; the vector is a column of dense blocks keyed
//! `(j, 0)`. One iteration is two jobs: a multiply job joins each matrix
//! block with a broadcast copy of its vector block and emits per-block
//! partial products, and a sum job folds the partials of each block row
//! into the next vector. The matrix is loaded once and re-read every
//! iteration; only the vector changes, which is exactly the access
//! pattern that rewards keeping job outputs resident.
//!
//! Everything is seeded, and [`dense_reference`] recomputes the final
//! vector with a plain dense multiply for checking either engine.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{
    JobConfig, JobError, JobResult, MapperSpec, PartitionerSpec, ReducerSpec,
};
use crate::formats::{InputFormatSpec, OutputSpec};
use crate::kvstore::StorePath;
use crate::types::{CscBlock, Key, Value};
use crate::util::mix64;

use super::{check_result, join_path, stage_pairs, AnyEngine};

/// Shape of one multiplication chain.
#[derive(Debug, Clone)]
pub struct MatvecSpec {
    /// Matrix dimension; must be a multiple of `block_size`.
    pub n: u32,
    pub block_size: u32,
    /// Probability that any one matrix entry is nonzero.
    pub sparsity: f64,
    /// Number of multiplications applied to the start vector.
    pub iterations: u32,
    pub seed: u64,
    /// Directory all datasets of this run live under.
    pub root: StorePath,
}

impl MatvecSpec {
    pub fn new(n: u32, block_size: u32, sparsity: f64, iterations: u32) -> Self {
        MatvecSpec {
            n,
            block_size,
            sparsity,
            iterations,
            seed: 11,
            root: StorePath::parse("/matvec").expect("literal path"),
        }
    }

    /// Blocks per side of the grid.
    pub fn block_rows(&self) -> u32 {
        assert!(
            self.block_size > 0 && self.n % self.block_size == 0,
            "block_size must divide n"
        );
        self.n / self.block_size
    }
}

// Domain separators so the matrix and the vector draw from unrelated
// streams of the same spec seed.
const MATRIX_TAG: u64 = 0x6d61_7472_6978_3131;
const VECTOR_TAG: u64 = 0x7665_6374_6f72_3131;

fn block_rng(spec: &MatvecSpec, tag: u64, coord: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(spec.seed ^ tag) ^ coord))
}

/// Every matrix block, keyed `(i, j)`, including all-zero blocks. Each
/// block is seeded independently of the rest, so any subset is stable.
pub fn generate_matrix(spec: &MatvecSpec) -> Vec<(Key, Value)> {
    let b = spec.block_rows();
    let bs = spec.block_size;
    let mut out = Vec::with_capacity((b as usize).pow(2));
    for i in 0..b {
        for j in 0..b {
            let mut rng = block_rng(spec, MATRIX_TAG, (u64::from(i) << 32) | u64::from(j));
            let mut block = CscBlock::zero(bs, bs);
            for c in 0..bs {
                for r in 0..bs {
                    if rng.gen::<f64>() < spec.sparsity {
                        block.row_idx.push(r);
                        block.values.push(rng.gen_range(-1.0..1.0));
                    }
                }
                block.col_ptr[c as usize + 1] = block.row_idx.len() as u32;
            }
            debug_assert!(block.validate().is_ok());
            let key = Key::BlockIdx {
                row: i as i32,
                col: j as i32,
            };
            out.push((key, Value::Csc(block)));
        }
    }
    out
}

/// Every start-vector block, keyed `(j, 0)`.
pub fn generate_vector(spec: &MatvecSpec) -> Vec<(Key, Value)> {
    let b = spec.block_rows();
    (0..b)
        .map(|j| {
            let mut rng = block_rng(spec, VECTOR_TAG, u64::from(j));
            let block: Vec<f64> = (0..spec.block_size)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            (
                Key::BlockIdx {
                    row: j as i32,
                    col: 0,
                },
                Value::DenseVec(block),
            )
        })
        .collect()
}

/// The matrix expanded to a row-major dense `n × n` array.
pub fn dense_matrix(spec: &MatvecSpec) -> Vec<f64> {
    let n = spec.n as usize;
    let bs = spec.block_size as usize;
    let mut m = vec![0.0; n * n];
    for (key, value) in generate_matrix(spec) {
        let (bi, bj) = key.as_block_idx().expect("matrix keys are block indices");
        let block = value.as_csc().expect("matrix values are sparse blocks");
        for c in 0..bs {
            for k in block.col_ptr[c] as usize..block.col_ptr[c + 1] as usize {
                let r = block.row_idx[k] as usize;
                m[(bi as usize * bs + r) * n + (bj as usize * bs + c)] = block.values[k];
            }
        }
    }
    m
}

/// The start vector as a flat length-`n` array.
pub fn dense_vector(spec: &MatvecSpec) -> Vec<f64> {
    generate_vector(spec)
        .into_iter()
        .flat_map(|(_, v)| match v {
            Value::DenseVec(block) => block,
            _ => unreachable!("vector blocks are dense"),
        })
        .collect()
}

/// The final vector computed by a textbook dense multiply, independent of
/// any blocking or execution order.
pub fn dense_reference(spec: &MatvecSpec) -> Vec<f64> {
    let n = spec.n as usize;
    let m = dense_matrix(spec);
    let mut v = dense_vector(spec);
    for _ in 0..spec.iterations {
        let mut next = vec![0.0; n];
        for (row, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for col in 0..n {
                acc += m[row * n + col] * v[col];
            }
            *slot = acc;
        }
        v = next;
    }
    v
}

/// Reassembles a job's `(block row, dense block)` output records into one
/// flat vector, verifying every block arrived exactly once.
pub fn assemble_vector(
    records: &[(Key, Value)],
    n: u32,
    block_size: u32,
) -> Result<Vec<f64>, String> {
    assert!(block_size > 0 && n % block_size == 0, "block_size must divide n");
    let b = (n / block_size) as usize;
    let bs = block_size as usize;
    let mut seen = vec![false; b];
    let mut out = vec![0.0; n as usize];
    for (key, value) in records {
        let (i, c) = key
            .as_block_idx()
            .ok_or_else(|| format!("unexpected key {key:?} in vector output"))?;
        if c != 0 || i < 0 || i as usize >= b {
            return Err(format!("block coordinate ({i}, {c}) outside the vector"));
        }
        let block = value
            .as_dense()
            .ok_or_else(|| format!("unexpected value kind under key {key:?}"))?;
        if block.len() != bs {
            return Err(format!(
                "block {i} has {} elements, expected {bs}",
                block.len()
            ));
        }
        if seen[i as usize] {
            return Err(format!("block {i} delivered twice"));
        }
        seen[i as usize] = true;
        out[i as usize * bs..][..bs].copy_from_slice(block);
    }
    match seen.iter().position(|s| !s) {
        None => Ok(out),
        Some(i) => Err(format!("block {i} missing from the output")),
    }
}

/// Results of a completed chain, in submission order.
#[derive(Debug)]
pub struct MatvecRun {
    /// The two jobs that partitioned the staged matrix and vector.
    pub setup: Vec<JobResult>,
    /// Per iteration: the multiply job and the sum job.
    pub iterations: Vec<(JobResult, JobResult)>,
    /// Where the final vector's records ended up.
    pub output: StorePath,
}

/// Runs the whole chain on `engine`. The matrix dataset stays registered
/// for the life of the run; consumed vectors and partial products are
/// dropped as soon as their reader finishes. Stops at the first failed
/// job and returns its error.
pub fn run(engine: &AnyEngine, spec: &MatvecSpec) -> Result<MatvecRun, JobError> {
    let b = spec.block_rows();
    // Several reduce partitions per place: block rows wrap around the
    // partition space, and partials of different rows can fold in
    // parallel on one place.
    let reducers = 4 * engine.num_places();

    let staged_matrix = join_path(&spec.root, "stage-matrix")?;
    let staged_vector = join_path(&spec.root, "stage-vector")?;
    stage_pairs(engine, &staged_matrix, &generate_matrix(spec))?;
    stage_pairs(engine, &staged_vector, &generate_vector(spec))?;

    let matrix = join_path(&spec.root, "g")?;
    let load_matrix = engine.submit_job(
        &JobConfig::new("mv-load-matrix", OutputSpec::pair_file(matrix.clone()))
            .input(InputFormatSpec::PairFile {
                path: staged_matrix,
                target_splits: reducers,
            })
            .reduce(ReducerSpec::Identity, reducers)
            .partition(PartitionerSpec::BlockRowMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true),
    )?;
    check_result(&load_matrix)?;

    let first_vector = join_path(&spec.root, "v-0")?;
    let load_vector = engine.submit_job(
        &JobConfig::new("mv-load-vector", OutputSpec::pair_file(first_vector.clone()))
            .input(InputFormatSpec::PairFile {
                path: staged_vector,
                target_splits: reducers,
            })
            .reduce(ReducerSpec::Identity, reducers)
            .partition(PartitionerSpec::BlockRowMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true),
    )?;
    check_result(&load_vector)?;

    let final_output = join_path(&spec.root, "out")?;
    let mut iterations = Vec::with_capacity(spec.iterations as usize);
    let mut vector = first_vector;
    for i in 1..=spec.iterations {
        let products = join_path(&spec.root, &format!("temp-prod-{i}"))?;
        let multiply = engine.submit_job(
            &JobConfig::new(
                &format!("mv-mult-{i}"),
                OutputSpec::pair_file(products.clone()),
            )
            .input_mapped(
                InputFormatSpec::PairFile {
                    path: matrix.clone(),
                    target_splits: reducers,
                },
                MapperSpec::Identity,
            )
            .input_mapped(
                InputFormatSpec::PairFile {
                    path: vector.clone(),
                    target_splits: reducers,
                },
                MapperSpec::MatvecBroadcastV {
                    block_rows: b as i32,
                },
            )
            .reduce(ReducerSpec::MatvecMultiply, reducers)
            .partition(PartitionerSpec::BlockRowMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true)
            .property("readOnlyInputs", "true"),
        )?;
        check_result(&multiply)?;

        let dst = if i == spec.iterations {
            final_output.clone()
        } else {
            join_path(&spec.root, &format!("temp-v-{i}"))?
        };
        let sum = engine.submit_job(
            &JobConfig::new(&format!("mv-sum-{i}"), OutputSpec::pair_file(dst.clone()))
                .input(InputFormatSpec::PairFile {
                    path: products.clone(),
                    target_splits: reducers,
                })
                .map(MapperSpec::MatvecRekey)
                .reduce(ReducerSpec::SumVecs, reducers)
                .partition(PartitionerSpec::BlockRowMod)
                .immutable_map_output(true)
                .immutable_reduce_output(true)
                .property("readOnlyInputs", "true"),
        )?;
        check_result(&sum)?;

        engine.drop_resident(&products)?;
        engine.drop_resident(&vector)?;
        iterations.push((multiply, sum));
        vector = dst;
    }

    Ok(MatvecRun {
        setup: vec![load_matrix, load_vector],
        iterations,
        output: vector,
    })
}
