//! Helpers shared by the integration test targets that exercise the
//! store's concurrency contract: a small path universe, randomized
//! multi-task operation histories, and a checker that searches for a
//! sequential interleaving reproducing a concurrent run's results.
#![allow(dead_code)]

use std::sync::Barrier;
use std::thread;

use memreduce::kvstore::{BlockKind, KvStore, StoreError, StorePath};
use memreduce::types::PlaceId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A fixed forest of paths, deep enough for subtree operations and small
/// enough that random operations collide constantly.
pub fn universe() -> Vec<StorePath> {
    ["/a", "/b", "/a/x", "/a/y", "/b/x", "/a/x/g"]
        .iter()
        .map(|s| StorePath::parse(s).unwrap())
        .collect()
}

/// One store operation over the universe, by path index.
#[derive(Clone, Copy, Debug)]
pub enum Op {
    Mkdirs(usize),
    Delete(usize),
    Rename(usize, usize),
    Children(usize),
    Exists(usize),
    Register(usize),
    CountBlocks(usize),
}

/// Applies `op` and flattens the outcome to a comparable summary. Error
/// summaries keep only the variant; success summaries keep only
/// state-determined facts (never block ids, which depend on global
/// allocation order).
pub fn apply(store: &KvStore, paths: &[StorePath], op: Op) -> String {
    fn err(e: StoreError) -> String {
        let tag = match e {
            StoreError::NotFound(_) => "not-found",
            StoreError::ParentNotFound(_) => "no-parent",
            StoreError::IsDirectory(_) => "is-dir",
            StoreError::DestinationExists(_) => "dest-exists",
            StoreError::AncestorIsFile(_) => "ancestor-file",
            StoreError::InvalidPath(_) => "invalid",
            StoreError::BlockNotFound => "no-block",
            StoreError::WrongBlockKind => "wrong-kind",
            StoreError::Remote(_) => "remote",
        };
        format!("err:{tag}")
    }
    match op {
        Op::Mkdirs(p) => match store.mkdirs(&paths[p]) {
            Ok(()) => "ok".into(),
            Err(e) => err(e),
        },
        Op::Delete(p) => match store.delete(&paths[p]) {
            Ok(()) => "ok".into(),
            Err(e) => err(e),
        },
        Op::Rename(s, d) => match store.rename(&paths[s], &paths[d]) {
            Ok(()) => "ok".into(),
            Err(e) => err(e),
        },
        Op::Children(p) => match store.children(&paths[p]) {
            Ok(mut names) => {
                names.sort();
                format!("ok[{}]", names.join(","))
            }
            Err(e) => err(e),
        },
        Op::Exists(p) => match store.get_info(&paths[p]) {
            Ok(info) => format!("ok:{:?}", info.kind),
            Err(e) => err(e),
        },
        Op::Register(p) => {
            match store.register_block(PlaceId(0), &paths[p], BlockKind::PairSeq, 1, None) {
                Ok(_) => "ok".into(),
                Err(e) => err(e),
            }
        }
        Op::CountBlocks(p) => match store.get_info(&paths[p]) {
            Ok(info) => format!("ok:{}", info.blocks.len()),
            Err(e) => err(e),
        },
    }
}

/// A random operation, weighted toward mutations so histories conflict.
pub fn random_op(rng: &mut ChaCha8Rng, n_paths: usize) -> Op {
    let p = rng.gen_range(0..n_paths);
    match rng.gen_range(0..100) {
        0..=24 => Op::Mkdirs(p),
        25..=39 => Op::Delete(p),
        40..=49 => Op::Rename(p, rng.gen_range(0..n_paths)),
        50..=64 => Op::Children(p),
        65..=74 => Op::Exists(p),
        75..=89 => Op::Register(p),
        _ => Op::CountBlocks(p),
    }
}

/// Up to four task programs totalling at most eight operations.
pub fn random_history(seed: u64, n_paths: usize) -> Vec<Vec<Op>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = rng.gen_range(2..=4usize);
    let total = rng.gen_range(tasks..=8usize);
    let mut programs = vec![Vec::new(); tasks];
    for i in 0..total {
        let t = if i < tasks { i } else { rng.gen_range(0..tasks) };
        programs[t].push(random_op(&mut rng, n_paths));
    }
    programs
}

/// Runs each program on its own thread against one fresh store, all
/// released together for maximal overlap. Returns per-task summaries and
/// the store's lock-entry count after quiescence.
pub fn run_concurrent(programs: &[Vec<Op>], paths: &[StorePath]) -> (Vec<Vec<String>>, usize) {
    let store = KvStore::new_in_process(2);
    let barrier = Barrier::new(programs.len());
    let results: Vec<Vec<String>> = thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .map(|prog| {
                let store = store.clone();
                let barrier = &barrier;
                s.spawn(move || {
                    barrier.wait();
                    prog.iter().map(|&op| apply(&store, paths, op)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let leaks = store.lock_entry_leaks();
    (results, leaks)
}

/// Replays `order` (a sequence of task indices) from an empty store and
/// returns the summary of the final operation replayed.
fn replay_last(programs: &[Vec<Op>], order: &[usize], paths: &[StorePath]) -> String {
    let store = KvStore::new_in_process(2);
    let mut pos = vec![0usize; programs.len()];
    let mut last = String::new();
    for &t in order {
        last = apply(&store, paths, programs[t][pos[t]]);
        pos[t] += 1;
    }
    last
}

/// True iff some sequential interleaving of the programs (respecting each
/// program's internal order) reproduces `observed` exactly. Prefixes that
/// already diverge are pruned, so the search stays far below the full
/// permutation count.
pub fn serializable(programs: &[Vec<Op>], observed: &[Vec<String>], paths: &[StorePath]) -> bool {
    fn dfs(
        programs: &[Vec<Op>],
        observed: &[Vec<String>],
        paths: &[StorePath],
        order: &mut Vec<usize>,
        pos: &mut Vec<usize>,
        remaining: usize,
    ) -> bool {
        if remaining == 0 {
            return true;
        }
        for t in 0..programs.len() {
            if pos[t] == programs[t].len() {
                continue;
            }
            order.push(t);
            pos[t] += 1;
            let got = replay_last(programs, order, paths);
            let matched = got == observed[t][pos[t] - 1];
            if matched && dfs(programs, observed, paths, order, pos, remaining - 1) {
                return true;
            }
            order.pop();
            pos[t] -= 1;
        }
        false
    }

    let total: usize = programs.iter().map(Vec::len).sum();
    let mut order = Vec::with_capacity(total);
    let mut pos = vec![0usize; programs.len()];
    dfs(programs, observed, paths, &mut order, &mut pos, total)
}
