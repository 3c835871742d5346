//! End-to-end behavior of the caching filesystem layer: reads served
//! from resident entries, write-through with temp suppression, cache-only
//! namespace operations, and coherence after delete and rename.

use std::sync::Arc;

use memreduce::cachefs::{CacheStore, FsError, FsHandle, FsMode};
use memreduce::formats::{
    compute_splits, write_pair_file, DatasetView, InputFormatSpec, InputSplit, OutputKind,
    ResolvedInput, SplitDesc,
};
use memreduce::kvstore::{KvStore, StorePath};
use memreduce::types::{Key, Pair, PartitionId, PlaceId, Value};

struct Env {
    _dir: tempfile::TempDir,
    fs: FsHandle,
    cache: Arc<CacheStore>,
}

fn env(num_places: u32) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let cache = CacheStore::new();
    let kv = KvStore::new_in_process(num_places);
    let fs = FsHandle::new(
        PlaceId(0),
        FsMode::Dual,
        dir.path().to_path_buf(),
        cache.clone(),
        kv,
    );
    Env {
        _dir: dir,
        fs,
        cache,
    }
}

fn sp(s: &str) -> StorePath {
    StorePath::parse(s).unwrap()
}

fn sample_pairs(n: i64) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            Pair::new(
                Key::Int(i),
                Value::Bytes(format!("payload-{i}").into_bytes()),
            )
        })
        .collect()
}

fn stage_backing_file(env: &Env, path: &str, n: i64) {
    let os = env.fs.os_path(&sp(path));
    let content: Vec<(Key, Value)> = sample_pairs(n).iter().map(Pair::content).collect();
    write_pair_file(&os, content.iter().map(|(k, v)| (k, v))).unwrap();
}

fn whole_split(path: &str, env: &Env) -> (InputFormatSpec, InputSplit) {
    let spec = InputFormatSpec::PairFile {
        path: sp(path),
        target_splits: 1,
    };
    let splits = compute_splits(&spec, &env.fs).unwrap();
    assert_eq!(splits.len(), 1);
    (spec, splits.into_iter().next().unwrap())
}

fn contents(pairs: &[Pair]) -> Vec<(Key, Value)> {
    pairs.iter().map(Pair::content).collect()
}

#[test]
fn cold_read_misses_then_hits_without_reopening_the_reader() {
    let env = env(1);
    stage_backing_file(&env, "/in/data", 6);
    let (spec, split) = whole_split("/in/data", &env);

    let first = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(first.reader_invoked && first.cache_miss && !first.cache_hit);
    assert_eq!(first.pairs.len(), 6);

    let second = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(second.cache_hit && !second.reader_invoked && !second.cache_miss);
    assert_eq!(contents(&second.pairs), contents(&first.pairs));
}

#[test]
fn written_output_is_read_back_without_any_reader_invocation() {
    let env = env(1);
    let part = sp("/out/part-00000");
    env.fs
        .write_output(
            &part,
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(4),
            false,
            "temp",
        )
        .unwrap();
    assert!(env.fs.os_path(&part).is_file(), "backing part exists");

    let (spec, split) = whole_split("/out", &env);
    assert!(matches!(split.desc, SplitDesc::Named { .. }));
    let read = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(read.cache_hit && !read.reader_invoked);
    assert_eq!(read.pairs.len(), 4);
}

#[test]
fn unnameable_splits_bypass_the_cache_every_time() {
    let env = env(1);
    let spec = InputFormatSpec::Generator {
        gen: memreduce::formats::GenSpec::Pairs {
            num_pairs: 5,
            value_bytes: 8,
            seed: 9,
        },
        slices: 1,
    };
    let splits = compute_splits(&spec, &env.fs).unwrap();
    for _ in 0..3 {
        let out = env.fs.read_input(&spec, &splits[0], false).unwrap();
        assert!(out.reader_invoked);
        assert!(!out.cache_hit && !out.cache_miss, "bypass counts neither");
        assert_eq!(out.pairs.len(), 5);
    }
    assert_eq!(env.cache.entry_count(), 0);
}

#[test]
fn temp_outputs_write_no_backing_bytes_but_stay_readable() {
    let env = env(1);
    let part = sp("/out/temp-stage1/part-00000");
    let w = env
        .fs
        .write_output(
            &part,
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(3),
            false,
            "temp",
        )
        .unwrap();
    assert_eq!(w.backing_bytes_written, 0);
    assert!(!env.fs.os_path(&part).exists());

    // A later job still resolves and reads the data — from cache alone.
    let (spec, split) = whole_split("/out/temp-stage1", &env);
    let read = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(read.cache_hit && !read.reader_invoked);
    assert_eq!(read.pairs.len(), 3);

    // Status of cache-only data: record count known, no byte size.
    let status = env.fs.fs_get_status(&part).unwrap();
    assert_eq!(status.records, Some(3));
    assert_eq!(status.bytes, None);
}

#[test]
fn custom_temp_prefix_is_honored() {
    let env = env(1);
    let part = sp("/out/scratch-x/f");
    let w = env
        .fs
        .write_output(
            &part,
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(2),
            false,
            "scratch",
        )
        .unwrap();
    assert_eq!(w.backing_bytes_written, 0);
    let w2 = env
        .fs
        .write_output(
            &sp("/out/temp-y/f"),
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(2),
            false,
            "scratch",
        )
        .unwrap();
    assert!(w2.backing_bytes_written > 0, "default prefix not in effect");
}

#[test]
fn dual_delete_clears_cache_metadata_and_backing() {
    let env = env(1);
    stage_backing_file(&env, "/in/data", 5);
    let (spec, split) = whole_split("/in/data", &env);
    env.fs.read_input(&spec, &split, false).unwrap();
    assert_eq!(env.cache.entry_count(), 1);

    env.fs.fs_delete(&sp("/in/data")).unwrap();
    assert_eq!(env.cache.entry_count(), 0);
    assert!(!env.fs.os_path(&sp("/in/data")).exists());
    let err = env.fs.read_input(&spec, &split, false).unwrap_err();
    assert!(matches!(err, FsError::InputNotFound(_)), "{err:?}");
}

#[test]
fn raw_cache_delete_forces_a_reread_of_unchanged_backing_data() {
    let env = env(1);
    stage_backing_file(&env, "/in/data", 5);
    let (spec, split) = whole_split("/in/data", &env);
    let before = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(before.cache_miss);

    let raw = env.fs.raw_cache();
    raw.fs_delete(&sp("/in/data")).unwrap();
    assert_eq!(env.cache.entry_count(), 0);
    assert!(env.fs.os_path(&sp("/in/data")).is_file(), "backing intact");

    let after = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(after.cache_miss && after.reader_invoked, "cache was dropped");
    assert_eq!(contents(&after.pairs), contents(&before.pairs));
}

#[test]
fn raw_cache_delete_of_temp_data_removes_it_entirely() {
    let env = env(1);
    let part = sp("/it/temp-0/part-00000");
    env.fs
        .write_output(
            &part,
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(2),
            false,
            "temp",
        )
        .unwrap();
    env.fs.raw_cache().fs_delete(&sp("/it/temp-0")).unwrap();
    assert!(matches!(
        env.fs.resolve_input(&sp("/it/temp-0")),
        ResolvedInput::Missing
    ));
}

#[test]
fn dual_rename_moves_cache_entries_with_the_path() {
    let env = env(1);
    let part = sp("/ds/part-00000");
    env.fs
        .write_output(
            &part,
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &sample_pairs(4),
            false,
            "temp",
        )
        .unwrap();
    let before = env.fs.get_cache_record_reader(&sp("/ds")).unwrap();

    env.fs.fs_rename(&sp("/ds"), &sp("/kept")).unwrap();

    let (spec, split) = whole_split("/kept", &env);
    let read = env.fs.read_input(&spec, &split, false).unwrap();
    assert!(read.cache_hit, "renamed entry still serves reads");
    assert_eq!(contents(&read.pairs), contents(&before));
    assert!(env.fs.os_path(&sp("/kept/part-00000")).is_file());
    assert!(!env.fs.os_path(&sp("/ds")).exists());
    assert!(env.fs.get_cache_record_reader(&sp("/ds")).is_err());
}

#[test]
fn record_reader_yields_partitions_in_ascending_order() {
    let env = env(2);
    // Written out of partition order, from different places.
    let p1 = sample_pairs(3);
    let p0: Vec<Pair> = (100..102)
        .map(|i| Pair::new(Key::Int(i), Value::Count(i)))
        .collect();
    env.fs
        .at_place(PlaceId(1))
        .write_output(
            &sp("/out/part-00001"),
            OutputKind::PairFile,
            Some(PartitionId(1)),
            &p1,
            false,
            "temp",
        )
        .unwrap();
    env.fs
        .write_output(
            &sp("/out/part-00000"),
            OutputKind::PairFile,
            Some(PartitionId(0)),
            &p0,
            false,
            "temp",
        )
        .unwrap();

    let got = env.fs.get_cache_record_reader(&sp("/out")).unwrap();
    let want: Vec<(Key, Value)> = p0.iter().chain(p1.iter()).map(Pair::content).collect();
    assert_eq!(contents(&got), want);

    // Equivalence with reading the backing files through the input format.
    let spec = InputFormatSpec::PairFile {
        path: sp("/out"),
        target_splits: 8,
    };
    let mut via_format = Vec::new();
    for split in compute_splits(&spec, &env.fs).unwrap() {
        via_format.extend(env.fs.read_input(&spec, &split, false).unwrap().pairs);
    }
    assert_eq!(contents(&via_format), want);

    let err = env.fs.get_cache_record_reader(&sp("/cold")).unwrap_err();
    assert!(matches!(err, FsError::NotInCache(_)), "{err:?}");
}

#[test]
fn consumers_get_isolated_clones_unless_they_opt_out() {
    let env = env(1);
    stage_backing_file(&env, "/in/data", 1);
    let (spec, split) = whole_split("/in/data", &env);
    env.fs.read_input(&spec, &split, false).unwrap();

    // Default: mutating what a read returned leaves the cache pristine.
    let got = env.fs.read_input(&spec, &split, false).unwrap();
    got.pairs[0].value.set(Value::Count(-1));
    let again = env.fs.read_input(&spec, &split, false).unwrap();
    assert_eq!(
        again.pairs[0].value.get(),
        Value::Bytes(b"payload-0".to_vec())
    );

    // readOnlyInputs: the same resident objects are handed out.
    let ro1 = env.fs.read_input(&spec, &split, true).unwrap();
    let ro2 = env.fs.read_input(&spec, &split, true).unwrap();
    assert!(ro1.pairs[0].value.ptr_eq(&ro2.pairs[0].value));
}

#[test]
fn disabling_the_cache_leaves_backing_results_byte_identical() {
    let run = |enabled: bool| -> (Vec<u8>, Vec<(Key, Value)>) {
        let env = env(1);
        env.cache.set_enabled(enabled);
        stage_backing_file(&env, "/in/data", 8);
        let (spec, split) = whole_split("/in/data", &env);
        let read = env.fs.read_input(&spec, &split, false).unwrap();
        let doubled: Vec<Pair> = read
            .pairs
            .iter()
            .map(|p| {
                let (k, _) = p.content();
                Pair::new(k, Value::Count(2))
            })
            .collect();
        env.fs
            .write_output(
                &sp("/out/part-00000"),
                OutputKind::PairFile,
                Some(PartitionId(0)),
                &doubled,
                false,
                "temp",
            )
            .unwrap();
        let bytes = std::fs::read(env.fs.os_path(&sp("/out/part-00000"))).unwrap();
        let (spec2, split2) = whole_split("/out", &env);
        let back = env.fs.read_input(&spec2, &split2, false).unwrap();
        (bytes, contents(&back.pairs))
    };
    let (bytes_on, pairs_on) = run(true);
    let (bytes_off, pairs_off) = run(false);
    assert_eq!(bytes_on, bytes_off);
    assert_eq!(pairs_on, pairs_off);
}

#[test]
fn reads_of_missing_inputs_fail_cleanly() {
    let env = env(1);
    let spec = InputFormatSpec::PairFile {
        path: sp("/never"),
        target_splits: 1,
    };
    let err = compute_splits(&spec, &env.fs).unwrap_err();
    assert!(matches!(
        err,
        memreduce::formats::FormatError::InputNotFound(_)
    ));
    let err = env.fs.fs_delete(&sp("/never")).unwrap_err();
    assert!(matches!(err, FsError::NotFound(_)), "{err:?}");
}
