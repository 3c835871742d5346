//! End-to-end jobs on the resident engine: correctness of the shuffle,
//! the cloning contract, cache-driven chaining, event ordering, and the
//! submission lifecycle.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use memreduce::engine::{
    Engine, EngineConfig, EventKind, JobConfig, JobError, JobResult, MapFn, MapperSpec,
    PartitionerSpec, ReduceFn, ReducerSpec, SortSpec, TaskContext,
};
use memreduce::formats::{GenSpec, InputFormatSpec, JobOutput, OutputKind, OutputSpec};
use memreduce::kvstore::StorePath;
use memreduce::types::{Key, KeyHandle, Pair, Value, ValueHandle};

fn start(places: u32) -> (tempfile::TempDir, Engine) {
    let tmp = tempfile::tempdir().unwrap();
    let engine = Engine::start(EngineConfig::in_process(places, tmp.path().join("store"))).unwrap();
    (tmp, engine)
}

fn path(s: &str) -> StorePath {
    StorePath::parse(s).unwrap()
}

fn gen_input(num_pairs: u64, slices: u32) -> InputFormatSpec {
    InputFormatSpec::Generator {
        gen: GenSpec::Pairs {
            num_pairs,
            value_bytes: 16,
            seed: 42,
        },
        slices,
    }
}

/// All records of a dataset the engine wrote, via the cache.
fn output_of(engine: &Engine, dir: &str) -> Vec<(Key, Value)> {
    engine
        .fs_home()
        .get_cache_record_reader(&path(dir))
        .unwrap()
        .iter()
        .map(Pair::content)
        .collect()
}

fn as_multiset(records: Vec<(Key, Value)>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(format!("{r:?}")).or_insert(0) += 1;
    }
    m
}

fn expect_success(result: &JobResult) {
    assert!(
        result.is_success(),
        "job failed: {:?}",
        result.failure
    );
}

struct FnMapper<F>(F);

impl<F> MapFn for FnMapper<F>
where
    F: Fn(&mut TaskContext<'_>, &[Pair]) -> Result<(), String> + Send + Sync,
{
    fn run(&self, ctx: &mut TaskContext<'_>, input: &[Pair]) -> Result<(), String> {
        (self.0)(ctx, input)
    }
}

struct FnReducer<F>(F);

impl<F> ReduceFn for FnReducer<F>
where
    F: Fn(&mut TaskContext<'_>, &KeyHandle, &[ValueHandle]) -> Result<(), String> + Send + Sync,
{
    fn run(
        &self,
        ctx: &mut TaskContext<'_>,
        key: &KeyHandle,
        values: &[ValueHandle],
    ) -> Result<(), String> {
        (self.0)(ctx, key, values)
    }
}

// ---------------------------------------------------------------------------
// Shuffle correctness
// ---------------------------------------------------------------------------

#[test]
fn identity_shuffle_preserves_the_input_multiset_and_respects_partitions() {
    let (_tmp, engine) = start(2);
    let job = JobConfig::new("identity", OutputSpec::pair_file(path("/out")))
        .input(gen_input(200, 4))
        .reduce(ReducerSpec::Identity, 4)
        .partition(PartitionerSpec::IntKeyMod);
    let result = engine.submit_job(&job).unwrap();
    expect_success(&result);
    assert_eq!(result.metrics.output_records, 200);
    assert_eq!(
        result.metrics.pairs_shuffled_local + result.metrics.pairs_shuffled_remote,
        200
    );

    // Every record reappears exactly once.
    let everything = output_of(&engine, "/out");
    assert_eq!(everything.len(), 200);
    let keys: std::collections::BTreeSet<i64> = everything
        .iter()
        .map(|(k, _)| k.as_int().unwrap())
        .collect();
    assert_eq!(keys.len(), 200);
    assert_eq!(*keys.iter().next().unwrap(), 0);
    assert_eq!(*keys.iter().last().unwrap(), 199);

    // Each part holds only its partition's keys, in sorted order.
    for r in 0..4i64 {
        let part = output_of(&engine, &format!("/out/part-{:05}", r));
        assert!(!part.is_empty());
        let ks: Vec<i64> = part.iter().map(|(k, _)| k.as_int().unwrap()).collect();
        assert!(ks.iter().all(|k| k % 4 == r), "part {r} holds {ks:?}");
        assert!(ks.windows(2).all(|w| w[0] <= w[1]), "part {r} unsorted");
    }
}

#[test]
fn output_multisets_agree_across_place_counts() {
    let mut reference: Option<BTreeMap<String, usize>> = None;
    for places in [1, 2, 4] {
        let (_tmp, engine) = start(places);
        let job = JobConfig::new("spread", OutputSpec::pair_file(path("/out")))
            .input(gen_input(300, 5))
            .reduce(ReducerSpec::Identity, 8)
            .partition(PartitionerSpec::HashKey);
        expect_success(&engine.submit_job(&job).unwrap());
        let got = as_multiset(output_of(&engine, "/out"));
        match &reference {
            None => reference = Some(got),
            Some(want) => assert_eq!(&got, want, "{places} places diverged"),
        }
    }
}

#[test]
fn map_only_jobs_write_parts_without_any_shuffle() {
    let (_tmp, engine) = start(2);
    let job = JobConfig::new("maponly", OutputSpec::pair_file(path("/out")))
        .input(gen_input(50, 3));
    let result = engine.submit_job(&job).unwrap();
    expect_success(&result);
    assert_eq!(result.metrics.pairs_shuffled_local, 0);
    assert_eq!(result.metrics.pairs_shuffled_remote, 0);
    assert_eq!(result.metrics.bytes_serialized_local, 0);
    assert_eq!(result.metrics.bytes_serialized_remote, 0);
    assert_eq!(result.metrics.output_records, 50);
    assert!(result.events.iter().all(|e| matches!(
        e.kind,
        EventKind::MapPhaseStart | EventKind::MapTaskEnd { .. }
    )));
    // One part per map task.
    assert_eq!(as_multiset(output_of(&engine, "/out")).values().sum::<usize>(), 50);
    for t in 0..3 {
        assert!(engine
            .fs_home()
            .fs_get_status(&path(&format!("/out/part-{t:05}")))
            .is_ok());
    }
}

#[test]
fn custom_sort_order_controls_part_record_order() {
    let (_tmp, engine) = start(1);
    let job = JobConfig::new("rev", OutputSpec::pair_file(path("/out")))
        .input(gen_input(40, 2))
        .reduce(ReducerSpec::Identity, 1)
        .sort_by(SortSpec::Custom(Arc::new(|a: &Key, b: &Key| b.cmp(a))));
    expect_success(&engine.submit_job(&job).unwrap());
    let ks: Vec<i64> = output_of(&engine, "/out/part-00000")
        .iter()
        .map(|(k, _)| k.as_int().unwrap())
        .collect();
    let mut want: Vec<i64> = (0..40).collect();
    want.reverse();
    assert_eq!(ks, want);
}

// ---------------------------------------------------------------------------
// Word count, combiners, and the cloning contract
// ---------------------------------------------------------------------------

fn stage_text(engine: &Engine, at: &str, lines: &[&str]) {
    let os = engine.fs_home().os_path(&path(at));
    std::fs::write(&os, lines.join("\n")).unwrap();
}

fn word_count_job(mapper: MapperSpec, out: &str, combine: bool) -> JobConfig {
    let job = JobConfig::new("wc", OutputSpec::pair_file(path(out)))
        .input(InputFormatSpec::TextLine {
            path: path("/books"),
            target_splits: 3,
        })
        .map(mapper)
        .reduce(ReducerSpec::SumCounts, 2)
        .partition(PartitionerSpec::HashKey);
    if combine {
        job.combine(ReducerSpec::SumCounts)
    } else {
        job
    }
}

const LINES: &[&str] = &[
    "a rose is a rose is a rose",
    "round and round and round",
    "what is a rose anyway",
];

fn counts(records: Vec<(Key, Value)>) -> BTreeMap<String, i64> {
    records
        .into_iter()
        .map(|(k, v)| {
            let Key::Text(w) = k else { panic!("{k:?}") };
            (String::from_utf8(w).unwrap(), v.as_count().unwrap())
        })
        .collect()
}

#[test]
fn word_count_with_and_without_combiner_agree_and_the_combiner_shrinks_the_shuffle() {
    let (_tmp, engine) = start(2);
    stage_text(&engine, "/books", LINES);
    let plain = engine
        .submit_job(&word_count_job(MapperSpec::WordCountFresh, "/plain", false))
        .unwrap();
    expect_success(&plain);
    let combined = engine
        .submit_job(&word_count_job(MapperSpec::WordCountFresh, "/combined", true))
        .unwrap();
    expect_success(&combined);

    let want: BTreeMap<String, i64> = [
        ("a", 4), ("rose", 4), ("is", 3), ("round", 3), ("and", 2),
        ("what", 1), ("anyway", 1),
    ]
    .into_iter()
    .map(|(w, c)| (w.to_string(), c))
    .collect();
    assert_eq!(counts(output_of(&engine, "/plain")), want);
    assert_eq!(counts(output_of(&engine, "/combined")), want);

    let shuffled = |r: &JobResult| r.metrics.pairs_shuffled_local + r.metrics.pairs_shuffled_remote;
    assert!(
        shuffled(&combined) < shuffled(&plain),
        "combining {} vs plain {}",
        shuffled(&combined),
        shuffled(&plain)
    );
}

#[test]
fn defensive_copies_make_a_box_reusing_mapper_safe() {
    let (_tmp, engine) = start(2);
    stage_text(&engine, "/books", LINES);
    let fresh = engine
        .submit_job(&word_count_job(MapperSpec::WordCountFresh, "/fresh", true))
        .unwrap();
    expect_success(&fresh);
    // The reusing mapper mutates its key box after every emission; with
    // copying in force (no immutable flag) the result is still right.
    let reuse = engine
        .submit_job(&word_count_job(MapperSpec::WordCountReuse, "/reuse", true))
        .unwrap();
    expect_success(&reuse);
    assert_eq!(
        counts(output_of(&engine, "/fresh")),
        counts(output_of(&engine, "/reuse")),
    );
    assert!(reuse.metrics.bytes_serialized_local + reuse.metrics.bytes_serialized_remote > 0);
}

#[test]
fn immutable_flag_zeroes_local_serialization_without_changing_output() {
    let (_tmp, engine) = start(1);
    stage_text(&engine, "/books", LINES);
    let copied = engine
        .submit_job(&word_count_job(MapperSpec::WordCountFresh, "/copied", true))
        .unwrap();
    expect_success(&copied);
    assert!(copied.metrics.bytes_serialized_local > 0);
    assert_eq!(copied.metrics.bytes_serialized_remote, 0, "one place");

    let flagged = engine
        .submit_job(
            &word_count_job(MapperSpec::WordCountFresh, "/flagged", true)
                .immutable_map_output(true)
                .immutable_reduce_output(true),
        )
        .unwrap();
    expect_success(&flagged);
    assert_eq!(flagged.metrics.bytes_serialized_local, 0);
    assert_eq!(flagged.metrics.bytes_serialized_remote, 0);

    // Identical bytes on disk.
    let bytes_of = |dir: &str, part: &str| {
        std::fs::read(engine.fs_home().os_path(&path(&format!("{dir}/{part}")))).unwrap()
    };
    assert_eq!(bytes_of("/copied", "part-00000"), bytes_of("/flagged", "part-00000"));
    assert_eq!(bytes_of("/copied", "part-00001"), bytes_of("/flagged", "part-00001"));
}

#[test]
fn flagged_emissions_reach_the_reducer_as_the_very_same_objects() {
    let (_tmp, engine) = start(1);
    let emitted = Arc::new(Mutex::new(Vec::<ValueHandle>::new()));
    let seen = Arc::new(Mutex::new(Vec::<ValueHandle>::new()));
    let emitted_in = Arc::clone(&emitted);
    let mapper = MapperSpec::Custom(Arc::new(FnMapper(
        move |ctx: &mut TaskContext<'_>, input: &[Pair]| {
            for pair in input {
                let value = ValueHandle::new(pair.value.get());
                emitted_in.lock().unwrap().push(value.clone());
                ctx.emit_shared(&pair.key, &value)?;
            }
            Ok(())
        },
    )));
    let seen_in = Arc::clone(&seen);
    let reducer = ReducerSpec::Custom(Arc::new(FnReducer(
        move |ctx: &mut TaskContext<'_>, key: &KeyHandle, values: &[ValueHandle]| {
            for v in values {
                seen_in.lock().unwrap().push(v.clone());
                ctx.emit_shared(key, v)?;
            }
            Ok(())
        },
    )));
    let job = |flag: bool, out: &str| {
        JobConfig::new("idseek", OutputSpec::pair_file(path(out)))
            .input(gen_input(20, 1))
            .map(mapper.clone())
            .reduce(reducer.clone(), 1)
            .immutable_map_output(flag)
    };
    let overlap = |emitted: &[ValueHandle], seen: &[ValueHandle]| {
        seen.iter()
            .filter(|s| emitted.iter().any(|e| e.ptr_eq(s)))
            .count()
    };

    expect_success(&engine.submit_job(&job(true, "/shared")).unwrap());
    assert_eq!(
        overlap(&emitted.lock().unwrap(), &seen.lock().unwrap()),
        20,
        "flagged: every value arrives by identity"
    );

    emitted.lock().unwrap().clear();
    seen.lock().unwrap().clear();
    expect_success(&engine.submit_job(&job(false, "/copiedid")).unwrap());
    assert_eq!(
        overlap(&emitted.lock().unwrap(), &seen.lock().unwrap()),
        0,
        "unflagged: the reducer sees copies"
    );
}

// ---------------------------------------------------------------------------
// Caching and chaining
// ---------------------------------------------------------------------------

#[test]
fn a_chained_job_reads_from_cache_and_keeps_partitions_at_home() {
    let (_tmp, engine) = start(2);
    let produce = JobConfig::new("produce", OutputSpec::pair_file(path("/stage1")))
        .input(gen_input(120, 4))
        .reduce(ReducerSpec::Identity, 4)
        .partition(PartitionerSpec::IntKeyMod)
        .immutable_map_output(true)
        .immutable_reduce_output(true);
    expect_success(&engine.submit_job(&produce).unwrap());

    let consume = JobConfig::new("consume", OutputSpec::pair_file(path("/stage2")))
        .input(InputFormatSpec::PairFile {
            path: path("/stage1"),
            target_splits: 4,
        })
        .reduce(ReducerSpec::Identity, 4)
        .partition(PartitionerSpec::IntKeyMod)
        .immutable_map_output(true)
        .immutable_reduce_output(true)
        .property("readOnlyInputs", "true");
    let result = engine.submit_job(&consume).unwrap();
    expect_success(&result);

    // Inputs came from memory at the place that wrote them: no readers,
    // no misses, and — because partition stability sent each map task to
    // its partition's home — nothing crossed places.
    assert_eq!(result.metrics.reader_invocations, 0);
    assert_eq!(result.metrics.cache_misses, 0);
    assert_eq!(result.metrics.cache_hits, 4);
    assert_eq!(result.metrics.pairs_shuffled_remote, 0);
    assert_eq!(result.metrics.bytes_serialized_remote, 0);
    assert_eq!(
        as_multiset(output_of(&engine, "/stage2")),
        as_multiset(output_of(&engine, "/stage1"))
    );
}

#[test]
fn temp_outputs_stay_in_memory_yet_feed_the_next_job() {
    let (_tmp, engine) = start(2);
    let produce = JobConfig::new("produce", OutputSpec::pair_file(path("/work/temp-stage")))
        .input(gen_input(60, 2))
        .reduce(ReducerSpec::Identity, 2)
        .partition(PartitionerSpec::IntKeyMod)
        .immutable_map_output(true)
        .immutable_reduce_output(true);
    let r1 = engine.submit_job(&produce).unwrap();
    expect_success(&r1);
    assert_eq!(r1.metrics.backing_bytes_written, 0, "temp parts skip disk");
    assert!(!engine
        .fs_home()
        .os_path(&path("/work/temp-stage"))
        .exists());

    let consume = JobConfig::new("consume", OutputSpec::pair_file(path("/final")))
        .input(InputFormatSpec::PairFile {
            path: path("/work/temp-stage"),
            target_splits: 2,
        })
        .reduce(ReducerSpec::Identity, 2)
        .partition(PartitionerSpec::IntKeyMod);
    let r2 = engine.submit_job(&consume).unwrap();
    expect_success(&r2);
    assert_eq!(r2.metrics.reader_invocations, 0);
    assert_eq!(r2.metrics.output_records, 60);
}

#[test]
fn named_outputs_collect_side_emissions_per_label() {
    let (_tmp, engine) = start(2);
    let mapper = MapperSpec::Custom(Arc::new(FnMapper(
        |ctx: &mut TaskContext<'_>, input: &[Pair]| {
            for pair in input {
                let k = pair.key.read().as_int().unwrap();
                if k % 10 == 0 {
                    ctx.emit_named("round", Key::Int(k), Value::Count(1))?;
                }
                ctx.emit_shared(&pair.key, &pair.value)?;
            }
            Ok(())
        },
    )));
    let mut output = OutputSpec::pair_file(path("/main"));
    output.named.push((
        "round".to_string(),
        JobOutput {
            kind: OutputKind::PairFile,
            path: path("/rounds"),
        },
    ));
    let job = JobConfig::new("sides", output)
        .input(gen_input(50, 3))
        .map(mapper)
        .reduce(ReducerSpec::Identity, 2)
        .partition(PartitionerSpec::IntKeyMod);
    let result = engine.submit_job(&job).unwrap();
    expect_success(&result);
    let rounds: Vec<i64> = output_of(&engine, "/rounds")
        .iter()
        .map(|(k, _)| k.as_int().unwrap())
        .collect();
    let mut sorted = rounds.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 10, 20, 30, 40]);
    assert_eq!(output_of(&engine, "/main").len(), 50);
    assert_eq!(result.metrics.output_records, 55);

    let undeclared = JobConfig::new("bad", OutputSpec::pair_file(path("/nope")))
        .input(gen_input(5, 1))
        .map(MapperSpec::Custom(Arc::new(FnMapper(
            |ctx: &mut TaskContext<'_>, _: &[Pair]| {
                ctx.emit_named("ghost", Key::Int(0), Value::Count(0))
            },
        ))));
    let failed = engine.submit_job(&undeclared).unwrap();
    assert!(!failed.is_success());
    assert!(matches!(
        failed.failure,
        Some(JobError::UserFunction { .. })
    ));
}

#[test]
fn user_counters_sum_across_tasks_and_places() {
    let (_tmp, engine) = start(2);
    let mapper = MapperSpec::Custom(Arc::new(FnMapper(
        |ctx: &mut TaskContext<'_>, input: &[Pair]| {
            ctx.add_counter("records", input.len() as u64);
            ctx.add_counter("tasks", 1);
            for pair in input {
                ctx.emit_shared(&pair.key, &pair.value)?;
            }
            Ok(())
        },
    )));
    let job = JobConfig::new("count", OutputSpec::pair_file(path("/out")))
        .input(gen_input(90, 5))
        .map(mapper)
        .reduce(ReducerSpec::Identity, 2)
        .partition(PartitionerSpec::IntKeyMod);
    let result = engine.submit_job(&job).unwrap();
    expect_success(&result);
    assert_eq!(result.metrics.user_counters["records"], 90);
    assert_eq!(result.metrics.user_counters["tasks"], 5);
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[test]
fn every_delivery_completes_before_the_barrier_and_any_reduce_work() {
    let (_tmp, engine) = start(4);
    let job = JobConfig::new("order", OutputSpec::pair_file(path("/out")))
        .input(gen_input(400, 8))
        .reduce(ReducerSpec::Identity, 8)
        .partition(PartitionerSpec::IntKeyMod);
    let result = engine.submit_job(&job).unwrap();
    expect_success(&result);
    let events = &result.events;
    assert_eq!(events[0].kind, EventKind::MapPhaseStart);
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq as usize, i, "seq is dense");
    }
    let barrier = events
        .iter()
        .find(|e| e.kind == EventKind::BarrierReleased)
        .expect("barrier event")
        .seq;
    let deliveries: Vec<_> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::DeliveryComplete { .. }))
        .collect();
    assert_eq!(deliveries.len(), 4, "one delivery mark per place");
    assert!(deliveries.iter().all(|e| e.seq < barrier));
    assert!(events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::MapTaskEnd { .. }))
        .all(|e| e.seq < barrier));
    let reduce_starts: Vec<_> = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::ReduceTaskStart { .. }))
        .collect();
    assert_eq!(reduce_starts.len(), 8);
    assert!(reduce_starts.iter().all(|e| e.seq > barrier));
    // Each partition commits exactly once, after its task starts.
    for r in 0..8u32 {
        let start = events
            .iter()
            .find(|e| {
                matches!(e.kind, EventKind::ReduceTaskStart { partition, .. }
                    if partition.0 == r)
            })
            .unwrap()
            .seq;
        let commit = events
            .iter()
            .find(|e| {
                matches!(e.kind, EventKind::OutputCommitted { partition, .. }
                    if partition.0 == r)
            })
            .unwrap()
            .seq;
        assert!(start < commit);
    }
    // Partition homes are stable: partition r starts at place r mod 4.
    for e in &result.events {
        if let EventKind::ReduceTaskStart { place, partition } = e.kind {
            assert_eq!(place.0, partition.0 % 4);
        }
    }
}

// ---------------------------------------------------------------------------
// Failures and the submission lifecycle
// ---------------------------------------------------------------------------

#[test]
fn user_failures_name_the_task_and_leave_the_engine_usable() {
    let (_tmp, engine) = start(2);
    let bad_map = JobConfig::new("boom", OutputSpec::pair_file(path("/a")))
        .input(gen_input(10, 2))
        .map(MapperSpec::Custom(Arc::new(FnMapper(
            |_: &mut TaskContext<'_>, _: &[Pair]| Err("bad record".to_string()),
        ))));
    let result = engine.submit_job(&bad_map).unwrap();
    assert!(!result.is_success());
    match result.failure {
        Some(JobError::UserFunction { ref task, ref message }) => {
            assert!(task.starts_with("map task"), "{task}");
            assert_eq!(message, "bad record");
        }
        other => panic!("unexpected failure {other:?}"),
    }

    let prev = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let bad_reduce = JobConfig::new("panic", OutputSpec::pair_file(path("/b")))
        .input(gen_input(10, 2))
        .reduce(
            ReducerSpec::Custom(Arc::new(FnReducer(
                |_: &mut TaskContext<'_>, _: &KeyHandle, _: &[ValueHandle]| {
                    panic!("kaput")
                },
            ))),
            2,
        )
        .partition(PartitionerSpec::IntKeyMod);
    let result = engine.submit_job(&bad_reduce).unwrap();
    std::panic::set_hook(prev);
    assert!(!result.is_success());
    match result.failure {
        Some(JobError::UserFunction { ref task, ref message }) => {
            assert!(task.starts_with("reduce task"), "{task}");
            assert!(message.contains("kaput"), "{message}");
        }
        other => panic!("unexpected failure {other:?}"),
    }

    // The engine shrugs it off.
    let fine = JobConfig::new("fine", OutputSpec::pair_file(path("/c")))
        .input(gen_input(10, 2));
    expect_success(&engine.submit_job(&fine).unwrap());
}

#[test]
fn missing_inputs_and_occupied_outputs_fail_the_job_not_the_submission() {
    let (_tmp, engine) = start(1);
    let missing = JobConfig::new("missing", OutputSpec::pair_file(path("/out")))
        .input(InputFormatSpec::PairFile {
            path: path("/nowhere"),
            target_splits: 2,
        });
    let result = engine.submit_job(&missing).unwrap();
    assert_eq!(
        result.failure,
        Some(JobError::InputNotFound("/nowhere".to_string()))
    );

    let first = JobConfig::new("first", OutputSpec::pair_file(path("/kept")))
        .input(gen_input(10, 1));
    expect_success(&engine.submit_job(&first).unwrap());
    let again = engine.submit_job(&first).unwrap();
    assert_eq!(
        again.failure,
        Some(JobError::OutputAlreadyExists("/kept".to_string()))
    );
    let forced = engine.submit_job(&first.clone().overwrite()).unwrap();
    expect_success(&forced);
    assert_eq!(forced.metrics.output_records, 10);
}

#[test]
fn one_job_at_a_time_and_nothing_after_shutdown() {
    let (_tmp, engine) = start(1);
    let (started_tx, started_rx) = mpsc::channel::<()>();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let release_rx = Mutex::new(release_rx);
    let slow = JobConfig::new("slow", OutputSpec::pair_file(path("/slow")))
        .input(gen_input(4, 1))
        .map(MapperSpec::Custom(Arc::new(FnMapper(
            move |_: &mut TaskContext<'_>, _: &[Pair]| {
                started_tx.send(()).unwrap();
                release_rx.lock().unwrap().recv().unwrap();
                Ok(())
            },
        ))));
    std::thread::scope(|scope| {
        let engine = &engine;
        let handle = scope.spawn(move || engine.submit_job(&slow).unwrap());
        started_rx.recv().unwrap();
        let second = JobConfig::new("second", OutputSpec::pair_file(path("/second")))
            .input(gen_input(4, 1));
        assert_eq!(
            engine.submit_job(&second).unwrap_err(),
            JobError::JobInFlight
        );
        release_tx.send(()).unwrap();
        expect_success(&handle.join().unwrap());
        // The gate reopens once the first job is done.
        expect_success(&engine.submit_job(&second).unwrap());
    });

    engine.shutdown();
    engine.shutdown(); // idempotent
    let after = JobConfig::new("late", OutputSpec::pair_file(path("/late")))
        .input(gen_input(4, 1));
    assert_eq!(engine.submit_job(&after).unwrap_err(), JobError::EngineDown);
}

#[test]
fn job_sequences_stop_at_the_first_failure() {
    let (_tmp, engine) = start(1);
    let ok = JobConfig::new("ok", OutputSpec::pair_file(path("/one")))
        .input(gen_input(5, 1));
    let bad = JobConfig::new("bad", OutputSpec::pair_file(path("/two")))
        .input(InputFormatSpec::PairFile {
            path: path("/absent"),
            target_splits: 1,
        });
    let never = JobConfig::new("never", OutputSpec::pair_file(path("/three")))
        .input(gen_input(5, 1));
    let results = engine
        .run_job_sequence(&[ok, bad, never])
        .unwrap();
    assert_eq!(results.len(), 2);
    assert!(results[0].is_success());
    assert!(!results[1].is_success());
    assert!(engine.fs_home().fs_get_status(&path("/three")).is_err());
}

// ---------------------------------------------------------------------------
// Broadcast de-duplication
// ---------------------------------------------------------------------------

#[test]
fn broadcasting_a_shared_vector_serializes_it_once_per_destination() {
    // One vector block fanned out to 8 block rows over 2 places: four
    // partitions per place, but each place needs only one copy.
    let run = |dedup| {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = EngineConfig::in_process(2, tmp.path().join("store"));
        cfg.dedup = dedup;
        let engine = Engine::start(cfg).unwrap();
        let stage = JobConfig::new("stage", OutputSpec::pair_file(path("/v")))
            .input(gen_input(1, 1))
            .map(MapperSpec::Custom(Arc::new(FnMapper(
                |ctx: &mut TaskContext<'_>, _: &[Pair]| {
                    ctx.emit(
                        Key::BlockIdx { row: 0, col: 0 },
                        Value::DenseVec(vec![1.0; 64]),
                    )
                },
            ))))
            .reduce(ReducerSpec::Identity, 1)
            .partition(PartitionerSpec::BlockRowMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true);
        expect_success(&engine.submit_job(&stage).unwrap());

        let broadcast = JobConfig::new("bcast", OutputSpec::pair_file(path("/fanout")))
            .input_mapped(
                InputFormatSpec::PairFile {
                    path: path("/v"),
                    target_splits: 1,
                },
                MapperSpec::MatvecBroadcastV { block_rows: 8 },
            )
            .reduce(ReducerSpec::Identity, 8)
            .partition(PartitionerSpec::BlockRowMod)
            .immutable_map_output(true)
            .immutable_reduce_output(true)
            .property("readOnlyInputs", "true");
        let result = engine.submit_job(&broadcast).unwrap();
        expect_success(&result);
        assert_eq!(result.metrics.pairs_shuffled_remote, 4);
        assert_eq!(output_of(&engine, "/fanout").len(), 8);
        result.metrics
    };

    let full = run(memreduce::codec::DedupPolicy::Full);
    // The vector part lives at place 0, so place 1 is the remote side.
    assert_eq!(full.remote_dense_value_literals_by_dest[1], 1);
    let off = run(memreduce::codec::DedupPolicy::Off);
    assert_eq!(off.remote_dense_value_literals_by_dest[1], 4);
    assert!(
        full.remote_bytes_by_dest[1] < off.remote_bytes_by_dest[1] / 2,
        "sharing saves the wire: {} vs {}",
        full.remote_bytes_by_dest[1],
        off.remote_bytes_by_dest[1]
    );
}
