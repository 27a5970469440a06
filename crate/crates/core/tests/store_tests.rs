//! Store-level contracts: durability, emission ordering, referential
//! integrity, content addressing, and value encoding round-trips.

use flor_core::error::FlorError;
use flor_core::store::value::{RawValue, INLINE_TEXT_LIMIT, TYPE_BLOB, TYPE_TEXT};
use flor_core::store::{blob_hash, LogRecord, LoopIteration, ScanFilter, Store};
use proptest::prelude::*;
use tempfile::TempDir;

fn rec(tstamp: i64, filename: &str, ctx: u64, name: &str, value: &str) -> LogRecord {
    LogRecord {
        projid: "demo".into(),
        tstamp,
        filename: filename.into(),
        ctx_id: ctx,
        value_name: name.into(),
        value: value.into(),
        value_type: TYPE_TEXT,
        seq: 0,
    }
}

fn iter(tstamp: i64, filename: &str, ctx: u64, parent: u64, name: &str, it: u64) -> LoopIteration {
    LoopIteration {
        projid: "demo".into(),
        tstamp,
        filename: filename.into(),
        ctx_id: ctx,
        parent_ctx_id: parent,
        loop_name: name.into(),
        loop_iteration: it,
        iteration_value: it.to_string(),
    }
}

#[test]
fn records_survive_reopen_identically() {
    let dir = TempDir::new().unwrap();
    {
        let mut store = Store::open(dir.path(), "demo").unwrap();
        store.begin_run(1).unwrap();
        store.put_loop(iter(1, "train.py", 1, 0, "epoch", 0)).unwrap();
        store.put_record(rec(1, "train.py", 1, "acc", "0.5")).unwrap();
        store.put_record(rec(1, "train.py", 0, "note", "x")).unwrap();
        store.flush_run("train").unwrap();
    }
    let store = Store::open(dir.path(), "demo").unwrap();
    let all = store.scan(&ScanFilter::default());
    assert_eq!(all.len(), 2);
    assert_eq!(all[0].value_name, "acc");
    assert_eq!(all[0].seq, 1);
    assert_eq!(all[1].value_name, "note");
    assert_eq!(all[1].seq, 2);
    assert_eq!(store.loops().len(), 1);
    store.audit().unwrap();
}

#[test]
fn index_cache_matches_rebuild() {
    let dir = TempDir::new().unwrap();
    {
        let mut store = Store::open(dir.path(), "demo").unwrap();
        store.begin_run(1).unwrap();
        store.put_record(rec(1, "a.py", 0, "x", "1")).unwrap();
        store.flush_run("run").unwrap();
    }
    // warm open (index.db valid) and cold open (index.db removed) agree
    let warm = Store::open(dir.path(), "demo").unwrap().scan(&ScanFilter::default());
    std::fs::remove_file(dir.path().join(".flor/index.db")).unwrap();
    let cold = Store::open(dir.path(), "demo").unwrap().scan(&ScanFilter::default());
    assert_eq!(warm, cold);
}

#[test]
fn emission_seq_is_per_file() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    assert_eq!(store.put_record(rec(1, "a.py", 0, "x", "1")).unwrap(), 1);
    assert_eq!(store.put_record(rec(1, "b.py", 0, "x", "1")).unwrap(), 1);
    assert_eq!(store.put_record(rec(1, "a.py", 0, "y", "2")).unwrap(), 2);
    assert_eq!(store.put_record(rec(1, "b.py", 0, "y", "2")).unwrap(), 2);
}

#[test]
fn same_key_twice_keeps_both_with_last_wins_readback() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    assert_eq!(store.put_record(rec(1, "a.py", 0, "x", "first")).unwrap(), 1);
    assert_eq!(store.put_record(rec(1, "a.py", 0, "x", "second")).unwrap(), 2);
    store.flush_run("run").unwrap();
    assert_eq!(store.scan(&ScanFilter::by_name("x")).len(), 2);
    assert_eq!(store.latest_value(1, "a.py", 0, "x").unwrap().value, "second");
}

#[test]
fn dangling_ctx_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    let err = store.put_record(rec(1, "a.py", 7, "x", "1")).unwrap_err();
    assert!(matches!(err, FlorError::Integrity(_)));
}

#[test]
fn duplicate_ctx_rejected_identical_reinsert_allowed() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    store.put_loop(iter(1, "a.py", 1, 0, "epoch", 0)).unwrap();
    // same ctx, different content
    let err = store.put_loop(iter(1, "a.py", 1, 0, "epoch", 1)).unwrap_err();
    assert!(matches!(err, FlorError::Integrity(_)));
    store.flush_run("run").unwrap();

    // replay alignment: identical row against committed state is a no-op
    store.begin_backfill(1).unwrap();
    store.put_loop(iter(1, "a.py", 1, 0, "epoch", 0)).unwrap();
    let err = store.put_loop(iter(1, "a.py", 1, 0, "other", 0)).unwrap_err();
    assert!(matches!(err, FlorError::Integrity(_)));
    store.abort_run();
    assert_eq!(store.loops().len(), 1);
}

#[test]
fn loop_iterations_must_be_consecutive_from_zero() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    store.put_loop(iter(1, "a.py", 1, 0, "epoch", 0)).unwrap();
    store.put_loop(iter(1, "a.py", 2, 0, "epoch", 1)).unwrap();
    store.put_record(rec(1, "a.py", 2, "x", "1")).unwrap();
    store.flush_run("run").unwrap();
    store.audit().unwrap();
}

#[test]
fn blobs_are_content_addressed_and_deduped() {
    let dir = TempDir::new().unwrap();
    let store = Store::open(dir.path(), "demo").unwrap();

    // fixed digest of empty input
    let empty = store.put_blob(b"").unwrap();
    assert_eq!(
        empty,
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );

    let h1 = store.put_blob(b"checkpoint bytes").unwrap();
    let h2 = store.put_blob(b"checkpoint bytes").unwrap();
    assert_eq!(h1, h2);
    assert_eq!(store.blob_count(), 2); // empty + one payload
    assert_eq!(store.get_blob(&h1).unwrap(), b"checkpoint bytes");

    let err = store.get_blob("deadbeef").unwrap_err();
    assert!(matches!(err, FlorError::NotFound(_)));
}

#[test]
fn oversized_text_round_trips_through_blob_store() {
    let dir = TempDir::new().unwrap();
    let store = Store::open(dir.path(), "demo").unwrap();
    let big = "y".repeat(5000);
    let (vt, payload) = store.encode_value("page_text", RawValue::Text(big.clone())).unwrap();
    assert_eq!(vt, TYPE_BLOB);
    assert_eq!(payload, blob_hash(big.as_bytes()));
    assert_eq!(store.get_blob(&payload).unwrap(), big.as_bytes());
}

#[test]
fn blob_records_require_a_stored_blob() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    let mut r = rec(1, "a.py", 0, "model", "0000000000000000");
    r.value_type = TYPE_BLOB;
    assert!(matches!(
        store.put_record(r).unwrap_err(),
        FlorError::Integrity(_)
    ));
}

#[test]
fn audit_detects_removed_blob() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    let hash = store.put_blob(b"weights").unwrap();
    let mut r = rec(1, "a.py", 0, "model", &hash);
    r.value_type = TYPE_BLOB;
    store.put_record(r).unwrap();
    store.flush_run("run").unwrap();
    store.audit().unwrap();

    let shard = &hash[..2];
    std::fs::remove_file(dir.path().join(format!(".flor/objects/{shard}/{hash}"))).unwrap();
    assert!(store.audit().is_err());
}

#[test]
fn scan_filters_and_ordering() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    store.put_record(rec(1, "b.py", 0, "loss", "2")).unwrap();
    store.put_record(rec(1, "a.py", 0, "loss", "1")).unwrap();
    store.flush_run("run").unwrap();
    store.begin_run(2).unwrap();
    store.put_record(rec(2, "a.py", 0, "loss", "3")).unwrap();
    store.flush_run("run").unwrap();

    let all = store.scan(&ScanFilter::by_name("loss"));
    assert_eq!(all.len(), 3);
    // ordered by (tstamp, filename, seq)
    assert_eq!(
        all.iter().map(|r| (r.tstamp, r.filename.as_str())).collect::<Vec<_>>(),
        vec![(1, "a.py"), (1, "b.py"), (2, "a.py")]
    );

    let one_run = store.scan(&ScanFilter {
        tstamp: Some(1),
        filename: Some("a.py".into()),
        ..Default::default()
    });
    assert_eq!(one_run.len(), 1);
}

#[test]
fn bad_value_type_names_the_offender() {
    let dir = TempDir::new().unwrap();
    let mut store = Store::open(dir.path(), "demo").unwrap();
    store.begin_run(1).unwrap();
    let mut r = rec(1, "a.py", 0, "weird", "x");
    r.value_type = 7;
    let err = store.put_record(r).unwrap_err();
    assert!(err.to_string().contains("weird"));
}

proptest! {
    #[test]
    fn encode_decode_round_trip(raw in raw_value_strategy()) {
        let dir = TempDir::new().unwrap();
        let store = Store::open(dir.path(), "demo").unwrap();
        let (vt, payload) = store.encode_value("p", raw.clone()).unwrap();
        let back = store.decode_value("p", vt, &payload).unwrap();
        match (raw, back) {
            (RawValue::Int(a), RawValue::Int(b)) => prop_assert_eq!(a, b),
            (RawValue::Float(a), RawValue::Float(b)) => prop_assert_eq!(a, b),
            (RawValue::Text(a), RawValue::Text(b)) => prop_assert_eq!(a, b),
            (RawValue::Bytes(a), RawValue::Bytes(b)) => prop_assert_eq!(a, b),
            // oversized text legitimately comes back as its bytes
            (RawValue::Text(a), RawValue::Bytes(b)) => {
                prop_assert!(a.len() > INLINE_TEXT_LIMIT);
                prop_assert_eq!(a.into_bytes(), b);
            }
            (a, b) => prop_assert!(false, "type changed: {:?} -> {:?}", a, b),
        }
    }
}

fn raw_value_strategy() -> impl Strategy<Value = RawValue> {
    prop_oneof![
        any::<i64>().prop_map(RawValue::Int),
        // finite floats round-trip exactly through shortest-decimal text
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(RawValue::Float),
        ".{0,64}".prop_map(RawValue::Text),
        proptest::collection::vec(any::<u8>(), 0..256).prop_map(RawValue::Bytes),
    ]
}
