mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use common::*;
use kgstore::db::Database;
use kgstore::dictionary::IdMode;
use kgstore::input::{InputFormat, SNAP_RELATION};
use kgstore::loader::{load, load_from_reader, LoadConfig};
use kgstore::nm::NmBackend;
use kgstore::sort::MIN_SORT_MEMORY;
use kgstore::{Error, Ordering, TriplePattern};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every file under `dir` with its bytes, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn sorted_distinct(triples: &[Triple]) -> Vec<Triple> {
    let mut v = triples.to_vec();
    v.sort();
    v.dedup();
    v
}

#[test]
fn empty_input_gives_empty_database() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("db");
    let r = load_from_reader(&small_config(), Cursor::new(b"# nothing\n\n".to_vec()), &out).unwrap();
    assert_eq!(r.edges, 0);
    assert_eq!(r.input_triples, 0);
    let db = Database::open(&out).unwrap();
    let snap = db.snapshot();
    assert_eq!(snap.edge_count(), 0);
    assert_eq!(snap.edg(Ordering::Rds, &TriplePattern::all_vars()).unwrap().count(), 0);
}

#[test]
fn multi_run_load_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = GraphSpec { edges: 10_000, nodes: 3_000, relations: 25, skew: 1.5, shared_labels: false };
    let triples = random_graph(&mut rng, spec);
    let tmp = tempfile::tempdir().unwrap();
    let config = LoadConfig { sort_memory: MIN_SORT_MEMORY, tau: 64, ..small_config() };
    let input = tmp.path().join("g.nt");
    fs::write(&input, ntriples(&triples)).unwrap();
    let r = load(&config, &input, &tmp.path().join("db")).unwrap();
    // Minimum budget sorts in chunks of 1024 records: several runs per ordering.
    assert!(r.sort_runs >= 6 * 9, "runs {}", r.sort_runs);
    let db = Database::open(&tmp.path().join("db")).unwrap();
    let snap = db.snapshot();
    assert_eq!(visible_labels(&snap), sorted_distinct(&triples));
    let edges = to_ids(&snap, &triples);
    let stats = check_suite(&snap, &edges, &mut rng);
    assert!(stats.patterns > 10);
}

#[test]
fn worker_counts_do_not_change_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = random_spec(&mut rng, 20_000);
    let triples = random_graph(&mut rng, spec);
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("g.nt");
    fs::write(&input, ntriples(&triples)).unwrap();
    let mut trees = Vec::new();
    for (proc, io) in [(1, 1), (8, 4), (3, 2)] {
        let out = tmp.path().join(format!("db{proc}"));
        let config = LoadConfig { processing_workers: proc, io_workers: io, sort_memory: 1 << 20, ..small_config() };
        load(&config, &input, &out).unwrap();
        trees.push(tree(&out));
    }
    assert!(trees[0].contains_key("ts.bin"));
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0], trees[2]);
}

#[test]
fn duplicates_are_dropped() {
    let t = |a: u64, b: u64, c: u64| [node(a), rel(b), node(c)];
    let triples = vec![t(1, 1, 2), t(1, 1, 2), t(2, 1, 1), t(1, 1, 2), t(3, 2, 3)];
    let tmp = tempfile::tempdir().unwrap();
    let r = load_from_reader(&small_config(), Cursor::new(ntriples(&triples)), &tmp.path().join("db")).unwrap();
    assert_eq!(r.input_triples, 5);
    assert_eq!(r.edges, 3);
    let db = Database::open(&tmp.path().join("db")).unwrap();
    assert_eq!(visible_labels(&db.snapshot()), sorted_distinct(&triples));
}

#[test]
fn ids_follow_first_appearance() {
    let text = "<b> <p> <a> .\n<c> <q> <b> .\n";
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("db");
    load_from_reader(&small_config(), Cursor::new(text), &out).unwrap();
    let db = Database::open(&out).unwrap();
    let snap = db.snapshot();
    let ids: Vec<u64> = ["<b>", "<p>", "<a>", "<c>", "<q>"]
        .iter()
        .map(|l| match *l {
            "<p>" | "<q>" => snap.edgid(l.as_bytes()).unwrap().get(),
            _ => snap.nodid(l.as_bytes()).unwrap().get(),
        })
        .collect();
    assert_eq!(ids, [0, 1, 2, 3, 4]);
}

#[test]
fn split_ids_and_array_backend() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let triples =
        random_graph(&mut rng, GraphSpec { edges: 2_000, nodes: 300, relations: 12, skew: 1.0, shared_labels: false });
    let tmp = tempfile::tempdir().unwrap();
    let config = LoadConfig { id_mode: IdMode::Split, nm_backend: NmBackend::Array, ..small_config() };
    let db = load_triples(&tmp.path().join("db"), &triples, &config);
    let snap = db.snapshot();
    assert_eq!(snap.edgid(rel(0).as_bytes()).unwrap().get(), 0);
    assert_eq!(visible_labels(&snap), sorted_distinct(&triples));
    let edges = to_ids(&snap, &triples);
    check_suite(&snap, &edges, &mut rng);
    let st = db.stats().unwrap();
    assert_eq!(st.relation_labels, 12.min(st.relations));
}

#[test]
fn snap_and_encoded_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let snap_in = "# comment\n% also a comment\n1 2\n2\t3\n1 2\n";
    let out = tmp.path().join("snap");
    let config = LoadConfig { format: InputFormat::Snap, ..small_config() };
    let r = load_from_reader(&config, Cursor::new(snap_in), &out).unwrap();
    assert_eq!(r.edges, 2);
    let db = Database::open(&out).unwrap();
    let snap = db.snapshot();
    let e = SNAP_RELATION.to_string();
    assert_eq!(
        visible_labels(&snap),
        vec![["1".to_string(), e.clone(), "2".to_string()], ["2".to_string(), e, "3".to_string()]]
    );

    let out = tmp.path().join("enc");
    let config = LoadConfig { format: InputFormat::Encoded, ..small_config() };
    load_from_reader(&config, Cursor::new("5 0 7\n7 1 5\n5 0 7\n"), &out).unwrap();
    let db = Database::open(&out).unwrap();
    let snap = db.snapshot();
    let edges: Vec<[u64; 3]> = snap
        .edg(Ordering::Srd, &TriplePattern::all_vars())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            [e.s.get(), e.r.get(), e.d.get()]
        })
        .collect();
    assert_eq!(edges, [[5, 0, 7], [7, 1, 5]]);
}

#[test]
fn gzip_input_is_decompressed() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("g.nt.gz");
    let mut gz = flate2::write::GzEncoder::new(fs::File::create(&input).unwrap(), flate2::Compression::fast());
    gz.write_all(b"<a> <p> <b> .\n<b> <p> <c> .\n").unwrap();
    gz.finish().unwrap();
    let r = load(&small_config(), &input, &tmp.path().join("db")).unwrap();
    assert_eq!(r.edges, 2);
}

#[test]
fn parse_error_reports_line_and_cleans_up() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..20_000 {
        text.push_str(&format!("<n{i}> <p> <n{}> .\n", i + 1));
    }
    text.push_str("<broken> <p>\n");
    let out = tmp.path().join("db");
    match load_from_reader(&small_config(), Cursor::new(text), &out) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 20_001),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(!out.exists());

    // A pre-existing empty target survives a failure, still empty.
    fs::create_dir(&out).unwrap();
    assert!(load_from_reader(&small_config(), Cursor::new("<a> <b>\n"), &out).is_err());
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn non_empty_target_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("db");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let err = load_from_reader(&small_config(), Cursor::new("<a> <b> <c> .\n"), &out).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    assert_eq!(fs::read(out.join("keep.txt")).unwrap(), b"x");
}

#[test]
fn io_concurrency_respects_the_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let triples = random_graph(
        &mut rng,
        GraphSpec { edges: 30_000, nodes: 5_000, relations: 20, skew: 1.0, shared_labels: false },
    );
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("g.nt");
    fs::write(&input, ntriples(&triples)).unwrap();
    for io in [1, 3] {
        let config = LoadConfig { io_workers: io, processing_workers: 4, sort_memory: 1 << 18, ..small_config() };
        let r = load(&config, &input, &tmp.path().join(format!("db{io}"))).unwrap();
        assert!(r.io_peak_in_flight >= 1);
        assert!(r.io_peak_in_flight <= io, "peak {} > {io}", r.io_peak_in_flight);
    }
}

#[test]
fn invalid_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for config in [
        LoadConfig { processing_workers: 0, ..small_config() },
        LoadConfig { io_workers: 0, ..small_config() },
        LoadConfig { sort_memory: 10, ..small_config() },
        LoadConfig { tau: 0, ..small_config() },
    ] {
        let err = load_from_reader(&config, Cursor::new("<a> <b> <c> .\n"), &tmp.path().join("db")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn load_round_trips_labels(
        raw in prop::collection::vec((0u64..30, 0u64..4, 0u64..30), 1..300),
        tau in prop::sample::select(vec![1u64, 4, 1_000_000]),
        ofr in any::<bool>(),
        aggr in any::<bool>(),
    ) {
        let triples: Vec<Triple> = raw.iter().map(|&(s, r, d)| [node(s), rel(r), node(d)]).collect();
        let tmp = tempfile::tempdir().unwrap();
        let config = LoadConfig { tau, ofr, eta: 3, aggr, ..small_config() };
        let db = load_triples(&tmp.path().join("db"), &triples, &config);
        let snap = db.snapshot();
        prop_assert_eq!(visible_labels(&snap), sorted_distinct(&triples));
        for o in Ordering::ALL {
            let got: Vec<_> = snap.edg(o, &TriplePattern::all_vars()).unwrap().map(|e| e.unwrap()).collect();
            let mut want = to_ids(&snap, &triples);
            want.sort_by_key(|e| o.key(e));
            prop_assert_eq!(got, want);
        }
    }
}
