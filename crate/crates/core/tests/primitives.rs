mod common;

use common::*;
use kgstore::nm::NmBackend;
use kgstore::primitives::{GroupKey, GroupedRow, Request};
use kgstore::{Ordering, Term, TriplePattern};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_graphs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for round in 0..6 {
        let spec = random_spec(&mut rng, 3000);
        let triples = random_graph(&mut rng, spec);
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config();
        if round % 2 == 1 {
            config.tau = 16;
            config.nm_backend = NmBackend::Array;
        }
        let db = load_triples(dir.path(), &triples, &config);
        let snap = db.snapshot();
        let edges = to_ids(&snap, &triples);
        check_suite(&snap, &edges, &mut rng);
    }
}

#[test]
fn grp_example() {
    // grp("s", all variables) over {r1(a,b), r1(a,c), r2(b,c)}
    let t = |s: &str, r: &str, d: &str| [format!("<{s}>"), format!("<{r}>"), format!("<{d}>")];
    let triples = vec![t("a", "r1", "b"), t("a", "r1", "c"), t("b", "r2", "c")];
    let dir = tempfile::tempdir().unwrap();
    let db = load_triples(dir.path(), &triples, &small_config());
    let snap = db.snapshot();
    let a = snap.nodid(b"<a>").unwrap();
    let b = snap.nodid(b"<b>").unwrap();
    let rows: Vec<GroupedRow> =
        snap.grp("s".parse().unwrap(), &TriplePattern::all_vars()).unwrap().map(|r| r.unwrap()).collect();
    assert_eq!(
        rows,
        vec![GroupedRow { key: GroupKey::One(a), count: 2 }, GroupedRow { key: GroupKey::One(b), count: 1 }]
    );
    let p = TriplePattern::new(a, Term::var("y"), Term::var("z"));
    let rows: Vec<GroupedRow> = snap.grp("s".parse().unwrap(), &p).unwrap().map(|r| r.unwrap()).collect();
    assert_eq!(rows, vec![GroupedRow { key: GroupKey::One(a), count: 2 }]);
    assert_eq!(snap.cnt(&Request::Edg { omega: Ordering::Srd, pattern: TriplePattern::all_vars() }).unwrap(), 3);
}
