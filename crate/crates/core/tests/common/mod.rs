//! Shared test support: graph generators, loading helpers and a naive
//! in-memory oracle for the primitives.
//!
//! [DERIVED] oracles: expected values are computed here from the raw edge
//! list by filtering, sorting, grouping and counting, never hardcoded.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::Path;

use kgstore::db::Database;
use kgstore::loader::{load_from_reader, LoadConfig};
use kgstore::primitives::{GroupKey, GroupedRow, Request, Snapshot};
use kgstore::{Edge, Error, Ordering, PartialOrdering, Pos, Term, TermId, TriplePattern};
use rand::seq::IndexedRandom;
use rand::Rng;

pub type Triple = [String; 3];

pub fn node(i: u64) -> String {
    format!("<http://example.org/n{i}>")
}

pub fn rel(i: u64) -> String {
    format!("<http://example.org/r{i}>")
}

/// Shape of a random graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphSpec {
    pub edges: usize,
    pub nodes: u64,
    pub relations: u64,
    /// Exponent applied to uniform draws; larger values concentrate edges on
    /// few labels.
    pub skew: f64,
    /// Relation labels are node labels too, so repeated variables across
    /// the relation position can match.
    pub shared_labels: bool,
}

fn skewed(rng: &mut impl Rng, n: u64, skew: f64) -> u64 {
    let u: f64 = rng.random();
    ((u.powf(skew) * n as f64) as u64).min(n - 1)
}

pub fn random_graph(rng: &mut impl Rng, spec: GraphSpec) -> Vec<Triple> {
    (0..spec.edges)
        .map(|_| {
            let s = skewed(rng, spec.nodes, spec.skew);
            let r = skewed(rng, spec.relations, spec.skew);
            let d = skewed(rng, spec.nodes, spec.skew);
            [node(s), if spec.shared_labels { node(r) } else { rel(r) }, node(d)]
        })
        .collect()
}

/// Random spec mixing dense graphs (few labels, large tables) and sparse
/// ones (many labels, tiny tables).
pub fn random_spec(rng: &mut impl Rng, max_edges: usize) -> GraphSpec {
    let edges = rng.random_range(1..=max_edges);
    let dense = rng.random_bool(0.5);
    let nodes = if dense { rng.random_range(2..=40) } else { rng.random_range(50..=(edges as u64 * 2).max(60)) };
    let relations = if rng.random_bool(0.3) { rng.random_range(1..=3) } else { rng.random_range(2..=60) };
    let skew = [1.0, 1.5, 3.0][rng.random_range(0..3)];
    GraphSpec { edges, nodes, relations, skew, shared_labels: rng.random_bool(0.25) }
}

pub fn ntriples(triples: &[Triple]) -> String {
    let mut s = String::new();
    for [a, b, c] in triples {
        s.push_str(&format!("{a} {b} {c} .\n"));
    }
    s
}

pub fn small_config() -> LoadConfig {
    LoadConfig { processing_workers: 2, io_workers: 2, sort_memory: 4 << 20, ..LoadConfig::default() }
}

/// Loads label triples into a new database at `dir` and opens it.
pub fn load_triples(dir: &Path, triples: &[Triple], config: &LoadConfig) -> Database {
    let text = ntriples(triples);
    load_from_reader(config, Cursor::new(text.into_bytes()), dir).expect("load");
    Database::open_writable(dir).expect("open")
}

/// Id edges of label triples according to the snapshot's dictionary.
pub fn to_ids(snap: &Snapshot, triples: &[Triple]) -> Vec<Edge> {
    let mut out: Vec<Edge> = triples
        .iter()
        .map(|[s, r, d]| {
            Edge::new(
                snap.nodid(s.as_bytes()).unwrap(),
                snap.edgid(r.as_bytes()).unwrap(),
                snap.nodid(d.as_bytes()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Label triples of the whole visible graph, sorted.
pub fn visible_labels(snap: &Snapshot) -> Vec<Triple> {
    let mut out: Vec<Triple> = snap
        .edg(Ordering::Srd, &TriplePattern::all_vars())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            [
                String::from_utf8(snap.lbl_n(e.s).unwrap()).unwrap(),
                String::from_utf8(snap.lbl_e(e.r).unwrap()).unwrap(),
                String::from_utf8(snap.lbl_n(e.d).unwrap()).unwrap(),
            ]
        })
        .collect();
    out.sort();
    out
}

pub fn id(v: u64) -> TermId {
    TermId::new(v).unwrap()
}

fn field(e: &Edge, p: Pos) -> TermId {
    match p {
        Pos::S => e.s,
        Pos::R => e.r,
        Pos::D => e.d,
    }
}

fn positions(o: Ordering) -> [Pos; 3] {
    let s = o.to_string();
    let mut out = [Pos::S; 3];
    for (i, c) in s.chars().enumerate() {
        out[i] = match c {
            's' => Pos::S,
            'r' => Pos::R,
            'd' => Pos::D,
            _ => unreachable!(),
        };
    }
    out
}

/// [DERIVED] Naive evaluation over a raw edge list.
pub struct Oracle {
    pub edges: Vec<Edge>,
}

impl Oracle {
    pub fn new(mut edges: Vec<Edge>) -> Oracle {
        edges.sort();
        edges.dedup();
        Oracle { edges }
    }

    pub fn matches(p: &TriplePattern, e: &Edge) -> bool {
        let slots = [(&p.s, e.s), (&p.r, e.r), (&p.d, e.d)];
        let mut vars: BTreeMap<&str, TermId> = BTreeMap::new();
        for (t, v) in slots {
            match t {
                Term::Const(c) if *c != v => return false,
                Term::Const(_) => {}
                Term::Var(name) => {
                    if let Some(prev) = vars.insert(name, v) {
                        if prev != v {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn edg(&self, o: Ordering, p: &TriplePattern) -> Vec<Edge> {
        let pos = positions(o);
        let mut out: Vec<Edge> = self.edges.iter().filter(|e| Self::matches(p, e)).copied().collect();
        out.sort_by_key(|e| pos.map(|q| field(e, q)));
        out
    }

    pub fn grp(&self, o: PartialOrdering, p: &TriplePattern) -> Vec<GroupedRow> {
        let pos: Vec<Pos> = o.to_string().chars().map(|c| Pos::from_char(c).unwrap()).collect();
        let mut groups: BTreeMap<GroupKey, u64> = BTreeMap::new();
        for e in self.edges.iter().filter(|e| Self::matches(p, e)) {
            let key = match pos[..] {
                [a] => GroupKey::One(field(e, a)),
                [a, b] => GroupKey::Two(field(e, a), field(e, b)),
                _ => unreachable!(),
            };
            *groups.entry(key).or_default() += 1;
        }
        groups.into_iter().map(|(key, count)| GroupedRow { key, count }).collect()
    }

    pub fn nodes(&self) -> Vec<TermId> {
        let set: BTreeSet<TermId> = self.edges.iter().flat_map(|e| [e.s, e.d]).collect();
        set.into_iter().collect()
    }

    pub fn relations(&self) -> Vec<TermId> {
        let set: BTreeSet<TermId> = self.edges.iter().map(|e| e.r).collect();
        set.into_iter().collect()
    }
}

pub fn all_partial_orderings() -> Vec<PartialOrdering> {
    ["s", "r", "d", "sr", "sd", "rs", "rd", "ds", "dr"].iter().map(|s| s.parse().unwrap()).collect()
}

fn v(name: &str) -> Term {
    Term::var(name)
}

/// Patterns of every shape: no constants, repeated variables, one, two and
/// three constants, drawn from the graph plus some absent values.
pub fn sample_patterns(rng: &mut impl Rng, oracle: &Oracle, absent: TermId) -> Vec<TriplePattern> {
    let mut out = vec![
        TriplePattern::all_vars(),
        TriplePattern::new(v("x"), v("x"), v("y")),
        TriplePattern::new(v("x"), v("y"), v("x")),
        TriplePattern::new(v("x"), v("y"), v("y")),
        TriplePattern::new(v("x"), v("x"), v("x")),
    ];
    if oracle.edges.is_empty() {
        out.push(TriplePattern::new(absent, v("y"), v("z")));
        return out;
    }
    let pick = |rng: &mut dyn rand::RngCore| *oracle.edges.choose(rng).unwrap();
    for _ in 0..3 {
        let e = pick(rng);
        out.push(TriplePattern::new(e.s, v("y"), v("z")));
        out.push(TriplePattern::new(v("x"), e.r, v("z")));
        out.push(TriplePattern::new(v("x"), v("y"), e.d));
        let e = pick(rng);
        out.push(TriplePattern::new(e.s, e.r, v("z")));
        out.push(TriplePattern::new(e.s, v("y"), e.d));
        out.push(TriplePattern::new(v("x"), e.r, e.d));
        out.push(TriplePattern::new(e.s, e.r, e.d));
    }
    // One constant in a role the term may not have, and a repeated variable
    // next to a constant.
    let e = pick(rng);
    out.push(TriplePattern::new(e.d, v("y"), v("z")));
    out.push(TriplePattern::new(v("x"), v("y"), e.s));
    out.push(TriplePattern::new(e.s, v("y"), v("y")));
    out.push(TriplePattern::new(v("x"), e.r, v("x")));
    // Absent combinations.
    let (a, b) = (pick(rng), pick(rng));
    out.push(TriplePattern::new(a.s, b.r, a.d));
    out.push(TriplePattern::new(absent, v("y"), v("z")));
    out.push(TriplePattern::new(v("x"), absent, v("z")));
    out.push(TriplePattern::new(a.s, absent, v("z")));
    out
}

/// Number of individual checks performed.
#[derive(Debug, Default, Clone, Copy)]
pub struct SuiteStats {
    pub patterns: usize,
    pub checks: usize,
}

/// Compares every primitive on `snap` with the oracle over `edges`.
/// Panics with a description of the first mismatch.
pub fn check_suite(snap: &Snapshot, edges: &[Edge], rng: &mut impl Rng) -> SuiteStats {
    let oracle = Oracle::new(edges.to_vec());
    let mut stats = SuiteStats::default();
    assert_eq!(snap.edge_count(), oracle.edges.len() as u64, "edge count");
    // Label primitives.
    for n in oracle.nodes().choose_multiple(rng, 20) {
        let label = snap.lbl_n(*n).unwrap();
        assert_eq!(snap.nodid(&label).unwrap(), *n, "nodid(lbl_n({n}))");
        stats.checks += 1;
    }
    for r in oracle.relations().choose_multiple(rng, 10) {
        let label = snap.lbl_e(*r).unwrap();
        assert_eq!(snap.edgid(&label).unwrap(), *r, "edgid(lbl_e({r}))");
        stats.checks += 1;
    }
    let max = oracle.edges.iter().flat_map(|e| [e.s, e.r, e.d]).max().map_or(0, |t| t.get());
    let absent = id(max + 1000);
    for p in sample_patterns(rng, &oracle, absent) {
        stats.patterns += 1;
        for o in Ordering::ALL {
            let want = oracle.edg(o, &p);
            let got: Vec<Edge> = snap.edg(o, &p).unwrap().map(|e| e.unwrap()).collect();
            assert_eq!(got, want, "edg({o}, {p:?})");
            let req = Request::Edg { omega: o, pattern: p.clone() };
            assert_eq!(snap.cnt(&req).unwrap(), want.len() as u64, "cnt(edg({o}, {p:?}))");
            let idx: Vec<usize> = if want.len() <= 6 {
                (0..want.len()).collect()
            } else {
                let mut v = vec![0, want.len() - 1];
                v.extend((0..4).map(|_| rng.random_range(0..want.len())));
                v
            };
            for i in idx {
                assert_eq!(snap.pos(o, &p, i as u64).unwrap(), want[i], "pos({o}, {p:?}, {i})");
            }
            match snap.pos(o, &p, want.len() as u64) {
                Err(Error::IndexOutOfRange { count, .. }) => {
                    assert_eq!(count, want.len() as u64, "pos out-of-range count ({o}, {p:?})")
                }
                other => panic!("pos({o}, {p:?}, {}) should be out of range, got {other:?}", want.len()),
            }
            stats.checks += 4;
        }
        let mut total = None;
        for g in all_partial_orderings() {
            let want = oracle.grp(g, &p);
            let got: Vec<GroupedRow> = snap.grp(g, &p).unwrap().map(|r| r.unwrap()).collect();
            assert_eq!(got, want, "grp({g}, {p:?})");
            let req = Request::Grp { omega: g, pattern: p.clone() };
            assert_eq!(snap.cnt(&req).unwrap(), want.len() as u64, "cnt(grp({g}, {p:?}))");
            if g.len() == 1 && !p_has_repeats(&p) {
                let sum: u64 = got.iter().map(|r| r.count).sum();
                assert_eq!(*total.get_or_insert(sum), sum, "grp sums differ for {p:?}");
            }
            stats.checks += 2;
        }
    }
    stats
}

fn p_has_repeats(p: &TriplePattern) -> bool {
    let vars: Vec<&str> = [&p.s, &p.r, &p.d].iter().filter_map(|t| t.as_var()).collect();
    let set: BTreeSet<&&str> = vars.iter().collect();
    set.len() != vars.len()
}

/// Graph where most nodes have fewer than 20 edges in every role, with a few
/// hubs.
pub fn ofr_graph(rng: &mut impl Rng, edges: usize) -> Vec<Triple> {
    let nodes = (edges / 4) as u64;
    (0..edges)
        .map(|_| {
            let hub = rng.random_bool(0.05);
            let s = if hub { rng.random_range(0..10) } else { rng.random_range(0..nodes) };
            let d = rng.random_range(0..nodes);
            [node(s), rel(rng.random_range(0..30)), node(d)]
        })
        .collect()
}

/// Graph dominated by one type relation with many instances per class, plus
/// a few other relations.
pub fn isa_graph(rng: &mut impl Rng, entities: u64, classes: u64) -> Vec<Triple> {
    let isa = "<http://www.w3.org/1999/02/22-rdf-syntax-ns#type>".to_string();
    let mut out = Vec::new();
    for e in 0..entities {
        let c = rng.random_range(0..classes);
        out.push([node(e), isa.clone(), format!("<http://example.org/Class{c}>")]);
        if rng.random_bool(0.3) {
            out.push([node(e), isa.clone(), format!("<http://example.org/Class{}>", (c + 1) % classes)]);
        }
        if rng.random_bool(0.5) {
            out.push([node(e), rel(rng.random_range(0..5)), node(rng.random_range(0..entities))]);
        }
    }
    out
}

pub mod lubm;

/// [DERIVED] Nested-loop evaluation of a graph pattern over label triples. Terms
/// starting with `?` are variables. Returns the distinct projected rows,
/// sorted.
pub fn nested_loop(triples: &[Triple], patterns: &[[String; 3]], projection: &[&str]) -> Vec<Vec<String>> {
    let candidates: Vec<Vec<&Triple>> = patterns
        .iter()
        .map(|p| triples.iter().filter(|t| (0..3).all(|i| p[i].starts_with('?') || p[i] == t[i])).collect())
        .collect();
    let mut out = BTreeSet::new();
    let mut env: Vec<(String, String)> = Vec::new();
    fn walk(
        k: usize,
        patterns: &[[String; 3]],
        candidates: &[Vec<&Triple>],
        env: &mut Vec<(String, String)>,
        projection: &[&str],
        out: &mut BTreeSet<Vec<String>>,
    ) {
        if k == patterns.len() {
            let row = projection
                .iter()
                .map(|v| env.iter().find(|(n, _)| n == &v[..]).map(|(_, x)| x.clone()).unwrap())
                .collect();
            out.insert(row);
            return;
        }
        for t in &candidates[k] {
            let mark = env.len();
            let mut ok = true;
            for i in 0..3 {
                let p = &patterns[k][i];
                if let Some(name) = p.strip_prefix('?') {
                    match env.iter().find(|(n, _)| n == name) {
                        Some((_, x)) if *x != t[i] => {
                            ok = false;
                            break;
                        }
                        Some(_) => {}
                        None => env.push((name.to_string(), t[i].clone())),
                    }
                }
            }
            if ok {
                walk(k + 1, patterns, candidates, env, projection, out);
            }
            env.truncate(mark);
        }
    }
    walk(0, patterns, &candidates, &mut env, projection, &mut out);
    out.into_iter().collect()
}

/// Triple patterns of a parsed query in the nested-loop oracle's form.
pub fn oracle_patterns(q: &kgstore::sparql::BasicGraphPattern) -> Vec<[String; 3]> {
    use kgstore::sparql::QueryTerm;
    q.patterns
        .iter()
        .map(|p| {
            p.clone().map(|t| match t {
                QueryTerm::Var(v) => format!("?{v}"),
                QueryTerm::Label(l) => l,
                QueryTerm::Bare(w) => format!("<{w}>"),
            })
        })
        .collect()
}
