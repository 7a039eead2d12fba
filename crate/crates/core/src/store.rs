//! One self-contained edge store: six streams plus a node manager. The base
//! database and every delta are stores.

use std::collections::HashMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, IoGate, ReadStats};
use crate::layout::{LayoutParams, Row, TableIter, TableReader};
use crate::model::{Edge, Ordering, TermId};
use crate::nm::{self, NmBackend, NodeManager, NodeRecord};
use crate::stream::{
    decode_aggregated, BuildOptions, HeaderEntry, StreamBuilder, StreamId, StreamReader, StreamSummary,
};

pub const STORE_META: &str = "store.json";

/// Per-store metadata written next to the streams.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct StoreMeta {
    pub edges: u64,
    pub nodes: u64,
    pub nm_backend: NmBackend,
    pub tau: u64,
    pub upsilon: u64,
    pub ofr_eta: Option<u64>,
    pub aggregate: bool,
}

/// How a store was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    pub streams: BuildOptions,
    pub nm_backend: NmBackend,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { streams: BuildOptions::default(), nm_backend: NmBackend::Btree }
    }
}

/// Supplies the edge set sorted in any requested ordering, duplicate free.
pub trait SortedSource {
    fn feed(&mut self, order: Ordering, sink: &mut dyn FnMut([TermId; 3]) -> Result<()>) -> Result<()>;
}

/// Sorted source over an in-memory edge list.
pub struct MemorySource(pub Vec<Edge>);

impl SortedSource for MemorySource {
    fn feed(&mut self, order: Ordering, sink: &mut dyn FnMut([TermId; 3]) -> Result<()>) -> Result<()> {
        let mut keys: Vec<[TermId; 3]> = self.0.iter().map(|e| order.key(e)).collect();
        keys.sort_unstable();
        keys.dedup();
        for k in keys {
            sink(k)?;
        }
        Ok(())
    }
}

/// Results of building one store.
#[derive(Debug, Clone, Default)]
pub struct BuildSummary {
    pub edges: u64,
    pub nodes: u64,
    pub streams: Vec<(StreamId, StreamSummary)>,
}

/// Builds the six streams, the node manager and `store.json` in `dir`.
/// Unprimed streams are built first because pruning and aggregate references
/// consult them.
pub fn build_store(
    dir: &Path,
    opts: StoreOptions,
    gate: Arc<IoGate>,
    source: &mut dyn SortedSource,
) -> Result<BuildSummary> {
    let mut summary = BuildSummary::default();
    let mut readers: HashMap<StreamId, StreamReader> = HashMap::new();
    let order = [StreamId::Ts, StreamId::Tr, StreamId::Td, StreamId::Tsp, StreamId::Trp, StreamId::Tdp];
    for id in order {
        let counterpart = id.is_primed().then(|| &readers[&id.counterpart()]);
        let target = (id == StreamId::Trp).then(|| &readers[&StreamId::Td]);
        let mut b = StreamBuilder::new(id, opts.streams, dir, gate.clone(), counterpart, target)?;
        source.feed(id.ordering(), &mut |t| b.push(t))?;
        let path = dir.join(id.file_name());
        let s = b.finish(&path)?;
        log::debug!("built {id}: {} tables, {} bytes", s.tables, s.bytes);
        summary.streams.push((id, s));
        readers.insert(id, StreamReader::open(&path, id)?);
    }
    summary.edges = summary.streams[0].1.rows;
    for (id, s) in &summary.streams {
        if s.rows != summary.edges {
            return Err(Error::corrupt(format!("{id} holds {} edges, expected {}", s.rows, summary.edges)));
        }
    }
    let all: [&StreamReader; 6] = StreamId::ALL.map(|id| &readers[&id]);
    summary.nodes = nm::build(dir, opts.nm_backend, || nm::records_from_streams(&all))?;
    let b = opts.streams;
    let meta = StoreMeta {
        edges: summary.edges,
        nodes: summary.nodes,
        nm_backend: opts.nm_backend,
        tau: b.layout.tau,
        upsilon: b.layout.upsilon,
        ofr_eta: b.ofr_eta,
        aggregate: b.aggregate,
    };
    write_atomic(&dir.join(STORE_META), &serde_json::to_vec_pretty(&meta).expect("serializable"))?;
    Ok(summary)
}

/// Rows of one table, either read in place or held in memory.
#[derive(Debug, Clone)]
pub enum TableView<'a> {
    Encoded(TableReader<'a>),
    Rows(Arc<Vec<Row>>),
}

impl<'a> TableView<'a> {
    pub fn len(&self) -> usize {
        match self {
            TableView::Encoded(t) => t.len(),
            TableView::Rows(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> Row {
        match self {
            TableView::Encoded(t) => t.row(i),
            TableView::Rows(r) => r[i],
        }
    }

    pub fn search_first(&self, key: TermId) -> Option<Range<usize>> {
        match self {
            TableView::Encoded(t) => t.search_first(key),
            TableView::Rows(r) => {
                let lo = r.partition_point(|x| x.0 < key);
                let hi = r.partition_point(|x| x.0 <= key);
                (lo < hi).then_some(lo..hi)
            }
        }
    }

    pub fn iter_range(&self, range: Range<usize>) -> TableRows<'a> {
        match self {
            TableView::Encoded(t) => TableRows::Encoded(t.iter_range(range)),
            TableView::Rows(r) => {
                let end = range.end.min(r.len());
                TableRows::Owned { rows: r.clone(), next: range.start.min(end), end }
            }
        }
    }

    pub fn iter(&self) -> TableRows<'a> {
        self.iter_range(0..self.len())
    }
}

#[derive(Debug, Clone)]
pub enum TableRows<'a> {
    Encoded(TableIter<'a>),
    Owned { rows: Arc<Vec<Row>>, next: usize, end: usize },
}

impl Iterator for TableRows<'_> {
    type Item = Row;

    #[inline]
    fn next(&mut self) -> Option<Row> {
        match self {
            TableRows::Encoded(it) => it.next(),
            TableRows::Owned { rows, next, end } => {
                if *next < *end {
                    *next += 1;
                    Some(rows[*next - 1])
                } else {
                    None
                }
            }
        }
    }
}

/// An opened store.
pub struct Store {
    dir: PathBuf,
    meta: StoreMeta,
    streams: Vec<StreamReader>,
    nm: NodeManager,
    cache: Mutex<HashMap<(StreamId, TermId), Arc<Vec<Row>>>>,
    stats: Arc<ReadStats>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).field("edges", &self.meta.edges).finish()
    }
}

impl Store {
    pub fn open(dir: &Path, stats: Arc<ReadStats>) -> Result<Store> {
        let path = dir.join(STORE_META);
        let text = std::fs::read(&path).map_err(Error::io_at(&path))?;
        let meta: StoreMeta =
            serde_json::from_slice(&text).map_err(|e| Error::corrupt(format!("{}: {e}", path.display())))?;
        let streams = StreamId::ALL
            .iter()
            .map(|&id| StreamReader::open(&dir.join(id.file_name()), id))
            .collect::<Result<Vec<_>>>()?;
        let nm = NodeManager::open(dir, meta.nm_backend)?;
        Ok(Store { dir: dir.to_path_buf(), meta, streams, nm, cache: Mutex::new(HashMap::new()), stats })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn edges(&self) -> u64 {
        self.meta.edges
    }

    pub fn layout_params(&self) -> LayoutParams {
        LayoutParams { tau: self.meta.tau, upsilon: self.meta.upsilon }
    }

    pub fn stream(&self, id: StreamId) -> &StreamReader {
        &self.streams[id.index()]
    }

    pub fn node_manager(&self) -> &NodeManager {
        &self.nm
    }

    pub fn stats(&self) -> &Arc<ReadStats> {
        &self.stats
    }

    /// Node record of `id`, counted as one node-manager lookup.
    pub fn record(&self, id: TermId) -> Result<Option<NodeRecord>> {
        self.stats.nm();
        self.nm.get(id)
    }

    /// Header entry of the table keyed by `key`, resolved through the node
    /// manager.
    pub fn entry(&self, stream: StreamId, key: TermId) -> Result<Option<HeaderEntry>> {
        match self.record(key)? {
            Some(rec) => rec.entry(key, stream),
            None => Ok(None),
        }
    }

    /// Header entry found by binary search of the stream header.
    pub fn header_entry(&self, stream: StreamId, key: TermId) -> Result<Option<HeaderEntry>> {
        self.stats.header();
        Ok(self.stream(stream).find(key)?.map(|(_, e)| e))
    }

    /// The table keyed by `key` in `stream`.
    pub fn table(&self, stream: StreamId, key: TermId) -> Result<Option<TableView<'_>>> {
        match self.entry(stream, key)? {
            Some(e) => self.view(stream, &e, true).map(Some),
            None => Ok(None),
        }
    }

    /// Opens the table described by `e`. Pruned tables are rebuilt from their
    /// counterpart and aggregated ones dereferenced; with `cache` set the
    /// result is kept for later calls.
    pub fn view(&self, stream: StreamId, e: &HeaderEntry, cache: bool) -> Result<TableView<'_>> {
        if !e.pruned() && !e.aggregated() {
            let t = TableReader::open(self.stream(stream).table_bytes(e)?, e.desc, e.n as usize)?;
            self.stats.table(t.encoded_len());
            return Ok(TableView::Encoded(t));
        }
        if let Some(rows) = self.cache.lock().get(&(stream, e.key)) {
            self.stats.table(0);
            return Ok(TableView::Rows(rows.clone()));
        }
        let rows = if e.pruned() {
            self.reconstruct(stream, e)?
        } else {
            let bytes = self.stream(stream).table_bytes(e)?;
            let rows = decode_aggregated(bytes, e, |sid| Ok(self.stream(sid).data()))?;
            self.stats.table(rows.len() * (e.desc.w2 as usize));
            rows
        };
        let rows = Arc::new(rows);
        if cache {
            self.cache.lock().insert((stream, e.key), rows.clone());
        }
        Ok(TableView::Rows(rows))
    }

    /// Rebuilds a pruned table by swapping the columns of its counterpart.
    pub fn reconstruct(&self, stream: StreamId, e: &HeaderEntry) -> Result<Vec<Row>> {
        let cp = stream.counterpart();
        let ce = self
            .stream(cp)
            .find(e.key)?
            .map(|(_, e)| e)
            .ok_or_else(|| Error::corrupt(format!("{stream}: counterpart of pruned table {} missing", e.key)))?;
        if ce.pruned() || ce.n != e.n {
            return Err(Error::corrupt(format!("{stream}: bad counterpart for {}", e.key)));
        }
        let view = self.view(cp, &ce, false)?;
        let mut rows: Vec<Row> = view.iter().map(|(a, b)| (b, a)).collect();
        rows.sort_unstable();
        Ok(rows)
    }

    /// Number of cached reconstructed tables.
    pub fn cached_tables(&self) -> usize {
        self.cache.lock().len()
    }

    /// Sum of file sizes of the six streams.
    pub fn stream_bytes(&self) -> u64 {
        self.streams.iter().map(|s| s.file_len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::decode_scan;

    fn edges(list: &[(u64, u64, u64)]) -> Vec<Edge> {
        list.iter()
            .map(|&(s, r, d)| Edge::new(TermId::new(s).unwrap(), TermId::new(r).unwrap(), TermId::new(d).unwrap()))
            .collect()
    }

    #[test]
    fn single_edge_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = MemorySource(edges(&[(0, 1, 2)]));
        let opts = StoreOptions { streams: BuildOptions { ofr_eta: None, ..Default::default() }, ..Default::default() };
        build_store(dir.path(), opts, IoGate::unbounded(), &mut src).unwrap();
        let store = Store::open(dir.path(), Arc::default()).unwrap();
        let a = TermId::new(0).unwrap();
        let ts = store.table(StreamId::Ts, a).unwrap().unwrap();
        assert_eq!(ts.row(0), (TermId::new(1).unwrap(), TermId::new(2).unwrap()));
        let tsp = store.table(StreamId::Tsp, a).unwrap().unwrap();
        assert_eq!(tsp.row(0), (TermId::new(2).unwrap(), TermId::new(1).unwrap()));
        assert!(store.table(StreamId::Td, a).unwrap().is_none());
        let rec = store.record(a).unwrap().unwrap();
        assert_eq!(rec.card, [1, 0, 0]);
    }

    #[test]
    fn pruned_tables_reconstruct_and_agree_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut list = vec![(0, 10, 1), (0, 11, 2)];
        for i in 0..30 {
            list.push((5, 10, 100 + i));
        }
        let mut src = MemorySource(edges(&list));
        build_store(dir.path(), StoreOptions::default(), IoGate::unbounded(), &mut src).unwrap();
        let store = Store::open(dir.path(), Arc::default()).unwrap();
        let a = TermId::new(0).unwrap();
        let e = store.stream(StreamId::Tsp).find(a).unwrap().unwrap().1;
        assert!(e.pruned());
        assert_eq!(store.entry(StreamId::Tsp, a).unwrap().unwrap(), e);
        let v = store.table(StreamId::Tsp, a).unwrap().unwrap();
        let rows: Vec<_> = v.iter().map(|(x, y)| (x.get(), y.get())).collect();
        assert_eq!(rows, vec![(1, 10), (2, 11)]);
        assert_eq!(store.cached_tables(), 1);
        let big = TermId::new(5).unwrap();
        let e = store.stream(StreamId::Tsp).find(big).unwrap().unwrap().1;
        assert!(!e.pruned());
        let rows = decode_scan(store.stream(StreamId::Tsp).table_bytes(&e).unwrap(), e.desc, 30).unwrap();
        assert_eq!(rows.len(), 30);
    }
}
