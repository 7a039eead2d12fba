//! Graph primitives evaluated over a snapshot: the base store plus the
//! sealed deltas visible when the snapshot was taken. Label lookups, sorted
//! edge scans (`edg`), grouping (`grp`), counting (`cnt`) and positional
//! access (`pos`).
//!
//! Positions are 0-based.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, TermKind};
use crate::error::{Error, Result};
use crate::io::{ReadCounters, ReadStats};
use crate::layout::Row;
use crate::model::{select_ordering, Edge, Ordering, PartialOrdering, Pos, TermId, TriplePattern};
use crate::store::{Store, TableRows};
use crate::stream::{HeaderEntry, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaKind {
    Addition,
    Removal,
}

impl DeltaKind {
    pub fn suffix(self) -> &'static str {
        match self {
            DeltaKind::Addition => "add",
            DeltaKind::Removal => "rem",
        }
    }
}

/// Key of a grouped row: one term, or a pair in the requested order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    One(TermId),
    Two(TermId, TermId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupedRow {
    pub key: GroupKey,
    pub count: u64,
}

/// An `edg` or `grp` call, as counted by [`Snapshot::cnt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Edg { omega: Ordering, pattern: TriplePattern },
    Grp { omega: PartialOrdering, pattern: TriplePattern },
}

/// Edges in the requested ordering.
pub struct EdgeIter<'a> {
    inner: Box<dyn Iterator<Item = Result<Edge>> + 'a>,
}

impl<'a> EdgeIter<'a> {
    fn new(inner: impl Iterator<Item = Result<Edge>> + 'a) -> Self {
        EdgeIter { inner: Box::new(inner) }
    }
}

impl Iterator for EdgeIter<'_> {
    type Item = Result<Edge>;

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

/// Grouped rows ascending by key.
pub struct GroupIter<'a> {
    inner: Box<dyn Iterator<Item = Result<GroupedRow>> + 'a>,
}

impl Iterator for GroupIter<'_> {
    type Item = Result<GroupedRow>;

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

/// Scan of one store restricted by the leading constants of a pattern.
pub(crate) struct StoreScan<'a> {
    store: &'a Store,
    stream: StreamId,
    order: Ordering,
    state: ScanState<'a>,
}

enum ScanState<'a> {
    Done,
    Table { key: TermId, rows: TableRows<'a>, third: Option<TermId> },
    Full { next: usize, key: TermId, rows: Option<TableRows<'a>> },
}

impl<'a> StoreScan<'a> {
    /// `consts` are the constants of the leading positions of `order`.
    pub(crate) fn new(store: &'a Store, order: Ordering, consts: &[TermId]) -> Result<Self> {
        let stream = StreamId::for_ordering(order);
        let state = match consts {
            [] => {
                store.stats().header();
                ScanState::Full { next: 0, key: TermId::from_raw(0), rows: None }
            }
            [key, rest @ ..] => match store.table(stream, *key)? {
                None => ScanState::Done,
                Some(view) => {
                    let range = match rest.first() {
                        Some(c) => view.search_first(*c).unwrap_or(0..0),
                        None => 0..view.len(),
                    };
                    ScanState::Table { key: *key, rows: view.iter_range(range), third: rest.get(1).copied() }
                }
            },
        };
        Ok(StoreScan { store, stream, order, state })
    }
}

impl Iterator for StoreScan<'_> {
    type Item = Result<Edge>;

    fn next(&mut self) -> Option<Result<Edge>> {
        let order = self.order;
        match &mut self.state {
            ScanState::Done => None,
            ScanState::Table { key, rows, third } => loop {
                let (a, b) = rows.next()?;
                if third.is_none_or(|t| t == b) {
                    return Some(Ok(order.edge([*key, a, b])));
                }
            },
            ScanState::Full { next, key, rows } => loop {
                if let Some(it) = rows {
                    if let Some((a, b)) = it.next() {
                        return Some(Ok(order.edge([*key, a, b])));
                    }
                }
                let reader = self.store.stream(self.stream);
                if *next >= reader.len() {
                    self.state = ScanState::Done;
                    return None;
                }
                let e = match reader.entry(*next) {
                    Ok(e) => e,
                    Err(err) => return Some(Err(err)),
                };
                *next += 1;
                *key = e.key;
                match self.store.view(self.stream, &e, false) {
                    Ok(v) => *rows = Some(v.iter()),
                    Err(err) => return Some(Err(err)),
                }
            },
        }
    }
}

/// Ordered merge of the base and delta scans. For each edge the latest
/// source decides: additions and the base make it visible, removals hide it.
pub(crate) struct Overlay<'a> {
    order: Ordering,
    scans: Vec<StoreScan<'a>>,
    heads: Vec<Option<Edge>>,
    removal: Vec<bool>,
    started: bool,
}

impl<'a> Overlay<'a> {
    pub(crate) fn new(order: Ordering, scans: Vec<(StoreScan<'a>, bool)>) -> Self {
        let n = scans.len();
        let (scans, removal) = scans.into_iter().unzip();
        Overlay { order, scans, heads: vec![None; n], removal, started: false }
    }

    fn fill(&mut self, i: usize) -> Result<()> {
        self.heads[i] = self.scans[i].next().transpose()?;
        Ok(())
    }

    /// Next distinct edge with the index of the source that decides it and
    /// whether the first source (the base) holds it.
    pub(crate) fn next_decided(&mut self) -> Option<Result<(Edge, usize, bool)>> {
        if !self.started {
            self.started = true;
            for i in 0..self.scans.len() {
                if let Err(e) = self.fill(i) {
                    return Some(Err(e));
                }
            }
        }
        let order = self.order;
        let min = self.heads.iter().flatten().map(|e| order.key(e)).min()?;
        let mut winner = 0;
        let mut edge = None;
        let mut in_first = false;
        for i in 0..self.heads.len() {
            if let Some(e) = self.heads[i] {
                if order.key(&e) == min {
                    winner = i;
                    edge = Some(e);
                    in_first |= i == 0;
                    if let Err(err) = self.fill(i) {
                        return Some(Err(err));
                    }
                }
            }
        }
        edge.map(|e| Ok((e, winner, in_first)))
    }

    pub(crate) fn is_removal(&self, i: usize) -> bool {
        self.removal[i]
    }
}

impl Iterator for Overlay<'_> {
    type Item = Result<Edge>;

    fn next(&mut self) -> Option<Result<Edge>> {
        loop {
            match self.next_decided()? {
                Ok((e, w, _)) if !self.removal[w] => return Some(Ok(e)),
                Ok(_) => continue,
                Err(err) => return Some(Err(err)),
            }
        }
    }
}

/// Immutable view of a database: base, sealed deltas and dictionary.
pub struct Snapshot {
    base: Arc<Store>,
    deltas: Vec<(DeltaKind, Arc<Store>)>,
    dict: Dictionary,
    visible: u64,
    stats: Arc<ReadStats>,
}

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Snapshot")
            .field("base", &self.base)
            .field("deltas", &self.deltas.len())
            .field("edges", &self.visible)
            .finish()
    }
}

impl Snapshot {
    pub fn new(
        base: Arc<Store>,
        deltas: Vec<(DeltaKind, Arc<Store>)>,
        dict: Dictionary,
        stats: Arc<ReadStats>,
    ) -> Snapshot {
        let mut visible = base.edges();
        for (kind, d) in &deltas {
            match kind {
                DeltaKind::Addition => visible += d.edges(),
                DeltaKind::Removal => visible -= d.edges(),
            }
        }
        Snapshot { base, deltas, dict, visible, stats }
    }

    pub fn base(&self) -> &Store {
        &self.base
    }

    pub fn deltas(&self) -> &[(DeltaKind, Arc<Store>)] {
        &self.deltas
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// |E| of the visible graph.
    pub fn edge_count(&self) -> u64 {
        self.visible
    }

    pub fn read_counters(&self) -> ReadCounters {
        self.stats.snapshot()
    }

    pub fn read_stats(&self) -> &Arc<ReadStats> {
        &self.stats
    }

    /// Label of node `n`.
    pub fn lbl_n(&self, n: TermId) -> Result<Vec<u8>> {
        self.dict.lookup_label(n, TermKind::Entity)?.ok_or_else(|| Error::AbsentTerm(format!("node {n}")))
    }

    /// Label of edge label `r`.
    pub fn lbl_e(&self, r: TermId) -> Result<Vec<u8>> {
        self.dict.lookup_label(r, TermKind::Relation)?.ok_or_else(|| Error::AbsentTerm(format!("relation {r}")))
    }

    /// Id of the node labelled `label`.
    pub fn nodid(&self, label: &[u8]) -> Result<TermId> {
        self.dict
            .lookup_id(label, TermKind::Entity)?
            .ok_or_else(|| Error::AbsentTerm(String::from_utf8_lossy(label).into_owned()))
    }

    /// Id of the edge label `label`.
    pub fn edgid(&self, label: &[u8]) -> Result<TermId> {
        self.dict
            .lookup_id(label, TermKind::Relation)?
            .ok_or_else(|| Error::AbsentTerm(String::from_utf8_lossy(label).into_owned()))
    }

    /// Label of a term in position `pos` of an edge.
    pub fn label_at(&self, id: TermId, pos: Pos) -> Result<Vec<u8>> {
        match pos {
            Pos::R => self.lbl_e(id),
            _ => self.lbl_n(id),
        }
    }

    /// Scan of the stream serving `p` in `omega`, before any repeated-variable
    /// filtering.
    fn raw_scan(&self, omega: Ordering, p: &TriplePattern) -> Result<EdgeIter<'_>> {
        let order = select_ordering(p, omega)?;
        let consts: Vec<TermId> = order.positions().iter().map_while(|&pos| p.constant(pos)).collect();
        if self.deltas.is_empty() {
            return Ok(EdgeIter::new(StoreScan::new(&self.base, order, &consts)?));
        }
        let mut scans = vec![(StoreScan::new(&self.base, order, &consts)?, false)];
        for (kind, d) in &self.deltas {
            scans.push((StoreScan::new(d, order, &consts)?, *kind == DeltaKind::Removal));
        }
        Ok(EdgeIter::new(Overlay::new(order, scans)))
    }

    /// Answers of `p` sorted by `omega`.
    pub fn edg(&self, omega: Ordering, p: &TriplePattern) -> Result<EdgeIter<'_>> {
        let scan = self.raw_scan(omega, p)?;
        if !p.has_repeated_vars() {
            return Ok(scan);
        }
        let p = p.clone();
        Ok(EdgeIter::new(scan.filter(move |r| r.as_ref().map_or(true, |e| p.matches(e)))))
    }

    /// Answers of `p` grouped by the positions of `omega`, with the number of
    /// edges per group. A two-position `omega` picks the
    /// grouping pair and its order.
    pub fn grp(&self, omega: PartialOrdering, p: &TriplePattern) -> Result<GroupIter<'_>> {
        check_group_ordering(omega)?;
        if let Some(fast) = self.grp_fast(omega, p)? {
            return Ok(match fast {
                GrpFast::One(row) => GroupIter { inner: Box::new(row.into_iter().map(Ok)) },
                GrpFast::Header(stream) => {
                    let reader = self.base.stream(stream);
                    GroupIter {
                        inner: Box::new(
                            reader
                                .entries()
                                .map(|e| e.map(|e: HeaderEntry| GroupedRow { key: GroupKey::One(e.key), count: e.n })),
                        ),
                    }
                }
            });
        }
        let edges = self.edg(omega.complete(), p)?;
        let positions: Vec<Pos> = omega.as_slice().to_vec();
        let key_of = move |e: &Edge| match positions[..] {
            [a] => GroupKey::One(e.get(a)),
            [a, b] => GroupKey::Two(e.get(a), e.get(b)),
            _ => unreachable!("checked length"),
        };
        let mut edges = edges.peekable();
        let inner = std::iter::from_fn(move || {
            let first = match edges.next()? {
                Ok(e) => e,
                Err(err) => return Some(Err(err)),
            };
            let key = key_of(&first);
            let mut count = 1;
            while let Some(Ok(e)) = edges.peek() {
                if key_of(e) != key {
                    break;
                }
                count += 1;
                edges.next();
            }
            if let Some(Err(_)) = edges.peek() {
                return Some(Err(edges.next().unwrap().unwrap_err()));
            }
            Some(Ok(GroupedRow { key, count }))
        });
        Ok(GroupIter { inner: Box::new(inner) })
    }

    /// Cardinality of `c` in `pos` from the node manager, when no delta
    /// mentions `c`.
    fn nm_card(&self, c: TermId, pos: Pos) -> Result<Option<u64>> {
        for (_, d) in &self.deltas {
            if d.record(c)?.is_some() {
                return Ok(None);
            }
        }
        Ok(Some(self.base.record(c)?.map_or(0, |r| r.card(pos))))
    }

    fn grp_fast(&self, omega: PartialOrdering, p: &TriplePattern) -> Result<Option<GrpFast>> {
        if omega.len() != 1 || p.has_repeated_vars() {
            return Ok(None);
        }
        let pos = omega.as_slice()[0];
        match p.num_constants() {
            0 if self.deltas.is_empty() => {
                let stream = StreamId::ALL.into_iter().find(|s| !s.is_primed() && s.key_pos() == pos);
                self.stats.header();
                Ok(stream.map(GrpFast::Header))
            }
            1 => match p.constant(pos) {
                Some(c) => Ok(self
                    .nm_card(c, pos)?
                    .map(|n| GrpFast::One((n > 0).then_some(GroupedRow { key: GroupKey::One(c), count: n })))),
                None => Ok(None),
            },
            _ => Ok(None),
        }
    }

    /// Number of results of a request.
    pub fn cnt(&self, req: &Request) -> Result<u64> {
        match req {
            Request::Edg { omega, pattern: p } => {
                if !p.has_repeated_vars() {
                    match p.num_constants() {
                        0 => return Ok(self.visible),
                        1 => {
                            let (pos, c) = p.constants().next().expect("one constant");
                            if let Some(n) = self.nm_card(c, pos)? {
                                return Ok(n);
                            }
                        }
                        _ => {}
                    }
                }
                count(self.edg(*omega, p)?)
            }
            Request::Grp { omega, pattern: p } => {
                check_group_ordering(*omega)?;
                match self.grp_fast(*omega, p)? {
                    Some(GrpFast::One(row)) => Ok(row.is_some() as u64),
                    Some(GrpFast::Header(stream)) => Ok(self.base.stream(stream).len() as u64),
                    None => count(self.grp(*omega, p)?),
                }
            }
        }
    }

    /// The `i`-th (0-based) edge of `edg(omega, p)`.
    pub fn pos(&self, omega: Ordering, p: &TriplePattern, i: u64) -> Result<Edge> {
        let out_of_range = |this: &Self| -> Result<Edge> {
            let count = this.cnt(&Request::Edg { omega, pattern: p.clone() })?;
            Err(Error::IndexOutOfRange { index: i, count })
        };
        if p.has_repeated_vars() || !self.deltas.is_empty() {
            // C1, and any overlay: iterate.
            return match self.edg(omega, p)?.nth(i as usize) {
                Some(e) => e,
                None => out_of_range(self),
            };
        }
        let order = select_ordering(p, omega)?;
        let stream = StreamId::for_ordering(order);
        let consts: Vec<TermId> = order.positions().iter().map_while(|&pos| p.constant(pos)).collect();
        let edge = |key: TermId, (a, b): Row| order.edge([key, a, b]);
        match consts[..] {
            [] => {
                // C4: walk the header to the table holding row i.
                let reader = self.base.stream(stream);
                self.stats.header();
                let mut acc = 0u64;
                for k in 0..reader.len() {
                    let e = reader.entry(k)?;
                    if i < acc + e.n {
                        let view = self.base.view(stream, &e, true)?;
                        return Ok(edge(e.key, view.row((i - acc) as usize)));
                    }
                    acc += e.n;
                }
                Err(Error::IndexOutOfRange { index: i, count: acc })
            }
            [key] => {
                // C2: one table, random access where the layout allows it.
                match self.base.table(stream, key)? {
                    Some(view) if (i as usize) < view.len() => Ok(edge(key, view.row(i as usize))),
                    Some(view) => Err(Error::IndexOutOfRange { index: i, count: view.len() as u64 }),
                    None => Err(Error::IndexOutOfRange { index: i, count: 0 }),
                }
            }
            [key, second, ..] => {
                // C3: locate the interval, then step to row i.
                let third = consts.get(2).copied();
                let Some(view) = self.base.table(stream, key)? else {
                    return Err(Error::IndexOutOfRange { index: i, count: 0 });
                };
                let range = view.search_first(second).unwrap_or(0..0);
                match third {
                    None if (i as usize) < range.len() => Ok(edge(key, view.row(range.start + i as usize))),
                    None => Err(Error::IndexOutOfRange { index: i, count: range.len() as u64 }),
                    Some(t) => {
                        let hit = view.iter_range(range).any(|(_, b)| b == t);
                        if hit && i == 0 {
                            Ok(edge(key, (second, t)))
                        } else {
                            Err(Error::IndexOutOfRange { index: i, count: hit as u64 })
                        }
                    }
                }
            }
        }
    }
}

enum GrpFast {
    One(Option<GroupedRow>),
    Header(StreamId),
}

fn check_group_ordering(omega: PartialOrdering) -> Result<()> {
    if omega.is_empty() || omega.len() > 2 {
        return Err(Error::InvalidRequest(format!("grouping ordering {omega:?} must have one or two positions")));
    }
    Ok(())
}

fn count<T>(it: impl Iterator<Item = Result<T>>) -> Result<u64> {
    let mut n = 0;
    for x in it {
        x?;
        n += 1;
    }
    Ok(n)
}
