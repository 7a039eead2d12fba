//! The six permutation byte streams.
//!
//! A stream is the concatenation of the binary tables of one projection
//! family, ascending by their key term, behind a header that lists every
//! table. See `FORMAT.md` for the bit-exact layout:
//!
//! ```text
//! preamble  magic "KGSTRM01", stream:u8, version:u8, pad:[u8;6],
//!           entries:u64, data_len:u64                          (32 bytes)
//! header    entries x (key:u40 offset:u48 n:u40 desc:u8 flags:u8)
//! data      encoded tables, offsets relative to the data start
//! footer    header_len:u64, magic "KGSTREND"                    (16 bytes)
//! ```

use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memmap2::Mmap;

use crate::bytes::{get_uint, put_uint};
use crate::error::{Error, Result};
use crate::io::{create_file, map_file, GatedReader, GatedWriter, IoGate};
use crate::layout::{
    self, select_layout, sizeof, LayoutDescriptor, LayoutKind, LayoutParams, Row, TableReader, RUN_COUNT_WIDTH,
    RUN_END_WIDTH,
};
use crate::model::{Ordering, Pos, TermId};

const MAGIC: &[u8; 8] = b"KGSTRM01";
const END_MAGIC: &[u8; 8] = b"KGSTREND";
const VERSION: u8 = 1;
pub const PREAMBLE_LEN: usize = 32;
pub const ENTRY_LEN: usize = 18;
pub const FOOTER_LEN: usize = 16;
/// Offset stored for tables that are not materialized.
pub const ABSENT_OFFSET: u64 = (1 << 48) - 1;

pub const FLAG_PRUNED: u8 = 1;
pub const FLAG_AGGREGATED: u8 = 2;

/// Default pruning threshold for on-the-fly reconstruction.
pub const DEFAULT_ETA: u64 = 20;

/// Size of one aggregate reference: tag, stream, offset:u48, length:u40.
const AGGR_REF_LEN: usize = 1 + 1 + 6 + 5;
const TAG_PLAIN: u8 = 0;
const TAG_REF: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamId {
    Ts,
    Tsp,
    Tr,
    Trp,
    Td,
    Tdp,
}

impl StreamId {
    pub const ALL: [StreamId; 6] =
        [StreamId::Ts, StreamId::Tsp, StreamId::Tr, StreamId::Trp, StreamId::Td, StreamId::Tdp];

    pub fn ordering(self) -> Ordering {
        match self {
            StreamId::Ts => Ordering::Srd,
            StreamId::Tsp => Ordering::Sdr,
            StreamId::Tr => Ordering::Rsd,
            StreamId::Trp => Ordering::Rds,
            StreamId::Td => Ordering::Drs,
            StreamId::Tdp => Ordering::Dsr,
        }
    }

    pub fn for_ordering(o: Ordering) -> StreamId {
        match o {
            Ordering::Srd => StreamId::Ts,
            Ordering::Sdr => StreamId::Tsp,
            Ordering::Rsd => StreamId::Tr,
            Ordering::Rds => StreamId::Trp,
            Ordering::Drs => StreamId::Td,
            Ordering::Dsr => StreamId::Tdp,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<StreamId> {
        StreamId::ALL.get(i as usize).copied()
    }

    pub fn file_name(self) -> &'static str {
        match self {
            StreamId::Ts => "ts.bin",
            StreamId::Tsp => "tsp.bin",
            StreamId::Tr => "tr.bin",
            StreamId::Trp => "trp.bin",
            StreamId::Td => "td.bin",
            StreamId::Tdp => "tdp.bin",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamId::Ts => "TS",
            StreamId::Tsp => "TSp",
            StreamId::Tr => "TR",
            StreamId::Trp => "TRp",
            StreamId::Td => "TD",
            StreamId::Tdp => "TDp",
        }
    }

    pub fn is_primed(self) -> bool {
        matches!(self, StreamId::Tsp | StreamId::Trp | StreamId::Tdp)
    }

    /// The stream sharing this stream's key position with swapped columns.
    pub fn counterpart(self) -> StreamId {
        match self {
            StreamId::Ts => StreamId::Tsp,
            StreamId::Tsp => StreamId::Ts,
            StreamId::Tr => StreamId::Trp,
            StreamId::Trp => StreamId::Tr,
            StreamId::Td => StreamId::Tdp,
            StreamId::Tdp => StreamId::Td,
        }
    }

    /// Edge field the tables are keyed by.
    pub fn key_pos(self) -> Pos {
        self.ordering().positions()[0]
    }
}

impl std::fmt::Display for StreamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One header entry: where a table is and how to parse it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderEntry {
    pub key: TermId,
    pub offset: u64,
    pub n: u64,
    pub desc: LayoutDescriptor,
    pub flags: u8,
}

impl HeaderEntry {
    pub fn pruned(&self) -> bool {
        self.flags & FLAG_PRUNED != 0
    }

    pub fn aggregated(&self) -> bool {
        self.flags & FLAG_AGGREGATED != 0
    }

    pub fn materialized(&self) -> bool {
        !self.pruned()
    }

    fn write(&self, out: &mut Vec<u8>) {
        put_uint(out, self.key.get(), 5);
        put_uint(out, self.offset, 6);
        put_uint(out, self.n, 5);
        out.push(self.desc.to_byte());
        out.push(self.flags);
    }

    fn read(b: &[u8]) -> Result<HeaderEntry> {
        Ok(HeaderEntry {
            key: TermId::from_raw(get_uint(b, 5)),
            offset: get_uint(&b[5..], 6),
            n: get_uint(&b[11..], 5),
            desc: LayoutDescriptor::from_byte(b[16])?,
            flags: b[17],
        })
    }
}

/// Knobs of stream construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub layout: LayoutParams,
    /// Prune primed tables with fewer rows than this; `None` disables pruning.
    pub ofr_eta: Option<u64>,
    pub aggregate: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { layout: LayoutParams::default(), ofr_eta: Some(DEFAULT_ETA), aggregate: true }
    }
}

/// Counts describing a finished stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub tables: u64,
    pub rows: u64,
    pub row_tables: u64,
    pub column_tables: u64,
    pub cluster_tables: u64,
    pub pruned: u64,
    pub aggregated: u64,
    pub aggregate_refs: u64,
    pub bytes: u64,
}

/// Writes one stream from its edges, supplied in the stream's ordering.
pub struct StreamBuilder<'a> {
    id: StreamId,
    opts: BuildOptions,
    /// Unprimed counterpart, consulted for the descriptor of pruned tables.
    counterpart: Option<&'a StreamReader>,
    /// The `TD` stream, target of aggregate references from `TRp`.
    aggr_target: Option<&'a StreamReader>,
    gate: Arc<IoGate>,
    data_path: PathBuf,
    spill_path: PathBuf,
    data: GatedWriter<File>,
    entries: Vec<HeaderEntry>,
    cur: Option<TermId>,
    rows: Vec<Row>,
    spill: Option<Spill>,
    last: Option<[TermId; 3]>,
    summary: StreamSummary,
    scratch: Vec<u8>,
}

struct Spill {
    out: GatedWriter<File>,
    n: u64,
    runs: Vec<(u64, u64)>,
}

impl<'a> StreamBuilder<'a> {
    pub fn new(
        id: StreamId,
        opts: BuildOptions,
        tmp_dir: &Path,
        gate: Arc<IoGate>,
        counterpart: Option<&'a StreamReader>,
        aggr_target: Option<&'a StreamReader>,
    ) -> Result<Self> {
        if id.is_primed() && opts.ofr_eta.is_some() && counterpart.is_none() {
            return Err(Error::InvalidRequest(format!("{id}: pruning needs the counterpart stream")));
        }
        let data_path = tmp_dir.join(format!("{}.data.tmp", id.file_name()));
        let spill_path = tmp_dir.join(format!("{}.spill.tmp", id.file_name()));
        let data = GatedWriter::new(create_file(&data_path)?, gate.clone());
        Ok(StreamBuilder {
            id,
            opts,
            counterpart,
            aggr_target: if id == StreamId::Trp && opts.aggregate { aggr_target } else { None },
            gate,
            data_path,
            spill_path,
            data,
            entries: Vec::new(),
            cur: None,
            rows: Vec::new(),
            spill: None,
            last: None,
            summary: StreamSummary::default(),
            scratch: Vec::new(),
        })
    }

    /// Adds one edge given as a key triple in the stream's ordering. Triples
    /// must be strictly ascending.
    pub fn push(&mut self, t: [TermId; 3]) -> Result<()> {
        if let Some(last) = self.last {
            if t <= last {
                return Err(Error::Unsorted(format!(
                    "{}: {:?} after {:?}",
                    self.id,
                    t.map(TermId::get),
                    last.map(TermId::get)
                )));
            }
        }
        self.last = Some(t);
        if self.cur != Some(t[0]) {
            self.flush_table()?;
            self.cur = Some(t[0]);
        }
        let row = (t[1], t[2]);
        if let Some(sp) = &mut self.spill {
            sp.push(row)?;
        } else if self.rows.len() as u64 >= self.opts.layout.tau {
            let mut sp = Spill {
                out: GatedWriter::new(create_file(&self.spill_path)?, self.gate.clone()),
                n: 0,
                runs: Vec::new(),
            };
            for r in self.rows.drain(..) {
                sp.push(r)?;
            }
            sp.push(row)?;
            self.spill = Some(sp);
        } else {
            self.rows.push(row);
        }
        Ok(())
    }

    fn flush_table(&mut self) -> Result<()> {
        let Some(key) = self.cur.take() else { return Ok(()) };
        let offset = self.data.position();
        if let Some(sp) = self.spill.take() {
            let n = sp.n;
            self.write_spilled(sp)?;
            self.record(HeaderEntry { key, offset, n, desc: LayoutDescriptor::column(5, 5), flags: 0 });
            return Ok(());
        }
        let rows = std::mem::take(&mut self.rows);
        let n = rows.len() as u64;
        if self.id.is_primed() && self.opts.ofr_eta.is_some_and(|eta| n < eta) {
            let cp = self.counterpart.expect("checked in new");
            let (_, entry) = cp
                .find(key)?
                .ok_or_else(|| Error::corrupt(format!("{}: counterpart of pruned table {key} missing", self.id)))?;
            if entry.n != n {
                return Err(Error::corrupt(format!("{}: counterpart size mismatch for {key}", self.id)));
            }
            self.record(HeaderEntry { key, offset: ABSENT_OFFSET, n, desc: entry.desc, flags: FLAG_PRUNED });
            self.rows = rows;
            self.rows.clear();
            return Ok(());
        }
        let desc = select_layout(&rows, self.opts.layout)?;
        self.scratch.clear();
        layout::encode(&rows, desc, &mut self.scratch)?;
        let mut flags = 0;
        let mut out_desc = desc;
        if let Some(target) = self.aggr_target {
            if let Some((adesc, bytes, refs)) = aggregate_table(key, &rows, target)? {
                if bytes.len() < self.scratch.len() {
                    self.scratch = bytes;
                    out_desc = adesc;
                    flags = FLAG_AGGREGATED;
                    self.summary.aggregated += 1;
                    self.summary.aggregate_refs += refs;
                }
            }
        }
        self.data.write_all(&self.scratch)?;
        self.record(HeaderEntry { key, offset, n, desc: out_desc, flags });
        self.rows = rows;
        self.rows.clear();
        Ok(())
    }

    fn record(&mut self, e: HeaderEntry) {
        self.summary.tables += 1;
        self.summary.rows += e.n;
        if e.pruned() {
            self.summary.pruned += 1;
        } else {
            match e.desc.kind {
                LayoutKind::Row => self.summary.row_tables += 1,
                LayoutKind::Column => self.summary.column_tables += 1,
                LayoutKind::Cluster => self.summary.cluster_tables += 1,
            }
        }
        self.entries.push(e);
    }

    /// Encodes a spilled table as COLUMN(5,5) from the spill file.
    fn write_spilled(&mut self, sp: Spill) -> Result<()> {
        if sp.n > u32::MAX as u64 {
            return Err(Error::InvalidRequest(format!("table of {} rows is too large", sp.n)));
        }
        let Spill { out, runs, n } = sp;
        drop(out.into_inner()?);
        let mut head = Vec::with_capacity(RUN_COUNT_WIDTH + runs.len() * (5 + RUN_END_WIDTH));
        put_uint(&mut head, runs.len() as u64, RUN_COUNT_WIDTH);
        for (v, end) in &runs {
            put_uint(&mut head, *v, 5);
            put_uint(&mut head, *end, RUN_END_WIDTH);
        }
        self.data.write_all(&head)?;
        let file = File::open(&self.spill_path).map_err(Error::io_at(&self.spill_path))?;
        let mut input = BufReader::with_capacity(1 << 20, GatedReader::new(file, self.gate.clone()));
        let mut rec = [0u8; 10];
        for _ in 0..n {
            input.read_exact(&mut rec)?;
            self.data.write_all(&rec[5..])?;
        }
        fs::remove_file(&self.spill_path).map_err(Error::io_at(&self.spill_path))?;
        Ok(())
    }

    /// Completes the stream and writes it to `path`.
    pub fn finish(mut self, path: &Path) -> Result<StreamSummary> {
        self.flush_table()?;
        let StreamBuilder { id, gate, data_path, data, entries, mut summary, .. } = self;
        let data_len = data.position();
        drop(data.into_inner()?);
        let mut header = Vec::with_capacity(PREAMBLE_LEN + entries.len() * ENTRY_LEN);
        header.extend_from_slice(MAGIC);
        header.push(id.index() as u8);
        header.push(VERSION);
        header.extend_from_slice(&[0; 6]);
        put_uint(&mut header, entries.len() as u64, 8);
        put_uint(&mut header, data_len, 8);
        for e in &entries {
            e.write(&mut header);
        }
        let header_len = header.len() as u64;
        let mut out = GatedWriter::new(create_file(path)?, gate.clone());
        out.write_all(&header)?;
        let file = File::open(&data_path).map_err(Error::io_at(&data_path))?;
        let mut input = BufReader::with_capacity(1 << 20, GatedReader::new(file, gate));
        let copied = std::io::copy(&mut input, &mut out)?;
        if copied != data_len {
            return Err(Error::corrupt(format!("{id}: data copy truncated")));
        }
        let mut footer = Vec::with_capacity(FOOTER_LEN);
        put_uint(&mut footer, header_len, 8);
        footer.extend_from_slice(END_MAGIC);
        out.write_all(&footer)?;
        let f = out.into_inner()?;
        f.sync_all().map_err(Error::io_at(path))?;
        fs::remove_file(&data_path).map_err(Error::io_at(&data_path))?;
        summary.bytes = header_len + data_len + FOOTER_LEN as u64;
        Ok(summary)
    }
}

impl Spill {
    fn push(&mut self, (a, b): Row) -> Result<()> {
        let mut rec = [0u8; 10];
        rec[..5].copy_from_slice(&a.get().to_le_bytes()[..5]);
        rec[5..].copy_from_slice(&b.get().to_le_bytes()[..5]);
        self.out.write_all(&rec)?;
        match self.runs.last_mut() {
            Some((v, end)) if *v == a.get() => *end += 1,
            _ => self.runs.push((a.get(), self.n + 1)),
        }
        self.n += 1;
        Ok(())
    }
}

/// Tries the aggregated encoding of a `TRp` table keyed by relation `rel`.
/// Rows are `(destination, source)`. Returns the descriptor, bytes and the
/// number of partitions stored as references.
fn aggregate_table(
    rel: TermId,
    rows: &[Row],
    target: &StreamReader,
) -> Result<Option<(LayoutDescriptor, Vec<u8>, u64)>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let m1 = rows.last().map(|r| r.0.get()).unwrap_or(0);
    let m2 = rows.iter().map(|r| r.1.get()).max().unwrap_or(0);
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].0 != rows[start].0 {
            groups.push(start..i);
            start = i;
        }
    }
    let m3 = groups.iter().map(|g| g.len() as u64).max().unwrap_or(1);
    let (w1, w2, w3) = (sizeof(m1)?, sizeof(m2)?, sizeof(m3)?);
    let desc = LayoutDescriptor::cluster(w1, w2, w3);
    let mut out = Vec::new();
    let mut refs = 0;
    let mut plain = Vec::new();
    for g in groups {
        let d = rows[g.start].0;
        let count = g.len();
        put_uint(&mut out, d.get(), w1 as usize);
        put_uint(&mut out, count as u64, w3 as usize);
        plain.clear();
        for r in &rows[g.clone()] {
            put_uint(&mut plain, r.1.get(), w2 as usize);
        }
        let mut linked = false;
        if plain.len() > AGGR_REF_LEN - 1 {
            if let Some((_, e)) = target.find(d)? {
                if e.materialized() && !e.aggregated() {
                    let table = TableReader::open(target.table_bytes(&e)?, e.desc, e.n as usize)?;
                    if let Some((span, tw2)) = table.second_values_span(rel) {
                        if tw2 == w2 && table.bytes()[span.clone()] == plain[..] {
                            out.push(TAG_REF);
                            out.push(StreamId::Td.index() as u8);
                            put_uint(&mut out, e.offset + span.start as u64, 6);
                            put_uint(&mut out, plain.len() as u64, 5);
                            refs += 1;
                            linked = true;
                        }
                    }
                }
            }
        }
        if !linked {
            out.push(TAG_PLAIN);
            out.extend_from_slice(&plain);
        }
    }
    if refs == 0 {
        return Ok(None);
    }
    Ok(Some((desc, out, refs)))
}

/// Decodes an aggregated table. `deref` returns the data section of the
/// stream a reference points into.
pub fn decode_aggregated<'b>(
    bytes: &[u8],
    e: &HeaderEntry,
    deref: impl Fn(StreamId) -> Result<&'b [u8]>,
) -> Result<Vec<Row>> {
    let (w1, w2, w3) = (e.desc.w1 as usize, e.desc.w2 as usize, e.desc.w3 as usize);
    let n = e.n as usize;
    let mut rows = Vec::with_capacity(n);
    let mut off = 0;
    let short = || Error::Truncated("aggregated table".into());
    while rows.len() < n {
        let head = bytes.get(off..off + w1 + w3 + 1).ok_or_else(short)?;
        let key = TermId::from_raw(get_uint(head, w1));
        let count = get_uint(&head[w1..], w3) as usize;
        let tag = head[w1 + w3];
        off += w1 + w3 + 1;
        if count == 0 || rows.len() + count > n {
            return Err(Error::corrupt("aggregated partition size"));
        }
        let values: &[u8] = match tag {
            TAG_PLAIN => {
                let v = bytes.get(off..off + count * w2).ok_or_else(short)?;
                off += count * w2;
                v
            }
            TAG_REF => {
                let r = bytes.get(off..off + AGGR_REF_LEN - 1).ok_or_else(short)?;
                off += AGGR_REF_LEN - 1;
                let stream = StreamId::from_index(r[0])
                    .ok_or_else(|| Error::corrupt("aggregate reference to unknown stream"))?;
                let at = get_uint(&r[1..], 6) as usize;
                let len = get_uint(&r[7..], 5) as usize;
                if len != count * w2 {
                    return Err(Error::corrupt("aggregate reference length"));
                }
                deref(stream)?.get(at..at + len).ok_or_else(|| Error::corrupt("referenced range missing"))?
            }
            t => return Err(Error::corrupt(format!("unknown aggregate tag {t}"))),
        };
        for c in values.chunks_exact(w2) {
            rows.push((key, TermId::from_raw(get_uint(c, w2))));
        }
    }
    Ok(rows)
}

/// Memory-mapped, read-only stream file.
pub struct StreamReader {
    id: StreamId,
    map: Option<Mmap>,
    entries: usize,
    data_start: usize,
    data_len: usize,
}

impl std::fmt::Debug for StreamReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamReader").field("id", &self.id).field("entries", &self.entries).finish()
    }
}

impl StreamReader {
    pub fn open(path: &Path, id: StreamId) -> Result<StreamReader> {
        let map = map_file(path)?;
        let bad = |m: &str| Error::corrupt(format!("{}: {m}", path.display()));
        if map.len() < PREAMBLE_LEN + FOOTER_LEN || &map[..8] != MAGIC {
            return Err(bad("not a stream file"));
        }
        if map[8] != id.index() as u8 {
            return Err(bad("stream id mismatch"));
        }
        if map[9] != VERSION {
            return Err(bad("unsupported stream version"));
        }
        let entries = get_uint(&map[16..], 8) as usize;
        let data_len = get_uint(&map[24..], 8) as usize;
        let footer = &map[map.len() - FOOTER_LEN..];
        let header_len = get_uint(footer, 8) as usize;
        if &footer[8..] != END_MAGIC
            || header_len != PREAMBLE_LEN + entries * ENTRY_LEN
            || header_len + data_len + FOOTER_LEN != map.len()
        {
            return Err(bad("inconsistent header, data and footer sizes"));
        }
        Ok(StreamReader { id, map: Some(map), entries, data_start: header_len, data_len })
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    fn bytes(&self) -> &[u8] {
        self.map.as_deref().unwrap_or(&[])
    }

    pub fn entry(&self, i: usize) -> Result<HeaderEntry> {
        if i >= self.entries {
            return Err(Error::IndexOutOfRange { index: i as u64, count: self.entries as u64 });
        }
        let at = PREAMBLE_LEN + i * ENTRY_LEN;
        HeaderEntry::read(&self.bytes()[at..at + ENTRY_LEN])
    }

    fn key_at(&self, i: usize) -> TermId {
        let at = PREAMBLE_LEN + i * ENTRY_LEN;
        TermId::from_raw(get_uint(&self.bytes()[at..], 5))
    }

    /// Binary search of the header.
    pub fn find(&self, key: TermId) -> Result<Option<(usize, HeaderEntry)>> {
        let (mut lo, mut hi) = (0, self.entries);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.key_at(mid).cmp(&key) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Ok(Some((mid, self.entry(mid)?))),
            }
        }
        Ok(None)
    }

    /// First header position whose key is `>= key`.
    pub fn lower_bound(&self, key: TermId) -> usize {
        let (mut lo, mut hi) = (0, self.entries);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.key_at(mid) < key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn entries(&self) -> impl Iterator<Item = Result<HeaderEntry>> + '_ {
        (0..self.entries).map(|i| self.entry(i))
    }

    /// The data section.
    pub fn data(&self) -> &[u8] {
        &self.bytes()[self.data_start..self.data_start + self.data_len]
    }

    /// Bytes from a materialized table's start to the end of the data.
    pub fn table_bytes(&self, e: &HeaderEntry) -> Result<&[u8]> {
        if e.pruned() {
            return Err(Error::InvalidRequest(format!("{}: table {} is pruned", self.id, e.key)));
        }
        self.data()
            .get(e.offset as usize..)
            .ok_or_else(|| Error::corrupt(format!("{}: table offset out of range", self.id)))
    }

    pub fn file_len(&self) -> u64 {
        self.bytes().len() as u64
    }

    /// Bytes used by the header, preamble and footer included.
    pub fn header_len(&self) -> u64 {
        (self.data_start + FOOTER_LEN) as u64
    }
}
