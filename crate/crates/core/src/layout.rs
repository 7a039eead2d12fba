//! Physical layouts for binary tables and the per-table layout choice.
//!
//! A binary table is a sorted, duplicate-free list of `(first, second)` pairs.
//! It is serialized in one of three layouts:
//!
//! * `ROW`: `n` fixed-width records `first:w1 second:w2`.
//! * `COLUMN`: `run_count:u32`, then `run_count` runs `value:w1 end:u32` (the
//!   exclusive row index where the run of equal first values stops), then the
//!   second column as `n` values of `w2` bytes.
//! * `CLUSTER`: per distinct first value, ascending, `first:w1 count:w3` then
//!   `count` second values of `w2` bytes.
//!
//! All integers are little-endian. The descriptor packs into one byte, see
//! [`LayoutDescriptor::to_byte`].

use std::ops::Range;

use crate::bytes::{get_uint, put_uint, read_u32};
use crate::error::{Error, Result};
use crate::model::{TermId, TERM_ID_LIMIT};

pub type Row = (TermId, TermId);

/// Bytes used by a COLUMN run's end field.
pub const RUN_END_WIDTH: usize = 4;
/// Bytes used by the COLUMN run-count prefix.
pub const RUN_COUNT_WIDTH: usize = 4;

pub const DEFAULT_TAU: u64 = 1_000_000;
pub const DEFAULT_UPSILON: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayoutKind {
    Row,
    Column,
    Cluster,
}

impl LayoutKind {
    pub fn name(self) -> &'static str {
        match self {
            LayoutKind::Row => "ROW",
            LayoutKind::Column => "COLUMN",
            LayoutKind::Cluster => "CLUSTER",
        }
    }
}

/// Chosen layout plus the byte widths of the first field, second field and
/// (CLUSTER only) group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayoutDescriptor {
    pub kind: LayoutKind,
    pub w1: u8,
    pub w2: u8,
    pub w3: u8,
}

impl LayoutDescriptor {
    pub fn new(kind: LayoutKind, w1: u8, w2: u8, w3: u8) -> Result<Self> {
        let ok_w = |w: u8| (1..=5).contains(&w);
        let ok = ok_w(w1)
            && ok_w(w2)
            && match kind {
                LayoutKind::Cluster => ok_w(w3),
                _ => w3 == 0,
            };
        if !ok {
            return Err(Error::corrupt(format!("invalid descriptor {kind:?}({w1},{w2},{w3})")));
        }
        Ok(LayoutDescriptor { kind, w1, w2, w3 })
    }

    pub const fn row(w1: u8, w2: u8) -> Self {
        LayoutDescriptor { kind: LayoutKind::Row, w1, w2, w3: 0 }
    }

    pub const fn column(w1: u8, w2: u8) -> Self {
        LayoutDescriptor { kind: LayoutKind::Column, w1, w2, w3: 0 }
    }

    pub const fn cluster(w1: u8, w2: u8, w3: u8) -> Self {
        LayoutDescriptor { kind: LayoutKind::Cluster, w1, w2, w3 }
    }

    /// Packs the descriptor into a single byte:
    /// ROW `0..25`, COLUMN `25..50`, CLUSTER `50..175`.
    pub fn to_byte(self) -> u8 {
        let (a, b, c) = (self.w1 - 1, self.w2 - 1, self.w3.saturating_sub(1));
        match self.kind {
            LayoutKind::Row => a * 5 + b,
            LayoutKind::Column => 25 + a * 5 + b,
            LayoutKind::Cluster => 50 + a * 25 + b * 5 + c,
        }
    }

    pub fn from_byte(v: u8) -> Result<Self> {
        match v {
            0..=24 => Ok(Self::row(v / 5 + 1, v % 5 + 1)),
            25..=49 => Ok(Self::column((v - 25) / 5 + 1, (v - 25) % 5 + 1)),
            50..=174 => {
                let x = v - 50;
                Ok(Self::cluster(x / 25 + 1, (x / 5) % 5 + 1, x % 5 + 1))
            }
            _ => Err(Error::corrupt(format!("invalid descriptor byte {v}"))),
        }
    }

    /// Whether a row can be located by arithmetic instead of a scan.
    pub fn random_access(self) -> bool {
        !matches!(self.kind, LayoutKind::Cluster)
    }
}

/// Thresholds for the layout choice: tables with more than `tau` rows or
/// more than `upsilon` distinct first values are stored as COLUMN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutParams {
    pub tau: u64,
    pub upsilon: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams { tau: DEFAULT_TAU, upsilon: DEFAULT_UPSILON }
    }
}

/// Minimal number of bytes, between one and five, that can hold `v`.
pub fn sizeof(v: u64) -> Result<u8> {
    if v >= TERM_ID_LIMIT {
        return Err(Error::ValueTooLarge(v));
    }
    let mut k = 1u8;
    while k < 5 && v >= 1u64 << (8 * k as u32) {
        k += 1;
    }
    Ok(k)
}

/// Chooses the layout for a sorted, nonempty table.
pub fn select_layout(rows: &[Row], params: LayoutParams) -> Result<LayoutDescriptor> {
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = rows.len() as u64;
    if n > params.tau {
        return Ok(LayoutDescriptor::column(5, 5));
    }
    // One pass over the sorted rows gives |U| and m1, m2, m3.
    let mut groups = 0u64;
    let (mut m1, mut m2, mut m3) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < rows.len() {
        let first = rows[i].0;
        let mut j = i;
        while j < rows.len() && rows[j].0 == first {
            m2 = m2.max(rows[j].1.get());
            j += 1;
        }
        groups += 1;
        if groups > params.upsilon {
            return Ok(LayoutDescriptor::column(5, 5));
        }
        m1 = m1.max(first.get());
        m3 = m3.max((j - i) as u64);
        i = j;
    }
    let (s1, s2, s3) = (sizeof(m1)?, sizeof(m2)?, sizeof(m3)?);
    let t_c = groups * (s1 as u64 + s3 as u64) + n * s2 as u64;
    let t_r = n * (s1 as u64 + s2 as u64);
    if t_r <= t_c {
        Ok(LayoutDescriptor::row(s1, s2))
    } else {
        Ok(LayoutDescriptor::cluster(s1, s2, s3))
    }
}

fn check_width(v: u64, w: u8) -> Result<()> {
    if w < 8 && v >= 1u64 << (8 * w as u32) {
        return Err(Error::WidthOverflow { value: v, width: w });
    }
    Ok(())
}

/// Serializes `rows` under `desc`, appending to `out`.
pub fn encode(rows: &[Row], desc: LayoutDescriptor, out: &mut Vec<u8>) -> Result<()> {
    debug_assert!(rows.windows(2).all(|w| w[0] < w[1]), "table rows must be sorted and unique");
    let (w1, w2, w3) = (desc.w1 as usize, desc.w2 as usize, desc.w3 as usize);
    for &(a, b) in rows {
        check_width(a.get(), desc.w1)?;
        check_width(b.get(), desc.w2)?;
    }
    match desc.kind {
        LayoutKind::Row => {
            out.reserve(rows.len() * (w1 + w2));
            for &(a, b) in rows {
                put_uint(out, a.get(), w1);
                put_uint(out, b.get(), w2);
            }
        }
        LayoutKind::Column => {
            if rows.len() as u64 > u32::MAX as u64 {
                return Err(Error::InvalidRequest("COLUMN table exceeds 2^32 rows".into()));
            }
            let runs = group_bounds(rows);
            put_uint(out, runs.len() as u64, RUN_COUNT_WIDTH);
            for r in &runs {
                put_uint(out, rows[r.start].0.get(), w1);
                put_uint(out, r.end as u64, RUN_END_WIDTH);
            }
            for &(_, b) in rows {
                put_uint(out, b.get(), w2);
            }
        }
        LayoutKind::Cluster => {
            for g in group_bounds(rows) {
                let count = g.len() as u64;
                check_width(count, desc.w3)?;
                put_uint(out, rows[g.start].0.get(), w1);
                put_uint(out, count, w3);
                for &(_, b) in &rows[g] {
                    put_uint(out, b.get(), w2);
                }
            }
        }
    }
    Ok(())
}

/// Convenience wrapper around [`encode`].
pub fn encode_to_vec(rows: &[Row], desc: LayoutDescriptor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode(rows, desc, &mut out)?;
    Ok(out)
}

/// Row ranges sharing the same first value.
fn group_bounds(rows: &[Row]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        while j < rows.len() && rows[j].0 == rows[i].0 {
            j += 1;
        }
        out.push(i..j);
        i = j;
    }
    out
}

/// Encoded size of `rows` under `desc`, without encoding.
pub fn encoded_len(rows: &[Row], desc: LayoutDescriptor) -> usize {
    let n = rows.len();
    let (w1, w2, w3) = (desc.w1 as usize, desc.w2 as usize, desc.w3 as usize);
    match desc.kind {
        LayoutKind::Row => n * (w1 + w2),
        LayoutKind::Column => RUN_COUNT_WIDTH + group_bounds(rows).len() * (w1 + RUN_END_WIDTH) + n * w2,
        LayoutKind::Cluster => group_bounds(rows).len() * (w1 + w3) + n * w2,
    }
}

/// Fully validating decode of a table of `n` rows at the start of `bytes`.
pub fn decode_scan(bytes: &[u8], desc: LayoutDescriptor, n: usize) -> Result<Vec<Row>> {
    let reader = TableReader::open(bytes, desc, n)?;
    if let LayoutKind::Column = desc.kind {
        // The fast reader only checks sizes; validate the runs themselves.
        let mut prev_end = 0usize;
        let mut prev_value = None;
        for k in 0..reader.run_count {
            let (value, end) = reader.run(k);
            if end <= prev_end || end > n || prev_value.is_some_and(|p| p >= value) {
                return Err(Error::corrupt(format!("corrupt run {k}: end {end}, value {value}")));
            }
            prev_end = end;
            prev_value = Some(value);
        }
        if prev_end != n {
            return Err(Error::corrupt(format!("runs cover {prev_end} of {n} rows")));
        }
    }
    Ok(reader.iter().collect())
}

/// Row interval whose first field equals `key`, on an encoded table.
pub fn search_first(bytes: &[u8], desc: LayoutDescriptor, n: usize, key: TermId) -> Result<Option<Range<usize>>> {
    Ok(TableReader::open(bytes, desc, n)?.search_first(key))
}

/// Read access to one encoded table. Construction checks that the table fits
/// in the buffer; accessors afterwards are infallible.
#[derive(Debug, Clone, Copy)]
pub struct TableReader<'a> {
    bytes: &'a [u8],
    desc: LayoutDescriptor,
    n: usize,
    run_count: usize,
    groups: usize,
}

impl<'a> TableReader<'a> {
    /// `bytes` starts at the table and may extend past its end.
    pub fn open(bytes: &'a [u8], desc: LayoutDescriptor, n: usize) -> Result<Self> {
        let (w1, w2, w3) = (desc.w1 as usize, desc.w2 as usize, desc.w3 as usize);
        let truncated = |need: usize| {
            Error::Truncated(format!("{} table of {n} rows needs {need} bytes, have {}", desc.kind.name(), bytes.len()))
        };
        let mut run_count = 0;
        let mut groups = 0;
        let len = match desc.kind {
            LayoutKind::Row => n * (w1 + w2),
            LayoutKind::Column => {
                run_count = read_u32(bytes, 0)? as usize;
                if run_count > n || (n > 0 && run_count == 0) {
                    return Err(Error::corrupt(format!("{run_count} runs for {n} rows")));
                }
                RUN_COUNT_WIDTH + run_count * (w1 + RUN_END_WIDTH) + n * w2
            }
            LayoutKind::Cluster => {
                let mut off = 0usize;
                let mut seen = 0usize;
                while seen < n {
                    if off + w1 + w3 > bytes.len() {
                        return Err(truncated(off + w1 + w3));
                    }
                    let count = get_uint(&bytes[off + w1..], w3) as usize;
                    if count == 0 || seen + count > n {
                        return Err(Error::corrupt(format!("corrupt group size {count} at offset {off}")));
                    }
                    seen += count;
                    groups += 1;
                    off += w1 + w3 + count * w2;
                }
                off
            }
        };
        if len > bytes.len() {
            return Err(truncated(len));
        }
        Ok(TableReader { bytes: &bytes[..len], desc, n, run_count, groups })
    }

    pub fn descriptor(&self) -> LayoutDescriptor {
        self.desc
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Exact encoded size of this table.
    pub fn encoded_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    /// Number of distinct first values, when the layout records it directly.
    pub fn group_count(&self) -> Option<usize> {
        match self.desc.kind {
            LayoutKind::Column => Some(self.run_count),
            LayoutKind::Cluster => Some(self.groups),
            LayoutKind::Row => None,
        }
    }

    #[inline]
    fn w(&self) -> (usize, usize, usize) {
        (self.desc.w1 as usize, self.desc.w2 as usize, self.desc.w3 as usize)
    }

    #[inline]
    fn run(&self, k: usize) -> (TermId, usize) {
        let w1 = self.desc.w1 as usize;
        let off = RUN_COUNT_WIDTH + k * (w1 + RUN_END_WIDTH);
        let value = get_uint(&self.bytes[off..], w1);
        let end = get_uint(&self.bytes[off + w1..], RUN_END_WIDTH) as usize;
        (TermId::from_raw(value), end)
    }

    #[inline]
    fn second_col(&self, i: usize) -> TermId {
        let (w1, w2, _) = self.w();
        let base = RUN_COUNT_WIDTH + self.run_count * (w1 + RUN_END_WIDTH);
        TermId::from_raw(get_uint(&self.bytes[base + i * w2..], w2))
    }

    /// Row `i`. ROW and COLUMN locate it by arithmetic and binary search;
    /// CLUSTER walks the group headers.
    pub fn row(&self, i: usize) -> Row {
        assert!(i < self.n, "row {i} out of {}", self.n);
        let (w1, w2, w3) = self.w();
        match self.desc.kind {
            LayoutKind::Row => {
                let off = i * (w1 + w2);
                (
                    TermId::from_raw(get_uint(&self.bytes[off..], w1)),
                    TermId::from_raw(get_uint(&self.bytes[off + w1..], w2)),
                )
            }
            LayoutKind::Column => {
                let k = self.run_containing(i);
                (self.run(k).0, self.second_col(i))
            }
            LayoutKind::Cluster => {
                let mut off = 0;
                let mut base = 0;
                loop {
                    let first = get_uint(&self.bytes[off..], w1);
                    let count = get_uint(&self.bytes[off + w1..], w3) as usize;
                    if i < base + count {
                        let v = get_uint(&self.bytes[off + w1 + w3 + (i - base) * w2..], w2);
                        return (TermId::from_raw(first), TermId::from_raw(v));
                    }
                    base += count;
                    off += w1 + w3 + count * w2;
                }
            }
        }
    }

    fn run_containing(&self, i: usize) -> usize {
        // First run whose end exceeds i.
        let (mut lo, mut hi) = (0, self.run_count);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.run(mid).1 <= i {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo.min(self.run_count.saturating_sub(1))
    }

    /// Rows whose first field equals `key`.
    pub fn search_first(&self, key: TermId) -> Option<Range<usize>> {
        let (w1, w2, w3) = self.w();
        match self.desc.kind {
            LayoutKind::Row => {
                let first_at = |i: usize| TermId::from_raw(get_uint(&self.bytes[i * (w1 + w2)..], w1));
                let lo = partition_point(self.n, |i| first_at(i) < key);
                let hi = lo + partition_point(self.n - lo, |i| first_at(lo + i) <= key);
                (lo < hi).then_some(lo..hi)
            }
            LayoutKind::Column => {
                let k = partition_point(self.run_count, |k| self.run(k).0 < key);
                if k < self.run_count && self.run(k).0 == key {
                    let start = if k == 0 { 0 } else { self.run(k - 1).1 };
                    Some(start..self.run(k).1)
                } else {
                    None
                }
            }
            LayoutKind::Cluster => {
                let mut off = 0;
                let mut base = 0;
                while base < self.n {
                    let first = TermId::from_raw(get_uint(&self.bytes[off..], w1));
                    let count = get_uint(&self.bytes[off + w1..], w3) as usize;
                    if first == key {
                        return Some(base..base + count);
                    }
                    if first > key {
                        return None;
                    }
                    base += count;
                    off += w1 + w3 + count * w2;
                }
                None
            }
        }
    }

    /// Byte range (relative to the table start) holding the second values of
    /// the rows whose first field equals `key`, when they are stored
    /// contiguously (CLUSTER and COLUMN layouts).
    pub fn second_values_span(&self, key: TermId) -> Option<(Range<usize>, u8)> {
        let (w1, w2, w3) = self.w();
        match self.desc.kind {
            LayoutKind::Row => None,
            LayoutKind::Column => {
                let r = self.search_first(key)?;
                let base = RUN_COUNT_WIDTH + self.run_count * (w1 + RUN_END_WIDTH);
                Some((base + r.start * w2..base + r.end * w2, self.desc.w2))
            }
            LayoutKind::Cluster => {
                let mut off = 0;
                let mut base = 0;
                while base < self.n {
                    let first = TermId::from_raw(get_uint(&self.bytes[off..], w1));
                    let count = get_uint(&self.bytes[off + w1..], w3) as usize;
                    let start = off + w1 + w3;
                    if first == key {
                        return Some((start..start + count * w2, self.desc.w2));
                    }
                    if first > key {
                        return None;
                    }
                    base += count;
                    off = start + count * w2;
                }
                None
            }
        }
    }

    pub fn iter(&self) -> TableIter<'a> {
        self.iter_range(0..self.n)
    }

    /// Iterates rows `range.start..range.end`.
    pub fn iter_range(&self, range: Range<usize>) -> TableIter<'a> {
        let end = range.end.min(self.n);
        let start = range.start.min(end);
        let mut it = TableIter { reader: *self, next: start, end, cursor: 0, group_left: 0, group_first: 0 };
        match self.desc.kind {
            LayoutKind::Row => {}
            LayoutKind::Column => {
                if start < end {
                    it.cursor = self.run_containing(start);
                }
            }
            LayoutKind::Cluster => {
                // Position the cursor inside the group holding `start`.
                let (w1, w2, w3) = self.w();
                let mut off = 0;
                let mut base = 0;
                while base < self.n {
                    let first = get_uint(&self.bytes[off..], w1);
                    let count = get_uint(&self.bytes[off + w1..], w3) as usize;
                    if start < base + count {
                        let skip = start - base;
                        it.group_first = first;
                        it.group_left = count - skip;
                        it.cursor = off + w1 + w3 + skip * w2;
                        break;
                    }
                    base += count;
                    off += w1 + w3 + count * w2;
                }
            }
        }
        it
    }
}

fn partition_point(len: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Sequential decoder over a row interval of one table.
#[derive(Debug, Clone)]
pub struct TableIter<'a> {
    reader: TableReader<'a>,
    next: usize,
    end: usize,
    // ROW: unused. COLUMN: current run index. CLUSTER: byte offset of the next member.
    cursor: usize,
    group_left: usize,
    group_first: u64,
}

impl Iterator for TableIter<'_> {
    type Item = Row;

    #[inline]
    fn next(&mut self) -> Option<Row> {
        if self.next >= self.end {
            return None;
        }
        let r = &self.reader;
        let (w1, w2, w3) = r.w();
        let i = self.next;
        self.next += 1;
        Some(match r.desc.kind {
            LayoutKind::Row => {
                let off = i * (w1 + w2);
                (TermId::from_raw(get_uint(&r.bytes[off..], w1)), TermId::from_raw(get_uint(&r.bytes[off + w1..], w2)))
            }
            LayoutKind::Column => {
                while self.cursor + 1 < r.run_count && r.run(self.cursor).1 <= i {
                    self.cursor += 1;
                }
                (r.run(self.cursor).0, r.second_col(i))
            }
            LayoutKind::Cluster => {
                if self.group_left == 0 {
                    self.group_first = get_uint(&r.bytes[self.cursor..], w1);
                    self.group_left = get_uint(&r.bytes[self.cursor + w1..], w3) as usize;
                    self.cursor += w1 + w3;
                }
                let v = get_uint(&r.bytes[self.cursor..], w2);
                self.cursor += w2;
                self.group_left -= 1;
                (TermId::from_raw(self.group_first), TermId::from_raw(v))
            }
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.end - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for TableIter<'_> {}
