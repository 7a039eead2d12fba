//! Label dictionary: a bijection between label byte strings and term ids.
//!
//! A dictionary is a stack of immutable on-disk segments (the base database
//! and one per delta) plus in-memory pending assignments. Each segment holds
//! a block file of labels and two B+Trees per namespace: label to id, and id
//! to the label's byte offset in the block file.
//!
//! In [`IdMode::Global`] entities and relations share one counter. In
//! [`IdMode::Split`] relations get their own counter and their own pair of
//! trees (`rel.btree`, `rel_i.btree`).

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::btree::{BTree, BTreeBuilder, KeyKind};
use crate::bytes::{get_uint, read_u32};
use crate::error::{Error, Result};
use crate::io::{create_file, map_file, write_atomic};
use crate::model::{TermId, TERM_ID_LIMIT};

pub const DEFAULT_BLOCK_SIZE: usize = 4096;

pub const LABELS_FILE: &str = "labels.blk";
const META_FILE: &str = "dict.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IdMode {
    #[default]
    Global,
    Split,
}

impl std::str::FromStr for IdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(IdMode::Global),
            "split" => Ok(IdMode::Split),
            _ => Err(Error::Config(format!("unknown id mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    Entity,
    Relation,
}

impl IdMode {
    pub fn namespace(self, kind: TermKind) -> usize {
        match (self, kind) {
            (IdMode::Split, TermKind::Relation) => 1,
            _ => 0,
        }
    }
}

const TREE_FILES: [(&str, &str); 2] = [("dict_l.btree", "dict_i.btree"), ("rel.btree", "rel_i.btree")];

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
struct IdRange {
    first: u64,
    count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentMeta {
    id_mode: IdMode,
    block_size: usize,
    ranges: Vec<IdRange>,
}

#[derive(Debug)]
struct Segment {
    labels: Option<Mmap>,
    by_label: Vec<BTree>,
    by_id: Vec<BTree>,
    ranges: Vec<IdRange>,
}

impl Segment {
    fn open(dir: &Path, mode: IdMode) -> Result<Segment> {
        let meta: SegmentMeta = read_meta(dir)?;
        if meta.id_mode != mode {
            return Err(Error::corrupt(format!(
                "{}: dictionary id mode {:?} differs from {:?}",
                dir.display(),
                meta.id_mode,
                mode
            )));
        }
        let spaces = namespaces(mode);
        let mut by_label = Vec::new();
        let mut by_id = Vec::new();
        for (l, i) in &TREE_FILES[..spaces] {
            by_label.push(BTree::open(&dir.join(l))?);
            by_id.push(BTree::open(&dir.join(i))?);
        }
        let path = dir.join(LABELS_FILE);
        let labels = if std::fs::metadata(&path).map_err(Error::io_at(&path))?.len() == 0 {
            None
        } else {
            Some(map_file(&path)?)
        };
        Ok(Segment { labels, by_label, by_id, ranges: meta.ranges })
    }

    fn label_at(&self, off: u64) -> Result<&[u8]> {
        let m = self.labels.as_deref().unwrap_or(&[]);
        let off = off as usize;
        let len = read_u32(m, off)? as usize;
        m.get(off + 4..off + 4 + len).ok_or_else(|| Error::corrupt("label record out of range"))
    }
}

fn namespaces(mode: IdMode) -> usize {
    match mode {
        IdMode::Global => 1,
        IdMode::Split => 2,
    }
}

fn read_meta(dir: &Path) -> Result<SegmentMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read(&path).map_err(Error::io_at(&path))?;
    serde_json::from_slice(&text).map_err(|e| Error::corrupt(format!("{}: {e}", path.display())))
}

#[derive(Debug, Default)]
struct Pending {
    ids: HashMap<Arc<[u8]>, u64>,
    labels: Vec<Arc<[u8]>>,
    first: u64,
}

/// Sizes of a committed segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommitSummary {
    pub labels: u64,
    pub relation_labels: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct Dictionary {
    mode: IdMode,
    block_size: usize,
    segments: Vec<Segment>,
    pending: [Pending; 2],
    next: [u64; 2],
}

impl Dictionary {
    pub fn new(mode: IdMode) -> Dictionary {
        Dictionary::starting_at(mode, [0, 0])
    }

    /// Empty dictionary whose counters continue from `next`.
    pub fn starting_at(mode: IdMode, next: [u64; 2]) -> Dictionary {
        let mut pending: [Pending; 2] = Default::default();
        pending[0].first = next[0];
        pending[1].first = next[1];
        Dictionary { mode, block_size: DEFAULT_BLOCK_SIZE, segments: Vec::new(), pending, next }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size.max(16);
        self
    }

    /// Opens the segments stored in `dirs`, in assignment order.
    pub fn open(mode: IdMode, dirs: &[PathBuf]) -> Result<Dictionary> {
        let mut dict = Dictionary::new(mode);
        for dir in dirs {
            dict.attach(dir)?;
        }
        Ok(dict)
    }

    /// Adds a committed segment on top of the existing ones.
    pub fn attach(&mut self, dir: &Path) -> Result<()> {
        if self.pending.iter().any(|p| !p.labels.is_empty()) {
            return Err(Error::InvalidRequest("cannot attach a segment with pending labels".into()));
        }
        let seg = Segment::open(dir, self.mode)?;
        for ns in 0..namespaces(self.mode) {
            let r = seg.ranges[ns];
            // an empty range still records the counter at commit time
            self.next[ns] = self.next[ns].max(r.first + r.count);
            self.pending[ns].first = self.next[ns];
        }
        self.segments.push(seg);
        Ok(())
    }

    pub fn mode(&self) -> IdMode {
        self.mode
    }

    /// Next id that would be assigned in the namespace of `kind`.
    pub fn next_id(&self, kind: TermKind) -> u64 {
        self.next[self.mode.namespace(kind)]
    }

    /// Both counters, entity first.
    pub fn counters(&self) -> [u64; 2] {
        self.next
    }

    /// Number of labels assigned in the namespace of `kind`.
    pub fn len(&self, kind: TermKind) -> u64 {
        let ns = self.mode.namespace(kind);
        self.segments.iter().map(|s| s.ranges[ns].count).sum::<u64>() + self.pending[ns].labels.len() as u64
    }

    pub fn pending_len(&self) -> usize {
        self.pending.iter().map(|p| p.labels.len()).sum()
    }

    #[doc(hidden)]
    pub fn set_next_id_for_test(&mut self, kind: TermKind, next: u64) {
        let ns = self.mode.namespace(kind);
        assert!(self.pending[ns].labels.is_empty());
        self.next[ns] = next;
        self.pending[ns].first = next;
    }

    pub fn assign_id(&mut self, label: &[u8], kind: TermKind) -> Result<TermId> {
        if let Some(id) = self.lookup_id(label, kind)? {
            return Ok(id);
        }
        let ns = self.mode.namespace(kind);
        let id = self.next[ns];
        if id >= TERM_ID_LIMIT {
            return Err(Error::IdSpaceExhausted);
        }
        let label: Arc<[u8]> = Arc::from(label);
        let p = &mut self.pending[ns];
        p.ids.insert(label.clone(), id);
        p.labels.push(label);
        self.next[ns] = id + 1;
        Ok(TermId::from_raw(id))
    }

    pub fn lookup_id(&self, label: &[u8], kind: TermKind) -> Result<Option<TermId>> {
        let ns = self.mode.namespace(kind);
        if let Some(&id) = self.pending[ns].ids.get(label) {
            return Ok(Some(TermId::from_raw(id)));
        }
        for seg in &self.segments {
            if let Some(v) = seg.by_label[ns].get(label)? {
                return Ok(Some(TermId::from_raw(get_uint(v, 8))));
            }
        }
        Ok(None)
    }

    pub fn lookup_label(&self, id: TermId, kind: TermKind) -> Result<Option<Vec<u8>>> {
        let ns = self.mode.namespace(kind);
        let id = id.get();
        let p = &self.pending[ns];
        if id >= p.first {
            return Ok(p.labels.get((id - p.first) as usize).map(|l| l.to_vec()));
        }
        for seg in &self.segments {
            let r = seg.ranges[ns];
            if id >= r.first && id < r.first + r.count {
                return match seg.by_id[ns].get(&id.to_le_bytes())? {
                    Some(off) => Ok(Some(seg.label_at(get_uint(off, 8))?.to_vec())),
                    None => Err(Error::corrupt(format!("id {id} missing from its segment"))),
                };
            }
        }
        Ok(None)
    }

    /// All labels of one namespace in id order, committed and pending.
    pub fn labels(&self, kind: TermKind) -> Result<Vec<(TermId, Vec<u8>)>> {
        let ns = self.mode.namespace(kind);
        let mut out = Vec::new();
        for seg in &self.segments {
            for item in seg.by_id[ns].iter() {
                let (k, off) = item?;
                out.push((TermId::from_raw(get_uint(k, 8)), seg.label_at(get_uint(off, 8))?.to_vec()));
            }
        }
        let p = &self.pending[ns];
        for (i, l) in p.labels.iter().enumerate() {
            out.push((TermId::from_raw(p.first + i as u64), l.to_vec()));
        }
        Ok(out)
    }

    /// Writes the pending labels as a new segment in `dir` and attaches it.
    pub fn commit(&mut self, dir: &Path) -> Result<CommitSummary> {
        let spaces = namespaces(self.mode);
        let mut summary = CommitSummary::default();
        let path = dir.join(LABELS_FILE);
        let mut blk = BlockWriter::new(BufWriter::new(create_file(&path)?), self.block_size);
        let mut ranges = Vec::new();
        for ns in 0..spaces {
            let pending = std::mem::take(&mut self.pending[ns]);
            let mut offsets = Vec::with_capacity(pending.labels.len());
            for label in &pending.labels {
                offsets.push(blk.append(label).map_err(Error::io_at(&path))?);
            }
            let (lname, iname) = TREE_FILES[ns];
            let mut by_id = BTreeBuilder::new(BufWriter::new(create_file(&dir.join(iname))?), KeyKind::U64);
            for (i, off) in offsets.iter().enumerate() {
                by_id.insert(&(pending.first + i as u64).to_le_bytes(), &off.to_le_bytes())?;
            }
            let (_, s) = by_id.finish()?;
            summary.bytes += s.bytes;
            let mut sorted: Vec<(&[u8], u64)> =
                pending.labels.iter().enumerate().map(|(i, l)| (&l[..], pending.first + i as u64)).collect();
            sorted.sort_unstable();
            let mut by_label = BTreeBuilder::new(BufWriter::new(create_file(&dir.join(lname))?), KeyKind::Bytes);
            for (l, id) in sorted {
                by_label.insert(l, &id.to_le_bytes())?;
            }
            let (_, s) = by_label.finish()?;
            summary.bytes += s.bytes;
            let count = pending.labels.len() as u64;
            if ns == 0 {
                summary.labels = count;
            } else {
                summary.relation_labels = count;
            }
            ranges.push(IdRange { first: pending.first, count });
            self.pending[ns].first = self.next[ns];
        }
        let written = blk.finish().map_err(Error::io_at(&path))?;
        summary.bytes += written;
        let meta = SegmentMeta { id_mode: self.mode, block_size: self.block_size, ranges };
        write_atomic(&dir.join(META_FILE), &serde_json::to_vec_pretty(&meta).expect("serializable"))?;
        self.segments.push(Segment::open(dir, self.mode)?);
        Ok(summary)
    }

    /// Combines the segments in `dirs`, which must be consecutive, into one
    /// segment written to `out`.
    pub fn merge_segments(mode: IdMode, dirs: &[PathBuf], out: &Path) -> Result<CommitSummary> {
        let src = Dictionary::open(mode, dirs)?;
        let mut firsts = [u64::MAX; 2];
        for seg in &src.segments {
            for (ns, r) in seg.ranges.iter().enumerate() {
                if firsts[ns] == u64::MAX || (r.count > 0 && r.first < firsts[ns]) {
                    firsts[ns] = r.first;
                }
            }
        }
        let start = [0, 1].map(|ns| if firsts[ns] == u64::MAX { src.next[ns] } else { firsts[ns] });
        let mut dst = Dictionary::starting_at(mode, start);
        dst.block_size = src.block_size;
        for kind in [TermKind::Entity, TermKind::Relation] {
            if mode == IdMode::Global && kind == TermKind::Relation {
                continue;
            }
            for (id, label) in src.labels(kind)? {
                let got = dst.assign_id(&label, kind)?;
                if got != id {
                    return Err(Error::corrupt("dictionary segments are not consecutive"));
                }
            }
        }
        dst.commit(out)
    }
}

/// Appends length-prefixed records to a file of fixed-size blocks. A record
/// never straddles two blocks unless it is larger than a block, in which case
/// it starts on a block boundary.
struct BlockWriter<W: Write> {
    out: W,
    block: usize,
    pos: u64,
}

impl<W: Write> BlockWriter<W> {
    fn new(out: W, block: usize) -> Self {
        BlockWriter { out, block, pos: 0 }
    }

    fn append(&mut self, label: &[u8]) -> std::io::Result<u64> {
        let need = 4 + label.len() as u64;
        let used = self.pos % self.block as u64;
        if used != 0 && used + need > self.block as u64 {
            let pad = self.block as u64 - used;
            self.out.write_all(&vec![0u8; pad as usize])?;
            self.pos += pad;
        }
        let at = self.pos;
        self.out.write_all(&(label.len() as u32).to_le_bytes())?;
        self.out.write_all(label)?;
        self.pos += need;
        Ok(at)
    }

    fn finish(mut self) -> std::io::Result<u64> {
        self.out.flush()?;
        Ok(self.pos)
    }
}
