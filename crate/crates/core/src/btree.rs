//! Bulk-loaded, read-only on-disk B+Tree.
//!
//! Built bottom-up from keys supplied in ascending order. Nodes are written
//! as they fill, leaves first, so the leaves are contiguous from offset 0 and
//! the root is the last node. A fixed trailer closes the file.
//!
//! ```text
//! node    := kind:u8 count:u32 offsets:[u32; count] entries
//! leaf    := klen:u32 key vlen:u32 value
//! branch  := klen:u32 key child:u64        (key = first key of child)
//! trailer := magic:"KGBTREE1" key_kind:u8 pad:[u8;3] height:u32 root:u64
//!            entries:u64 leaves:u64 min_fanout:u32 pad:[u8;20]   (64 bytes)
//! ```
//!
//! Keys are compared bytewise, or as little-endian `u64` for
//! [`KeyKind::U64`] trees.

use std::cmp::Ordering as CmpOrdering;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use memmap2::Mmap;

use crate::bytes::{get_uint, put_uint, read_u32, read_u64};
use crate::error::{Error, Result};
use crate::io::map_file;

const MAGIC: &[u8; 8] = b"KGBTREE1";
const TRAILER_LEN: usize = 64;
pub const DEFAULT_NODE_BYTES: usize = 4096;
const LEAF: u8 = 0;
const BRANCH: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Bytes,
    U64,
}

impl KeyKind {
    fn code(self) -> u8 {
        match self {
            KeyKind::Bytes => 0,
            KeyKind::U64 => 1,
        }
    }

    fn compare(self, a: &[u8], b: &[u8]) -> CmpOrdering {
        match self {
            KeyKind::Bytes => a.cmp(b),
            KeyKind::U64 => get_uint(a, 8).cmp(&get_uint(b, 8)),
        }
    }
}

struct PendingNode {
    entries: Vec<(Vec<u8>, Vec<u8>)>,
    bytes: usize,
}

impl PendingNode {
    fn new() -> Self {
        PendingNode { entries: Vec::new(), bytes: 5 }
    }

    fn entry_size(k: &[u8], v: &[u8]) -> usize {
        4 + 4 + k.len() + 4 + v.len()
    }
}

/// Streaming builder. Keys must arrive strictly ascending.
pub struct BTreeBuilder<W: Write> {
    out: W,
    kind: KeyKind,
    node_bytes: usize,
    pos: u64,
    leaf: PendingNode,
    // (first key, offset) of every finished node on the level above the leaves
    next_level: Vec<(Vec<u8>, u64)>,
    last_key: Option<Vec<u8>>,
    entries: u64,
    leaves: u64,
    min_fanout: u32,
}

/// Shape of a finished tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BTreeSummary {
    pub entries: u64,
    pub height: u32,
    pub min_fanout: u32,
    pub bytes: u64,
}

impl<W: Write> BTreeBuilder<W> {
    pub fn new(out: W, kind: KeyKind) -> Self {
        Self::with_node_bytes(out, kind, DEFAULT_NODE_BYTES)
    }

    pub fn with_node_bytes(out: W, kind: KeyKind, node_bytes: usize) -> Self {
        BTreeBuilder {
            out,
            kind,
            node_bytes: node_bytes.max(64),
            pos: 0,
            leaf: PendingNode::new(),
            next_level: Vec::new(),
            last_key: None,
            entries: 0,
            leaves: 0,
            min_fanout: u32::MAX,
        }
    }

    pub fn insert(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        if self.kind == KeyKind::U64 && key.len() != 8 {
            return Err(Error::InvalidRequest("u64 btree keys must be 8 bytes".into()));
        }
        if let Some(last) = &self.last_key {
            if self.kind.compare(last, key) != CmpOrdering::Less {
                return Err(Error::Unsorted("btree keys must be strictly ascending".into()));
            }
        }
        let size = PendingNode::entry_size(key, value);
        if self.leaf.entries.len() >= 2 && self.leaf.bytes + size > self.node_bytes {
            self.flush_leaf()?;
        }
        self.leaf.entries.push((key.to_vec(), value.to_vec()));
        self.leaf.bytes += size;
        self.last_key = Some(key.to_vec());
        self.entries += 1;
        Ok(())
    }

    fn write_node(&mut self, kind: u8, entries: &[(Vec<u8>, Vec<u8>)]) -> Result<u64> {
        let mut buf = Vec::new();
        buf.push(kind);
        put_uint(&mut buf, entries.len() as u64, 4);
        let mut off = 5 + 4 * entries.len();
        for (k, v) in entries {
            put_uint(&mut buf, off as u64, 4);
            off += 4 + k.len() + if kind == LEAF { 4 + v.len() } else { 8 };
        }
        for (k, v) in entries {
            put_uint(&mut buf, k.len() as u64, 4);
            buf.extend_from_slice(k);
            if kind == LEAF {
                put_uint(&mut buf, v.len() as u64, 4);
            }
            buf.extend_from_slice(v);
        }
        self.out.write_all(&buf)?;
        let at = self.pos;
        self.pos += buf.len() as u64;
        Ok(at)
    }

    fn flush_leaf(&mut self) -> Result<()> {
        let node = std::mem::replace(&mut self.leaf, PendingNode::new());
        let at = self.write_node(LEAF, &node.entries)?;
        self.leaves += 1;
        self.next_level.push((node.entries[0].0.clone(), at));
        self.min_fanout = self.min_fanout.min(node.entries.len() as u32);
        Ok(())
    }

    pub fn finish(mut self) -> Result<(W, BTreeSummary)> {
        let mut height = 0u32;
        let mut root = 0u64;
        if !self.leaf.entries.is_empty() {
            // The last leaf may be underfull; exclude it from min_fanout unless it is alone.
            let alone = self.leaves == 0;
            let saved = self.min_fanout;
            self.flush_leaf()?;
            if !alone {
                self.min_fanout = saved;
            }
            height = 1;
            let mut level = std::mem::take(&mut self.next_level);
            while level.len() > 1 {
                let mut parent = Vec::new();
                let mut node: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
                let mut bytes = 5usize;
                let total = level.len();
                for (i, (key, child)) in level.into_iter().enumerate() {
                    let size = 4 + 4 + key.len() + 8;
                    if node.len() >= 2 && bytes + size > self.node_bytes {
                        let at = self.write_node(BRANCH, &node)?;
                        self.min_fanout = self.min_fanout.min(node.len() as u32);
                        parent.push((node[0].0.clone(), at));
                        node.clear();
                        bytes = 5;
                    }
                    node.push((key, child.to_le_bytes().to_vec()));
                    bytes += size;
                    if i + 1 == total {
                        // the last node of a level may be underfull
                        let at = self.write_node(BRANCH, &node)?;
                        parent.push((node[0].0.clone(), at));
                    }
                }
                level = parent;
                height += 1;
            }
            root = level[0].1;
        }
        let mut t = Vec::with_capacity(TRAILER_LEN);
        t.extend_from_slice(MAGIC);
        t.push(self.kind.code());
        t.extend_from_slice(&[0; 3]);
        put_uint(&mut t, height as u64, 4);
        put_uint(&mut t, root, 8);
        put_uint(&mut t, self.entries, 8);
        put_uint(&mut t, self.leaves, 8);
        let min_fanout = if self.min_fanout == u32::MAX { 0 } else { self.min_fanout };
        put_uint(&mut t, min_fanout as u64, 4);
        t.resize(TRAILER_LEN, 0);
        self.out.write_all(&t)?;
        self.out.flush()?;
        let summary = BTreeSummary { entries: self.entries, height, min_fanout, bytes: self.pos + TRAILER_LEN as u64 };
        Ok((self.out, summary))
    }
}

/// Memory-mapped reader.
pub struct BTree {
    map: Mmap,
    kind: KeyKind,
    height: u32,
    root: u64,
    entries: u64,
    leaves: u64,
    min_fanout: u32,
    visits: AtomicU64,
}

impl std::fmt::Debug for BTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BTree")
            .field("kind", &self.kind)
            .field("height", &self.height)
            .field("entries", &self.entries)
            .finish()
    }
}

impl BTree {
    pub fn open(path: &Path) -> Result<BTree> {
        let map = map_file(path)?;
        if map.len() < TRAILER_LEN {
            return Err(Error::corrupt(format!("{}: too short for a btree", path.display())));
        }
        let t = &map[map.len() - TRAILER_LEN..];
        if &t[..8] != MAGIC {
            return Err(Error::corrupt(format!("{}: bad btree magic", path.display())));
        }
        let kind = match t[8] {
            0 => KeyKind::Bytes,
            1 => KeyKind::U64,
            k => return Err(Error::corrupt(format!("unknown btree key kind {k}"))),
        };
        Ok(BTree {
            kind,
            height: read_u32(t, 12)?,
            root: read_u64(t, 16)?,
            entries: read_u64(t, 24)?,
            leaves: read_u64(t, 32)?,
            min_fanout: read_u32(t, 40)?,
            visits: AtomicU64::new(0),
            map,
        })
    }

    pub fn len(&self) -> u64 {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Number of levels, counting the leaves; 0 for an empty tree.
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Smallest entry count of any node other than the last one on each level.
    pub fn min_fanout(&self) -> u32 {
        self.min_fanout
    }

    /// Total nodes visited by lookups on this reader.
    pub fn node_visits(&self) -> u64 {
        self.visits.load(Ordering::Relaxed)
    }

    fn node(&self, off: u64) -> Result<(u8, usize, usize)> {
        let off = off as usize;
        let body = self.map.len() - TRAILER_LEN;
        if off + 5 > body {
            return Err(Error::corrupt(format!("btree node offset {off} out of range")));
        }
        let kind = self.map[off];
        let count = read_u32(&self.map, off + 1)? as usize;
        if off + 5 + 4 * count > body {
            return Err(Error::corrupt("btree node offsets out of range"));
        }
        Ok((kind, count, off))
    }

    /// Key and payload of entry `i` of the node at `node`.
    fn entry(&self, node: usize, kind: u8, i: usize) -> Result<(&[u8], &[u8])> {
        let m = &self.map[..self.map.len() - TRAILER_LEN];
        let rel = read_u32(m, node + 5 + 4 * i)? as usize;
        let at = node + rel;
        let klen = read_u32(m, at)? as usize;
        let key = m.get(at + 4..at + 4 + klen).ok_or_else(|| Error::corrupt("btree key"))?;
        let vat = at + 4 + klen;
        let val = if kind == LEAF {
            let vlen = read_u32(m, vat)? as usize;
            m.get(vat + 4..vat + 4 + vlen)
        } else {
            m.get(vat..vat + 8)
        }
        .ok_or_else(|| Error::corrupt("btree value"))?;
        Ok((key, val))
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<&[u8]>> {
        Ok(self.get_traced(key)?.0)
    }

    /// Lookup that also reports how many nodes it visited.
    pub fn get_traced(&self, key: &[u8]) -> Result<(Option<&[u8]>, u32)> {
        if self.height == 0 {
            return Ok((None, 0));
        }
        let mut off = self.root;
        let mut visits = 0u32;
        loop {
            let (kind, count, node) = self.node(off)?;
            visits += 1;
            if kind == LEAF {
                let (mut lo, mut hi) = (0, count);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    let (k, v) = self.entry(node, kind, mid)?;
                    match self.kind.compare(k, key) {
                        CmpOrdering::Less => lo = mid + 1,
                        CmpOrdering::Greater => hi = mid,
                        CmpOrdering::Equal => {
                            self.visits.fetch_add(visits as u64, Ordering::Relaxed);
                            return Ok((Some(v), visits));
                        }
                    }
                }
                self.visits.fetch_add(visits as u64, Ordering::Relaxed);
                return Ok((None, visits));
            }
            // last child whose first key <= key
            let (mut lo, mut hi) = (0, count);
            while lo < hi {
                let mid = (lo + hi) / 2;
                let (k, _) = self.entry(node, kind, mid)?;
                if self.kind.compare(k, key) != CmpOrdering::Greater {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            if lo == 0 {
                self.visits.fetch_add(visits as u64, Ordering::Relaxed);
                return Ok((None, visits));
            }
            let (_, child) = self.entry(node, kind, lo - 1)?;
            off = get_uint(child, 8);
        }
    }

    /// All entries in key order.
    pub fn iter(&self) -> BTreeIter<'_> {
        BTreeIter { tree: self, node: 0, leaves_left: self.leaves, idx: 0, count: 0 }
    }
}

pub struct BTreeIter<'a> {
    tree: &'a BTree,
    node: usize,
    leaves_left: u64,
    idx: usize,
    count: usize,
}

impl<'a> Iterator for BTreeIter<'a> {
    type Item = Result<(&'a [u8], &'a [u8])>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.idx < self.count {
                let i = self.idx;
                self.idx += 1;
                return Some(self.tree.entry(self.node, LEAF, i));
            }
            if self.leaves_left == 0 {
                return None;
            }
            // advance to the next leaf, which starts right after the current one
            let next = if self.count == 0 && self.idx == 0 && self.leaves_left == self.tree.leaves {
                0
            } else {
                match self.tree.entry(self.node, LEAF, self.count - 1) {
                    Ok((_, v)) => v.as_ptr() as usize + v.len() - self.tree.map.as_ptr() as usize,
                    Err(e) => return Some(Err(e)),
                }
            };
            match self.tree.node(next as u64) {
                Ok((kind, count, node)) if kind == LEAF => {
                    self.node = node;
                    self.count = count;
                    self.idx = 0;
                    self.leaves_left -= 1;
                }
                Ok(_) => return Some(Err(Error::corrupt("expected a leaf node"))),
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(path: &Path, kind: KeyKind, node_bytes: usize, items: &[(Vec<u8>, Vec<u8>)]) -> BTreeSummary {
        let f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
        let mut b = BTreeBuilder::with_node_bytes(f, kind, node_bytes);
        for (k, v) in items {
            b.insert(k, v).unwrap();
        }
        b.finish().unwrap().1
    }

    #[test]
    fn empty_tree() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        build(&p, KeyKind::Bytes, 4096, &[]);
        let t = BTree::open(&p).unwrap();
        assert_eq!(t.height(), 0);
        assert_eq!(t.get(b"x").unwrap(), None);
        assert_eq!(t.iter().count(), 0);
    }

    #[test]
    fn lookups_and_height() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        let items: Vec<_> =
            (0u64..20_000).map(|i| (format!("label-{i:08}").into_bytes(), i.to_le_bytes().to_vec())).collect();
        let s = build(&p, KeyKind::Bytes, 512, &items);
        let t = BTree::open(&p).unwrap();
        assert_eq!(t.len(), 20_000);
        assert!(s.height >= 3);
        let f = t.min_fanout() as f64;
        let bound = ((items.len() as f64).ln() / f.ln()).ceil() as u32 + 1;
        assert!(t.height() <= bound, "height {} bound {bound}", t.height());
        for (k, v) in items.iter().step_by(7) {
            let (got, visits) = t.get_traced(k).unwrap();
            assert_eq!(got, Some(&v[..]));
            assert_eq!(visits, t.height());
        }
        assert_eq!(t.get(b"label-").unwrap(), None);
        assert_eq!(t.get(b"zzz").unwrap(), None);
        let all: Vec<_> = t.iter().map(|r| r.unwrap().0.to_vec()).collect();
        assert_eq!(all, items.iter().map(|i| i.0.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn u64_keys_compare_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        let items: Vec<_> =
            [1u64, 255, 256, 70_000, 1 << 39].iter().map(|i| (i.to_le_bytes().to_vec(), vec![*i as u8])).collect();
        build(&p, KeyKind::U64, 64, &items);
        let t = BTree::open(&p).unwrap();
        for (k, v) in &items {
            assert_eq!(t.get(k).unwrap(), Some(&v[..]));
        }
        assert_eq!(t.get(&2u64.to_le_bytes()).unwrap(), None);
    }

    #[test]
    fn rejects_unsorted() {
        let mut b = BTreeBuilder::new(Vec::new(), KeyKind::Bytes);
        b.insert(b"b", b"").unwrap();
        assert!(matches!(b.insert(b"a", b""), Err(Error::Unsorted(_))));
    }

    #[test]
    fn oversized_entries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t");
        let items: Vec<_> = (0..50u8).map(|i| (vec![i; 3000], vec![i; 2000])).collect();
        build(&p, KeyKind::Bytes, 4096, &items);
        let t = BTree::open(&p).unwrap();
        for (k, v) in &items {
            assert_eq!(t.get(k).unwrap(), Some(&v[..]));
        }
        assert_eq!(t.iter().count(), 50);
    }
}
