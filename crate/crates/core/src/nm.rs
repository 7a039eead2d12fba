//! Node manager: per-term records of cardinalities and table coordinates.
//!
//! Two interchangeable backends hold the same 64-byte records: an on-disk
//! B+Tree keyed by term id (`nm.btree`) and an in-memory sorted array loaded
//! from `nm.arr`.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::btree::{BTree, BTreeBuilder, KeyKind};
use crate::bytes::{get_uint, put_uint};
use crate::error::{Error, Result};
use crate::io::create_file;
use crate::layout::LayoutDescriptor;
use crate::model::{Pos, TermId};
use crate::stream::{HeaderEntry, StreamId, StreamReader, ABSENT_OFFSET};

pub const RECORD_LEN: usize = 64;
const ARR_MAGIC: &[u8; 8] = b"KGNMARR1";
const ARR_HEADER: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NmBackend {
    #[default]
    Btree,
    Array,
}

impl NmBackend {
    pub fn file_name(self) -> &'static str {
        match self {
            NmBackend::Btree => "nm.btree",
            NmBackend::Array => "nm.arr",
        }
    }
}

impl std::str::FromStr for NmBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "btree" => Ok(NmBackend::Btree),
            "array" | "arr" => Ok(NmBackend::Array),
            _ => Err(Error::Config(format!("unknown node manager backend {s:?}"))),
        }
    }
}

/// Everything the store knows about one term without touching a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeRecord {
    /// Edge counts with the term as source, relation and destination.
    pub card: [u64; 3],
    /// Data offsets of the six tables, indexed by [`StreamId::index`].
    /// `None` when the table is empty or pruned.
    pub coords: [Option<u64>; 6],
    pub descs: [u8; 6],
    pub flags: [u8; 6],
}

impl NodeRecord {
    pub fn card(&self, pos: Pos) -> u64 {
        self.card[pos.index()]
    }

    /// The header entry of this term's table in `stream`, if it has one.
    pub fn entry(&self, key: TermId, stream: StreamId) -> Result<Option<HeaderEntry>> {
        let n = self.card(stream.key_pos());
        if n == 0 {
            return Ok(None);
        }
        let i = stream.index();
        Ok(Some(HeaderEntry {
            key,
            offset: self.coords[i].unwrap_or(ABSENT_OFFSET),
            n,
            desc: LayoutDescriptor::from_byte(self.descs[i])?,
            flags: self.flags[i],
        }))
    }

    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut v = Vec::with_capacity(RECORD_LEN);
        for c in self.card {
            put_uint(&mut v, c, 5);
        }
        for c in self.coords {
            put_uint(&mut v, c.unwrap_or(ABSENT_OFFSET), 6);
        }
        v.extend_from_slice(&self.descs);
        v.extend_from_slice(&self.flags);
        v.push(0);
        v.try_into().expect("record is 64 bytes")
    }

    pub fn decode(b: &[u8]) -> Result<NodeRecord> {
        if b.len() < RECORD_LEN {
            return Err(Error::Truncated("node record".into()));
        }
        let mut r = NodeRecord::default();
        for i in 0..3 {
            r.card[i] = get_uint(&b[i * 5..], 5);
        }
        for i in 0..6 {
            let c = get_uint(&b[15 + i * 6..], 6);
            r.coords[i] = (c != ABSENT_OFFSET).then_some(c);
        }
        r.descs.copy_from_slice(&b[51..57]);
        r.flags.copy_from_slice(&b[57..63]);
        Ok(r)
    }

    fn set(&mut self, stream: StreamId, e: &HeaderEntry) {
        let i = stream.index();
        self.card[stream.key_pos().index()] = e.n;
        self.coords[i] = (!e.pruned()).then_some(e.offset);
        self.descs[i] = e.desc.to_byte();
        self.flags[i] = e.flags;
    }
}

/// Merges the six stream headers into one record per term, ascending.
pub fn records_from_streams<'a>(
    streams: &'a [&'a StreamReader; 6],
) -> impl Iterator<Item = Result<(TermId, NodeRecord)>> + 'a {
    let mut cursors = [0usize; 6];
    std::iter::from_fn(move || {
        let mut min: Option<TermId> = None;
        for (s, r) in streams.iter().enumerate() {
            if cursors[s] < r.len() {
                let e = match r.entry(cursors[s]) {
                    Ok(e) => e,
                    Err(e) => return Some(Err(e)),
                };
                min = Some(min.map_or(e.key, |m| m.min(e.key)));
            }
        }
        let key = min?;
        let mut rec = NodeRecord::default();
        for (s, r) in streams.iter().enumerate() {
            if cursors[s] < r.len() {
                match r.entry(cursors[s]) {
                    Ok(e) if e.key == key => {
                        rec.set(r.id(), &e);
                        cursors[s] += 1;
                    }
                    Ok(_) => {}
                    Err(e) => return Some(Err(e)),
                }
            }
        }
        Some(Ok((key, rec)))
    })
}

/// Writes the node manager file for `backend`. `records` yields the
/// records in ascending id order and may be called twice.
pub fn build<I>(dir: &Path, backend: NmBackend, records: impl Fn() -> I) -> Result<u64>
where
    I: Iterator<Item = Result<(TermId, NodeRecord)>>,
{
    let path = dir.join(backend.file_name());
    let mut out = BufWriter::with_capacity(1 << 20, create_file(&path)?);
    let mut count = 0u64;
    match backend {
        NmBackend::Btree => {
            let mut b = BTreeBuilder::new(out, KeyKind::U64);
            for item in records() {
                let (id, rec) = item?;
                b.insert(&id.get().to_le_bytes(), &rec.encode())?;
                count += 1;
            }
            b.finish()?;
        }
        NmBackend::Array => {
            // First pass sizes the id span to pick dense or sparse addressing.
            let mut span = 0;
            for item in records() {
                span = item?.0.get() + 1;
                count += 1;
            }
            let dense = span <= 2 * count;
            let mut head = Vec::with_capacity(ARR_HEADER);
            head.extend_from_slice(ARR_MAGIC);
            head.push(dense as u8);
            head.extend_from_slice(&[0; 7]);
            put_uint(&mut head, if dense { span } else { count }, 8);
            let io = Error::io_at(&path);
            let empty = [0u8; RECORD_LEN];
            let mut next = 0;
            let mut write = |out: &mut BufWriter<_>| -> Result<()> {
                out.write_all(&head)?;
                for item in records() {
                    let (id, rec) = item?;
                    if dense {
                        while next < id.get() {
                            out.write_all(&empty)?;
                            next += 1;
                        }
                        next += 1;
                    } else {
                        out.write_all(&id.get().to_le_bytes())?;
                    }
                    out.write_all(&rec.encode())?;
                }
                out.flush()?;
                Ok(())
            };
            write(&mut out).map_err(|e| match e {
                Error::Io(source) => io(source),
                e => e,
            })?;
        }
    }
    Ok(count)
}

#[derive(Debug)]
enum Backend {
    Btree(BTree),
    Dense(Vec<u8>),
    Sparse { ids: Vec<u64>, recs: Vec<u8> },
}

/// Read side of the node manager.
#[derive(Debug)]
pub struct NodeManager {
    backend: Backend,
}

impl NodeManager {
    pub fn open(dir: &Path, backend: NmBackend) -> Result<NodeManager> {
        let path = dir.join(backend.file_name());
        let backend = match backend {
            NmBackend::Btree => Backend::Btree(BTree::open(&path)?),
            NmBackend::Array => {
                let bytes = std::fs::read(&path).map_err(Error::io_at(&path))?;
                if bytes.len() < ARR_HEADER || &bytes[..8] != ARR_MAGIC {
                    return Err(Error::corrupt(format!("{}: not a node array", path.display())));
                }
                let dense = bytes[8] == 1;
                let count = get_uint(&bytes[16..], 8) as usize;
                let body = &bytes[ARR_HEADER..];
                let stride = if dense { RECORD_LEN } else { RECORD_LEN + 8 };
                if body.len() != count * stride {
                    return Err(Error::corrupt(format!("{}: size mismatch", path.display())));
                }
                if dense {
                    Backend::Dense(body.to_vec())
                } else {
                    let mut ids = Vec::with_capacity(count);
                    let mut recs = Vec::with_capacity(count * RECORD_LEN);
                    for c in body.chunks_exact(stride) {
                        ids.push(get_uint(c, 8));
                        recs.extend_from_slice(&c[8..]);
                    }
                    Backend::Sparse { ids, recs }
                }
            }
        };
        Ok(NodeManager { backend })
    }

    pub fn get(&self, id: TermId) -> Result<Option<NodeRecord>> {
        let raw: Option<&[u8]> = match &self.backend {
            Backend::Btree(t) => t.get(&id.get().to_le_bytes())?,
            Backend::Dense(body) => {
                let i = id.get() as usize;
                body.get(i * RECORD_LEN..(i + 1) * RECORD_LEN)
            }
            Backend::Sparse { ids, recs } => {
                ids.binary_search(&id.get()).ok().map(|i| &recs[i * RECORD_LEN..(i + 1) * RECORD_LEN])
            }
        };
        match raw {
            None => Ok(None),
            Some(b) => {
                let rec = NodeRecord::decode(b)?;
                // Dense arrays hold zeroed records for unused ids.
                Ok((rec.card != [0; 3]).then_some(rec))
            }
        }
    }

    pub fn btree(&self) -> Option<&BTree> {
        match &self.backend {
            Backend::Btree(t) => Some(t),
            _ => None,
        }
    }
}
