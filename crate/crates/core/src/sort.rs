//! External merge sort of encoded triples.
//!
//! The encoded file holds fixed 15-byte records (`s r d`, five bytes each).
//! A sort reads it in chunks, sorts each chunk on the processing pool,
//! writes sorted runs, then k-way merges the runs. Reading, sorting and
//! writing overlap: at most three chunks are alive at once, which is what
//! the memory budget is divided by. All disk access goes through the
//! loader's [`IoGate`].

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crossbeam_channel::bounded;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::io::{create_file, GatedReader, GatedWriter, IoGate};
use crate::model::{Edge, Ordering, TermId};
use crate::store::SortedSource;

pub const RECORD_LEN: usize = 15;
/// Bytes one triple occupies while sorted in memory.
pub const SORT_RECORD_BYTES: usize = 16;
/// Smallest accepted sort budget.
pub const MIN_SORT_MEMORY: usize = 3 * 1024 * SORT_RECORD_BYTES;

const MASK: u128 = (1 << 40) - 1;

#[inline]
pub fn pack(t: [TermId; 3]) -> u128 {
    ((t[0].get() as u128) << 80) | ((t[1].get() as u128) << 40) | t[2].get() as u128
}

#[inline]
pub fn unpack(v: u128) -> [TermId; 3] {
    [
        TermId::from_raw((v >> 80) as u64),
        TermId::from_raw(((v >> 40) & MASK) as u64),
        TermId::from_raw((v & MASK) as u64),
    ]
}

pub(crate) fn write_record(out: &mut impl Write, t: [TermId; 3]) -> std::io::Result<()> {
    let mut rec = [0u8; RECORD_LEN];
    for (i, x) in t.iter().enumerate() {
        rec[i * 5..i * 5 + 5].copy_from_slice(&x.get().to_le_bytes()[..5]);
    }
    out.write_all(&rec)
}

fn read_record(rec: &[u8; RECORD_LEN]) -> [TermId; 3] {
    let f = |i: usize| {
        let mut b = [0u8; 8];
        b[..5].copy_from_slice(&rec[i * 5..i * 5 + 5]);
        TermId::from_raw(u64::from_le_bytes(b))
    };
    [f(0), f(1), f(2)]
}

/// Resources shared by every sort of one load.
#[derive(Clone)]
pub struct SortContext {
    pub memory: usize,
    pub pool: Arc<ThreadPool>,
    pub gate: Arc<IoGate>,
    pub tmp_dir: PathBuf,
}

impl SortContext {
    fn chunk_records(&self) -> usize {
        (self.memory / (3 * SORT_RECORD_BYTES)).max(1024)
    }
}

/// Counters of one sort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SortStats {
    pub runs: usize,
    pub input: u64,
    pub output: u64,
}

/// Sorts the records of `input` by `order` and streams the distinct triples,
/// as key triples in that order, into `sink`.
pub fn sort_file(
    ctx: &SortContext,
    input: &Path,
    order: Ordering,
    sink: &mut dyn FnMut([TermId; 3]) -> Result<()>,
) -> Result<SortStats> {
    let chunk = ctx.chunk_records();
    let mut stats = SortStats::default();
    let (raw_tx, raw_rx) = bounded::<Vec<u128>>(0);
    let (sorted_tx, sorted_rx) = bounded::<(usize, Vec<u128>)>(0);
    let mut first_chunk: Option<Vec<u128>> = None;
    let mut runs: Vec<PathBuf> = Vec::new();

    std::thread::scope(|s| -> Result<()> {
        let reader = s.spawn(|| -> Result<u64> {
            let file = File::open(input).map_err(Error::io_at(input))?;
            let mut r = BufReader::with_capacity(1 << 20, GatedReader::new(file, ctx.gate.clone()));
            let mut rec = [0u8; RECORD_LEN];
            let mut buf = Vec::with_capacity(chunk);
            let mut total = 0;
            loop {
                match r.read_exact(&mut rec) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                    Err(e) => return Err(Error::io_at(input)(e)),
                }
                let e = read_record(&rec);
                buf.push(pack(order.key(&Edge::new(e[0], e[1], e[2]))));
                total += 1;
                if buf.len() == chunk {
                    if raw_tx.send(std::mem::replace(&mut buf, Vec::with_capacity(chunk))).is_err() {
                        return Ok(total);
                    }
                }
            }
            if !buf.is_empty() {
                let _ = raw_tx.send(buf);
            }
            drop(raw_tx);
            Ok(total)
        });
        let writer = s.spawn(|| -> Result<Vec<PathBuf>> {
            let mut paths = Vec::new();
            for (i, run) in sorted_rx.iter() {
                let path = ctx.tmp_dir.join(format!("run-{}-{i:05}.tmp", order.as_str()));
                let mut w = GatedWriter::new(create_file(&path)?, ctx.gate.clone());
                for v in &run {
                    write_record(&mut w, unpack(*v))?;
                }
                w.into_inner()?;
                paths.push(path);
            }
            Ok(paths)
        });
        let mut sort_err = None;
        let mut pending: Option<Vec<u128>> = None;
        let mut index = 0;
        for mut c in raw_rx.iter() {
            ctx.pool.install(|| c.par_sort_unstable());
            c.dedup();
            // Hold back one chunk: a sort with a single chunk needs no run file.
            if let Some(prev) = pending.replace(c) {
                if sorted_tx.send((index, prev)).is_err() {
                    sort_err = Some(Error::corrupt("run writer stopped"));
                    break;
                }
                index += 1;
            }
        }
        drop(raw_rx);
        if index == 0 {
            first_chunk = pending.take();
        } else if let Some(last) = pending.take() {
            let _ = sorted_tx.send((index, last));
        }
        drop(sorted_tx);
        stats.input = reader.join().expect("reader thread")?;
        runs = writer.join().expect("writer thread")?;
        match sort_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })?;

    if let Some(only) = first_chunk {
        stats.runs = 1;
        for v in only {
            stats.output += 1;
            sink(unpack(v))?;
        }
        return Ok(stats);
    }
    stats.runs = runs.len();
    let result = merge_runs(ctx, &runs, sink, &mut stats);
    for r in &runs {
        let _ = fs::remove_file(r);
    }
    result.map(|_| stats)
}

fn merge_runs(
    ctx: &SortContext,
    runs: &[PathBuf],
    sink: &mut dyn FnMut([TermId; 3]) -> Result<()>,
    stats: &mut SortStats,
) -> Result<()> {
    let buf = (ctx.memory / runs.len().max(1)).clamp(RECORD_LEN * 64, 1 << 20);
    let mut readers = runs
        .iter()
        .map(|p| {
            let f = File::open(p).map_err(Error::io_at(p))?;
            Ok(BufReader::with_capacity(buf, GatedReader::new(f, ctx.gate.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    let next = |i: usize, readers: &mut Vec<BufReader<GatedReader<File>>>| -> Result<Option<u128>> {
        let mut rec = [0u8; RECORD_LEN];
        match readers[i].read_exact(&mut rec) {
            Ok(()) => Ok(Some(pack(read_record(&rec)))),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let mut heap = BinaryHeap::with_capacity(runs.len());
    for i in 0..runs.len() {
        if let Some(v) = next(i, &mut readers)? {
            heap.push(Reverse((v, i)));
        }
    }
    let mut last = None;
    while let Some(Reverse((v, i))) = heap.pop() {
        if last != Some(v) {
            stats.output += 1;
            sink(unpack(v))?;
            last = Some(v);
        }
        if let Some(n) = next(i, &mut readers)? {
            heap.push(Reverse((n, i)));
        }
    }
    Ok(())
}

/// Sorted source backed by an encoded triple file.
pub struct ExternalSource {
    pub ctx: SortContext,
    pub input: PathBuf,
    pub stats: Vec<(Ordering, SortStats)>,
}

impl SortedSource for ExternalSource {
    fn feed(&mut self, order: Ordering, sink: &mut dyn FnMut([TermId; 3]) -> Result<()>) -> Result<()> {
        let s = sort_file(&self.ctx, &self.input, order, sink)?;
        log::debug!("sorted {}: {} runs, {} -> {} triples", order, s.runs, s.input, s.output);
        self.stats.push((order, s));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ctx(dir: &Path, memory: usize) -> SortContext {
        SortContext {
            memory,
            pool: Arc::new(rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap()),
            gate: IoGate::new(2),
            tmp_dir: dir.to_path_buf(),
        }
    }

    fn write(dir: &Path, triples: &[[u64; 3]]) -> PathBuf {
        let p = dir.join("enc.tmp");
        let mut f = std::io::BufWriter::new(File::create(&p).unwrap());
        for t in triples {
            write_record(&mut f, t.map(|x| TermId::new(x).unwrap())).unwrap();
        }
        f.flush().unwrap();
        p
    }

    fn collect(c: &SortContext, p: &Path, o: Ordering) -> (Vec<[u64; 3]>, SortStats) {
        let mut out = Vec::new();
        let s = sort_file(c, p, o, &mut |t| {
            out.push(t.map(TermId::get));
            Ok(())
        })
        .unwrap();
        (out, s)
    }

    #[test]
    fn pack_round_trip() {
        let t = [TermId::MAX, TermId::new(0).unwrap(), TermId::new(12345).unwrap()];
        assert_eq!(unpack(pack(t)), t);
        assert!(
            pack([TermId::new(1).unwrap(), TermId::new(0).unwrap(), TermId::new(0).unwrap()])
                > pack([TermId::new(0).unwrap(), TermId::MAX, TermId::MAX])
        );
    }

    #[test]
    fn budgets_agree_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let triples: Vec<[u64; 3]> =
            (0..20_000).map(|_| [rng.random_range(0..50), rng.random_range(0..5), rng.random_range(0..50)]).collect();
        let p = write(dir.path(), &triples);
        let big = ctx(dir.path(), 64 << 20);
        let small = ctx(dir.path(), MIN_SORT_MEMORY);
        for o in Ordering::ALL {
            let (a, sa) = collect(&big, &p, o);
            let (b, sb) = collect(&small, &p, o);
            assert_eq!(sa.runs, 1);
            assert!(sb.runs >= 4);
            assert_eq!(a, b);
            assert!(a.windows(2).all(|w| w[0] < w[1]));
            let mut expect: Vec<[u64; 3]> = triples
                .iter()
                .map(|t| {
                    let e =
                        Edge::new(TermId::new(t[0]).unwrap(), TermId::new(t[1]).unwrap(), TermId::new(t[2]).unwrap());
                    o.key(&e).map(TermId::get)
                })
                .collect();
            expect.sort();
            expect.dedup();
            assert_eq!(a, expect);
        }
        assert!(small.gate.peak_in_flight() <= 2);
    }

    #[test]
    fn reverse_sorted_input() {
        let dir = tempfile::tempdir().unwrap();
        let triples: Vec<[u64; 3]> = (0..1_000_000u64).rev().map(|i| [i / 1000, i % 7, i]).collect();
        let p = write(dir.path(), &triples);
        let c = ctx(dir.path(), 4 << 20);
        let mut prev = None;
        let mut n = 0;
        let s = sort_file(&c, &p, Ordering::Srd, &mut |t| {
            assert!(prev.is_none_or(|p| p < t));
            prev = Some(t);
            n += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 1_000_000);
        assert!(s.runs > 1);
    }

    #[test]
    fn already_sorted_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let triples: Vec<[u64; 3]> = (0..5000u64).map(|i| [i / 10, 1, i]).collect();
        let p = write(dir.path(), &triples);
        let (out, _) = collect(&ctx(dir.path(), MIN_SORT_MEMORY), &p, Ordering::Srd);
        assert_eq!(out, triples);
    }
}
