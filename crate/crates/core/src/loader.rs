//! Bulk loading: parse, dictionary-encode, sort six ways, build the streams,
//! the node manager and the manifest.
//!
//! Computation (parsing and in-memory sorting) runs on a pool of
//! `processing_workers` threads. Every disk read and write of the pipeline
//! goes through one [`IoGate`] with `io_workers` permits.
//!
//! Term ids are assigned in order of first appearance. Workers parse batches
//! of lines in parallel, then a single sequencer walks the parsed batches in
//! input order and assigns ids, so the result does not depend on the number
//! of workers.

use std::fs;
use std::io::{BufRead, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::db::{collect_stats, open_snapshot, LayoutCounts, Manifest, StreamStats, DEFAULT_RELOAD_FRACTION};
use crate::db::{DbLock, BASE_SEGMENT, FORMAT_VERSION};
use crate::dictionary::{Dictionary, IdMode, TermKind};
use crate::error::{Error, Result};
use crate::input::{open_input_gated, parse_line, InputFormat, SNAP_RELATION};
use crate::io::{create_file, GatedWriter, IoGate, ReadStats};
use crate::layout::LayoutParams;
use crate::model::TermId;
use crate::nm::NmBackend;
use crate::sort::{write_record, ExternalSource, SortContext, MIN_SORT_MEMORY};
use crate::store::{build_store, StoreOptions};
use crate::stream::{BuildOptions, DEFAULT_ETA};

const BATCH_LINES: usize = 8192;
const ENCODED_FILE: &str = "encoded.tmp";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadConfig {
    pub format: InputFormat,
    pub id_mode: IdMode,
    pub nm_backend: NmBackend,
    pub ofr: bool,
    pub eta: u64,
    pub aggr: bool,
    pub tau: u64,
    pub upsilon: u64,
    pub processing_workers: usize,
    pub io_workers: usize,
    /// Bytes of triples the sorter may hold in memory.
    pub sort_memory: usize,
    /// Scratch directory; a subdirectory of the target by default.
    pub tmp_dir: Option<PathBuf>,
}

impl Default for LoadConfig {
    fn default() -> Self {
        let layout = LayoutParams::default();
        LoadConfig {
            format: InputFormat::NTriples,
            id_mode: IdMode::Global,
            nm_backend: NmBackend::Btree,
            ofr: true,
            eta: DEFAULT_ETA,
            aggr: true,
            tau: layout.tau,
            upsilon: layout.upsilon,
            processing_workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            io_workers: 2,
            sort_memory: 256 << 20,
            tmp_dir: None,
        }
    }
}

impl LoadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.processing_workers == 0 || self.io_workers == 0 {
            return bad("worker counts must be at least 1".into());
        }
        if self.sort_memory < MIN_SORT_MEMORY {
            return bad(format!("sort memory must be at least {MIN_SORT_MEMORY} bytes"));
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if self.ofr && self.eta == 0 {
            return bad("eta must be at least 1".into());
        }
        Ok(())
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            streams: BuildOptions {
                layout: LayoutParams { tau: self.tau, upsilon: self.upsilon },
                ofr_eta: self.ofr.then_some(self.eta),
                aggregate: self.aggr,
            },
            nm_backend: self.nm_backend,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub edges: u64,
    /// Parsed input triples, duplicates included.
    pub input_triples: u64,
    pub labels: u64,
    pub relation_labels: u64,
    pub relations: u64,
    pub nodes: u64,
    pub layouts: LayoutCounts,
    pub streams: Vec<StreamStats>,
    pub stream_bytes: u64,
    pub total_bytes: u64,
    pub sort_runs: usize,
    pub processing_workers: usize,
    pub io_workers: usize,
    pub io_peak_in_flight: usize,
    pub seconds: f64,
}

/// Loads the file at `input` into a new database at `out`.
pub fn load(config: &LoadConfig, input: &Path, out: &Path) -> Result<LoadReport> {
    config.validate()?;
    let gate = IoGate::new(config.io_workers);
    run(config, out, gate.clone(), |_| open_input_gated(input, gate))
}

/// Loads already opened input into a new database at `out`.
pub fn load_from_reader(config: &LoadConfig, input: impl BufRead + Send, out: &Path) -> Result<LoadReport> {
    config.validate()?;
    let gate = IoGate::new(config.io_workers);
    run(config, out, gate, |_| Ok(input))
}

fn run<R: BufRead + Send>(
    config: &LoadConfig,
    out: &Path,
    gate: Arc<IoGate>,
    open: impl FnOnce(&Path) -> Result<R>,
) -> Result<LoadReport> {
    let created = prepare_target(out)?;
    let lock = DbLock::acquire(out, true);
    let result = lock.and_then(|_lock| open(out).and_then(|input| build(config, input, out, gate)));
    if result.is_err() {
        if created {
            let _ = fs::remove_dir_all(out);
        } else if let Ok(entries) = fs::read_dir(out) {
            for e in entries.flatten() {
                let p = e.path();
                let _ = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
            }
        }
    }
    result
}

/// Creates `out`, or accepts it when empty. Returns whether it was created.
fn prepare_target(out: &Path) -> Result<bool> {
    match fs::read_dir(out) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                Err(Error::Config(format!("{} exists and is not empty", out.display())))
            } else {
                Ok(false)
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::create_dir_all(out).map_err(Error::io_at(out))?;
            Ok(true)
        }
        Err(e) => Err(Error::io_at(out)(e)),
    }
}

fn build(config: &LoadConfig, input: impl BufRead + Send, out: &Path, gate: Arc<IoGate>) -> Result<LoadReport> {
    let start = Instant::now();
    let pool = Arc::new(
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.processing_workers)
            .thread_name(|i| format!("kgstore-proc-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
    );
    let tmp = match &config.tmp_dir {
        Some(t) => t.join(format!("kgstore-load-{}", std::process::id())),
        None => out.join(".tmp-load"),
    };
    fs::create_dir_all(&tmp).map_err(Error::io_at(&tmp))?;
    let result = (|| -> Result<(u64, Manifest, usize)> {
        let encoded = tmp.join(ENCODED_FILE);
        let mut dict = match config.format {
            InputFormat::Encoded => None,
            _ => Some(Dictionary::new(config.id_mode)),
        };
        let (input_triples, max_ids) = encode(config, input, dict.as_mut(), &encoded, &pool, &gate)?;
        let mut dict = match dict {
            Some(d) => d,
            None => Dictionary::starting_at(config.id_mode, max_ids),
        };
        log::info!("encoded {input_triples} triples, {} labels", dict.pending_len());
        dict.commit(out)?;
        drop(dict);

        let ctx =
            SortContext { memory: config.sort_memory, pool: pool.clone(), gate: gate.clone(), tmp_dir: tmp.clone() };
        let mut source = ExternalSource { ctx, input: encoded.clone(), stats: Vec::new() };
        let summary = build_store(out, config.store_options(), gate.clone(), &mut source)?;
        let _ = fs::remove_file(&encoded);
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            id_mode: config.id_mode,
            nm_backend: config.nm_backend,
            input_format: config.format,
            tau: config.tau,
            upsilon: config.upsilon,
            ofr: config.ofr,
            eta: config.eta,
            aggr: config.aggr,
            edges: summary.edges,
            deltas: Vec::new(),
            dict_segments: vec![BASE_SEGMENT.to_string()],
            next_seq: 1,
            reload_fraction: DEFAULT_RELOAD_FRACTION,
        };
        manifest.save(out)?;
        Ok((input_triples, manifest, source.stats.iter().map(|(_, s)| s.runs).sum::<usize>()))
    })();
    let _ = fs::remove_dir_all(&tmp);
    let (input_triples, manifest, sort_runs) = result?;
    let snap = open_snapshot(out, &manifest, &Arc::new(ReadStats::default()))?;
    let stats = collect_stats(out, &manifest, &snap)?;
    Ok(LoadReport {
        edges: stats.edges,
        input_triples,
        labels: stats.labels,
        relation_labels: stats.relation_labels,
        relations: stats.relations,
        nodes: stats.nodes,
        layouts: stats.layouts,
        stream_bytes: stats.streams.iter().map(|s| s.bytes).sum(),
        streams: stats.streams,
        total_bytes: stats.total_bytes,
        sort_runs,
        processing_workers: config.processing_workers,
        io_workers: config.io_workers,
        io_peak_in_flight: gate.peak_in_flight(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// A batch of raw lines and the number of the first one.
struct Batch {
    first_line: u64,
    text: String,
    ends: Vec<usize>,
}

fn read_batch(input: &mut impl BufRead, first_line: u64) -> Result<Option<Batch>> {
    let mut b = Batch { first_line, text: String::new(), ends: Vec::with_capacity(BATCH_LINES) };
    while b.ends.len() < BATCH_LINES {
        let n = input.read_line(&mut b.text).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => {
                Error::Parse { line: first_line + b.ends.len() as u64, msg: "invalid UTF-8".into() }
            }
            _ => Error::Io(e),
        })?;
        if n == 0 {
            break;
        }
        b.ends.push(b.text.len());
    }
    Ok((!b.ends.is_empty()).then_some(b))
}

impl Batch {
    fn parse(&self, format: InputFormat) -> Result<Vec<[&str; 3]>> {
        let mut out = Vec::with_capacity(self.ends.len());
        let mut start = 0;
        for (i, &end) in self.ends.iter().enumerate() {
            if let Some(t) = parse_line(format, &self.text[start..end], self.first_line + i as u64)? {
                out.push(t);
            }
            start = end;
        }
        Ok(out)
    }
}

/// Writes the input as id triples to `out`. Returns the triple count and,
/// for pre-encoded input, the next free entity and relation ids.
fn encode(
    config: &LoadConfig,
    mut input: impl BufRead + Send,
    mut dict: Option<&mut Dictionary>,
    out: &Path,
    pool: &rayon::ThreadPool,
    gate: &Arc<IoGate>,
) -> Result<(u64, [u64; 2])> {
    let mut w = GatedWriter::new(BufWriter::with_capacity(1 << 20, create_file(out)?), gate.clone());
    if config.format == InputFormat::Snap {
        if let Some(d) = dict.as_deref_mut() {
            d.assign_id(SNAP_RELATION.as_bytes(), TermKind::Relation)?;
        }
    }
    let group = config.processing_workers * 4;
    let mut line = 1u64;
    let mut count = 0u64;
    let mut next = [0u64; 2];
    loop {
        let mut batches = Vec::with_capacity(group);
        while batches.len() < group {
            match read_batch(&mut input, line)? {
                Some(b) => {
                    line += b.ends.len() as u64;
                    batches.push(b);
                }
                None => break,
            }
        }
        if batches.is_empty() {
            break;
        }
        let format = config.format;
        let parsed: Vec<Result<Vec<[&str; 3]>>> =
            pool.install(|| batches.par_iter().map(|b| b.parse(format)).collect());
        for triples in parsed {
            let triples = triples?;
            for t in &triples {
                let ids = match dict.as_deref_mut() {
                    Some(d) => [
                        d.assign_id(t[0].as_bytes(), TermKind::Entity)?,
                        d.assign_id(t[1].as_bytes(), TermKind::Relation)?,
                        d.assign_id(t[2].as_bytes(), TermKind::Entity)?,
                    ],
                    None => {
                        let mut ids = [TermId::from_raw(0); 3];
                        for (k, x) in t.iter().enumerate() {
                            let v: u64 = x.parse().expect("validated by the parser");
                            ids[k] = TermId::from_raw(v);
                            let kind = if k == 1 { TermKind::Relation } else { TermKind::Entity };
                            let ns = config.id_mode.namespace(kind);
                            next[ns] = next[ns].max(v + 1);
                        }
                        ids
                    }
                };
                write_record(&mut w, ids)?;
                count += 1;
            }
        }
    }
    w.into_inner()?.into_inner().map_err(|e| Error::io_at(out)(e.into_error()))?;
    Ok((count, next))
}
