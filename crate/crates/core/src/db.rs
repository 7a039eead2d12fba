//! A database directory: manifest, base store, dictionary segments and the
//! ordered list of delta stores.
//!
//! ```text
//! <db>/manifest.json        format version, knobs, deltas, dictionary segments
//! <db>/.lock                shared for readers, exclusive for writers
//! <db>/{ts,tsp,...}.bin     base streams, nm.*, store.json
//! <db>/labels.blk, dict_*   base dictionary segment
//! <db>/dict-<seq>/          dictionary segment of new update terms
//! <db>/delta-<seq>-add/     addition or removal store
//! ```
//!
//! Writers never modify files that a published manifest refers to. Updates
//! and merges build new directories under temporary names, rename them into
//! place, replace the manifest atomically and only then delete what the old
//! manifest referenced.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, IdMode, TermKind};
use crate::error::{Error, Result};
use crate::input::{self, InputFormat};
use crate::io::{dir_size, write_atomic, IoGate, ReadStats};
use crate::layout::{LayoutKind, LayoutParams};
use crate::model::{Edge, Ordering, TermId, TriplePattern};
use crate::nm::NmBackend;
use crate::primitives::{DeltaKind, Overlay, Snapshot, StoreScan};
use crate::store::{build_store, MemorySource, Store, StoreOptions};
use crate::stream::BuildOptions;

pub const MANIFEST: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_RELOAD_FRACTION: f64 = 0.25;
/// Name of the base directory in [`Manifest::dict_segments`].
pub const BASE_SEGMENT: &str = ".";

/// One sealed delta store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaInfo {
    pub seq: u64,
    pub kind: DeltaKind,
    pub dir: String,
    pub edges: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub id_mode: IdMode,
    pub nm_backend: NmBackend,
    pub input_format: InputFormat,
    pub tau: u64,
    pub upsilon: u64,
    pub ofr: bool,
    pub eta: u64,
    pub aggr: bool,
    /// Edges of the base store.
    pub edges: u64,
    /// Active deltas, oldest first.
    pub deltas: Vec<DeltaInfo>,
    /// Dictionary segment directories relative to the database, oldest first.
    pub dict_segments: Vec<String>,
    pub next_seq: u64,
    pub reload_fraction: f64,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read(&path).map_err(Error::io_at(&path))?;
        let m: Manifest =
            serde_json::from_slice(&text).map_err(|e| Error::corrupt(format!("{}: {e}", path.display())))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::corrupt(format!("unsupported format version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(self).expect("serializable"))
    }

    /// Build options for stores of this database, deltas included.
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

    pub fn segment_dirs(&self, root: &Path) -> Vec<PathBuf> {
        self.dict_segments.iter().map(|s| root.join(s)).collect()
    }

    pub fn delta_edges(&self) -> u64 {
        self.deltas.iter().map(|d| d.edges).sum()
    }
}

/// Advisory lock on `<db>/.lock`, released on drop.
#[derive(Debug)]
pub struct DbLock {
    _file: File,
}

impl DbLock {
    /// Takes the lock without waiting. A held conflicting lock yields
    /// [`Error::ConflictingWriter`].
    pub fn acquire(dir: &Path, exclusive: bool) -> Result<DbLock> {
        let path = dir.join(LOCK_FILE);
        let file =
            OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(Error::io_at(&path))?;
        let r = if exclusive { file.try_lock() } else { file.try_lock_shared() };
        match r {
            Ok(()) => Ok(DbLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(Error::ConflictingWriter),
            Err(fs::TryLockError::Error(e)) => Err(Error::io_at(&path)(e)),
        }
    }
}

/// Outcome of one update.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UpdateReport {
    pub kind: Option<DeltaKind>,
    pub requested: u64,
    /// Edges written to the new delta.
    pub applied: u64,
    /// Additions already visible and removals of invisible edges.
    pub skipped: u64,
    pub new_terms: u64,
    pub delta: Option<DeltaInfo>,
    pub deltas: usize,
    pub reload_recommended: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    pub before: usize,
    pub after: usize,
    pub additions: u64,
    pub removals: u64,
    /// Edges that were added and later removed, or the reverse.
    pub cancelled: u64,
}

/// An open database.
#[derive(Debug)]
pub struct Database {
    dir: PathBuf,
    writable: bool,
    manifest: RwLock<Manifest>,
    snapshot: RwLock<Arc<Snapshot>>,
    stats: Arc<ReadStats>,
    writer: Mutex<()>,
    _lock: DbLock,
}

impl Database {
    /// Opens for reading under a shared lock.
    pub fn open(dir: &Path) -> Result<Database> {
        Self::open_with(dir, false)
    }

    /// Opens for updates under an exclusive lock. Leftovers of interrupted
    /// writers are removed.
    pub fn open_writable(dir: &Path) -> Result<Database> {
        Self::open_with(dir, true)
    }

    fn open_with(dir: &Path, writable: bool) -> Result<Database> {
        if !dir.join(MANIFEST).exists() {
            return Err(Error::Config(format!("{} is not a database", dir.display())));
        }
        let lock = DbLock::acquire(dir, writable)?;
        let manifest = Manifest::load(dir)?;
        if writable {
            remove_unreferenced(dir, &manifest)?;
        }
        let stats = Arc::new(ReadStats::default());
        let snapshot = open_snapshot(dir, &manifest, &stats)?;
        Ok(Database {
            dir: dir.to_path_buf(),
            writable,
            manifest: RwLock::new(manifest),
            snapshot: RwLock::new(Arc::new(snapshot)),
            stats,
            writer: Mutex::new(()),
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.read().clone()
    }

    /// The current immutable view. Later updates do not affect it.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    pub fn read_stats(&self) -> &Arc<ReadStats> {
        &self.stats
    }

    /// True when the deltas hold more edges than the configured fraction of
    /// the base. Advisory only.
    pub fn reload_recommended(&self) -> bool {
        reload_recommended(&self.manifest.read())
    }

    fn check_writable(&self) -> Result<()> {
        if self.writable {
            Ok(())
        } else {
            Err(Error::InvalidRequest("database was opened read-only".into()))
        }
    }

    /// Parses label triples from `input` and applies them as one update.
    pub fn apply_update_reader(
        &self,
        format: InputFormat,
        input: impl BufRead,
        kind: DeltaKind,
    ) -> Result<UpdateReport> {
        let triples = input::read_triples(format, input)?;
        self.apply_update(&triples, kind)
    }

    /// Adds or removes label triples as a new delta. Additions that are
    /// already visible and removals of invisible triples are skipped.
    pub fn apply_update<S: AsRef<[u8]>>(&self, triples: &[[S; 3]], kind: DeltaKind) -> Result<UpdateReport> {
        self.check_writable()?;
        let _w = self.writer.lock();
        let snap = self.snapshot();
        let manifest = self.manifest();
        let mut dict = Dictionary::open(manifest.id_mode, &manifest.segment_dirs(&self.dir))?;
        let mut report = UpdateReport { kind: Some(kind), requested: triples.len() as u64, ..Default::default() };
        let mut edges = BTreeSet::new();
        for t in triples {
            let kinds = [TermKind::Entity, TermKind::Relation, TermKind::Entity];
            let ids = match kind {
                DeltaKind::Addition => {
                    let mut ids = [TermId::from_raw(0); 3];
                    for i in 0..3 {
                        ids[i] = dict.assign_id(t[i].as_ref(), kinds[i])?;
                    }
                    Some(ids)
                }
                DeltaKind::Removal => {
                    let mut ids = Some([TermId::from_raw(0); 3]);
                    for i in 0..3 {
                        match dict.lookup_id(t[i].as_ref(), kinds[i])? {
                            Some(id) => ids.as_mut().unwrap()[i] = id,
                            None => ids = None,
                        }
                        if ids.is_none() {
                            break;
                        }
                    }
                    ids
                }
            };
            let Some(ids) = ids else {
                report.skipped += 1;
                continue;
            };
            let e = Edge::new(ids[0], ids[1], ids[2]);
            if !edges.insert(e) {
                report.skipped += 1;
                continue;
            }
        }
        let mut keep = Vec::with_capacity(edges.len());
        for e in edges {
            let visible = contains(&snap, &e)?;
            if visible == (kind == DeltaKind::Removal) {
                keep.push(e);
            } else {
                report.skipped += 1;
            }
        }
        report.new_terms = dict.pending_len() as u64;
        if keep.is_empty() {
            report.deltas = manifest.deltas.len();
            report.reload_recommended = reload_recommended(&manifest);
            return Ok(report);
        }
        let seq = manifest.next_seq;
        let mut next = manifest.clone();
        let mut created = Vec::new();
        let result = (|| -> Result<DeltaInfo> {
            if dict.pending_len() > 0 {
                let name = format!("dict-{seq}");
                let tmp = self.dir.join(format!("{name}.tmp"));
                created.push(tmp.clone());
                fresh_dir(&tmp)?;
                dict.commit(&tmp)?;
                rename(&tmp, &self.dir.join(&name))?;
                created.push(self.dir.join(&name));
                next.dict_segments.push(name);
            }
            let info = self.build_delta(&mut created, &next, seq, kind, keep)?;
            next.deltas.push(info.clone());
            next.next_seq = seq + 1;
            next.save(&self.dir)?;
            Ok(info)
        })();
        let info = match result {
            Ok(info) => info,
            Err(e) => {
                remove_all(&created);
                return Err(e);
            }
        };
        report.applied = info.edges;
        report.delta = Some(info);
        report.deltas = next.deltas.len();
        report.reload_recommended = reload_recommended(&next);
        self.publish(next)?;
        Ok(report)
    }

    fn build_delta(
        &self,
        created: &mut Vec<PathBuf>,
        manifest: &Manifest,
        seq: u64,
        kind: DeltaKind,
        edges: Vec<Edge>,
    ) -> Result<DeltaInfo> {
        let name = format!("delta-{seq}-{}", kind.suffix());
        let tmp = self.dir.join(format!("{name}.tmp"));
        created.push(tmp.clone());
        fresh_dir(&tmp)?;
        let summary = build_store(&tmp, manifest.store_options(), IoGate::unbounded(), &mut MemorySource(edges))?;
        let dst = self.dir.join(&name);
        rename(&tmp, &dst)?;
        created.push(dst);
        Ok(DeltaInfo { seq, kind, dir: name, edges: summary.edges })
    }

    fn publish(&self, manifest: Manifest) -> Result<()> {
        let snap = open_snapshot(&self.dir, &manifest, &self.stats)?;
        *self.manifest.write() = manifest;
        *self.snapshot.write() = Arc::new(snap);
        Ok(())
    }

    /// Folds all deltas into at most one addition and one removal delta,
    /// dropping edges whose changes cancel out. The base is not touched.
    pub fn merge_deltas(&self) -> Result<MergeReport> {
        self.check_writable()?;
        let _w = self.writer.lock();
        let manifest = self.manifest();
        let before = manifest.deltas.len();
        if before <= 1 {
            return Ok(MergeReport { before, after: before, ..Default::default() });
        }
        let snap = self.snapshot();
        let mut adds = Vec::new();
        let mut rems = Vec::new();
        let mut touched = 0u64;
        {
            let mut scans = Vec::with_capacity(snap.deltas().len());
            for (kind, store) in snap.deltas() {
                scans.push((StoreScan::new(store, Ordering::Srd, &[])?, *kind == DeltaKind::Removal));
            }
            let mut overlay = Overlay::new(Ordering::Srd, scans);
            while let Some(item) = overlay.next_decided() {
                let (e, winner, _) = item?;
                touched += 1;
                let visible = !overlay.is_removal(winner);
                let in_base = contains_in(snap.base(), &e)?;
                match (visible, in_base) {
                    (true, false) => adds.push(e),
                    (false, true) => rems.push(e),
                    _ => {}
                }
            }
        }
        let seq = manifest.next_seq;
        let mut next = manifest.clone();
        next.deltas.clear();
        next.next_seq = seq + 2;
        let mut created = Vec::new();
        let old_segments: Vec<String> =
            manifest.dict_segments.iter().filter(|s| s.as_str() != BASE_SEGMENT).cloned().collect();
        let report = MergeReport {
            before,
            after: (!adds.is_empty()) as usize + (!rems.is_empty()) as usize,
            additions: adds.len() as u64,
            removals: rems.len() as u64,
            cancelled: touched - adds.len() as u64 - rems.len() as u64,
        };
        let result = (|| -> Result<()> {
            if old_segments.len() > 1 {
                let name = format!("dict-{seq}");
                let tmp = self.dir.join(format!("{name}.tmp"));
                created.push(tmp.clone());
                fresh_dir(&tmp)?;
                let dirs: Vec<PathBuf> = old_segments.iter().map(|s| self.dir.join(s)).collect();
                Dictionary::merge_segments(manifest.id_mode, &dirs, &tmp)?;
                rename(&tmp, &self.dir.join(&name))?;
                created.push(self.dir.join(&name));
                next.dict_segments.retain(|s| s == BASE_SEGMENT);
                next.dict_segments.push(name);
            }
            if !adds.is_empty() {
                let info = self.build_delta(&mut created, &next, seq, DeltaKind::Addition, adds)?;
                next.deltas.push(info);
            }
            if !rems.is_empty() {
                let info = self.build_delta(&mut created, &next, seq + 1, DeltaKind::Removal, rems)?;
                next.deltas.push(info);
            }
            next.save(&self.dir)
        })();
        if let Err(e) = result {
            remove_all(&created);
            return Err(e);
        }
        self.publish(next.clone())?;
        // Readers holding the old snapshot keep their mappings alive.
        for d in &manifest.deltas {
            remove_dir(&self.dir.join(&d.dir));
        }
        for s in &old_segments {
            if !next.dict_segments.contains(s) {
                remove_dir(&self.dir.join(s));
            }
        }
        Ok(report)
    }

    /// Sizes and counts describing the database.
    pub fn stats(&self) -> Result<DbStats> {
        collect_stats(&self.dir, &self.manifest(), &self.snapshot())
    }
}

pub(crate) fn collect_stats(dir: &Path, manifest: &Manifest, snap: &Snapshot) -> Result<DbStats> {
    let dict = snap.dictionary();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io_at(dir))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == LOCK_FILE {
            continue;
        }
        let md = entry.metadata()?;
        let bytes = if md.is_dir() { dir_size(&entry.path())? } else { md.len() };
        files.push((name, bytes));
    }
    files.sort();
    let mut layouts = LayoutCounts::default();
    let base = snap.base();
    let mut streams = Vec::new();
    for id in crate::stream::StreamId::ALL {
        let r = base.stream(id);
        let mut c = LayoutCounts::default();
        for e in r.entries() {
            let e = e?;
            c.add(&e);
        }
        layouts.merge(&c);
        streams.push(StreamStats { stream: id.name().to_string(), bytes: r.file_len(), layouts: c });
    }
    Ok(DbStats {
        edges: snap.edge_count(),
        base_edges: manifest.edges,
        labels: dict.len(TermKind::Entity),
        relation_labels: match manifest.id_mode {
            IdMode::Global => 0,
            IdMode::Split => dict.len(TermKind::Relation),
        },
        relations: snap.cnt(&crate::primitives::Request::Grp {
            omega: crate::model::PartialOrdering::from_slice(&[crate::model::Pos::R])?,
            pattern: TriplePattern::all_vars(),
        })?,
        nodes: base.meta().nodes,
        nm_backend: manifest.nm_backend,
        id_mode: manifest.id_mode,
        layouts,
        streams,
        files,
        total_bytes: dir_size(dir)?,
        deltas: manifest.deltas.clone(),
        reload_recommended: reload_recommended(manifest),
    })
}

/// Table counts per layout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayoutCounts {
    pub row: u64,
    pub column: u64,
    pub cluster: u64,
    pub pruned: u64,
    pub aggregated: u64,
}

impl LayoutCounts {
    fn add(&mut self, e: &crate::stream::HeaderEntry) {
        match e.desc.kind {
            LayoutKind::Row => self.row += 1,
            LayoutKind::Column => self.column += 1,
            LayoutKind::Cluster => self.cluster += 1,
        }
        self.pruned += e.pruned() as u64;
        self.aggregated += e.aggregated() as u64;
    }

    fn merge(&mut self, o: &LayoutCounts) {
        self.row += o.row;
        self.column += o.column;
        self.cluster += o.cluster;
        self.pruned += o.pruned;
        self.aggregated += o.aggregated;
    }

    pub fn tables(&self) -> u64 {
        self.row + self.column + self.cluster
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamStats {
    pub stream: String,
    pub bytes: u64,
    pub layouts: LayoutCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct DbStats {
    pub edges: u64,
    pub base_edges: u64,
    pub labels: u64,
    /// Labels of the separate relation dictionary; zero in global mode.
    pub relation_labels: u64,
    /// Distinct edge labels in use.
    pub relations: u64,
    pub nodes: u64,
    pub nm_backend: NmBackend,
    pub id_mode: IdMode,
    pub layouts: LayoutCounts,
    pub streams: Vec<StreamStats>,
    pub files: Vec<(String, u64)>,
    pub total_bytes: u64,
    pub deltas: Vec<DeltaInfo>,
    pub reload_recommended: bool,
}

fn reload_recommended(m: &Manifest) -> bool {
    m.delta_edges() as f64 > m.reload_fraction * m.edges as f64
}

pub(crate) fn open_snapshot(dir: &Path, m: &Manifest, stats: &Arc<ReadStats>) -> Result<Snapshot> {
    let base = Arc::new(Store::open(dir, stats.clone())?);
    let mut deltas = Vec::with_capacity(m.deltas.len());
    for d in &m.deltas {
        deltas.push((d.kind, Arc::new(Store::open(&dir.join(&d.dir), stats.clone())?)));
    }
    let dict = Dictionary::open(m.id_mode, &m.segment_dirs(dir))?;
    Ok(Snapshot::new(base, deltas, dict, stats.clone()))
}

fn point(e: &Edge) -> TriplePattern {
    TriplePattern::new(e.s, e.r, e.d)
}

fn contains(snap: &Snapshot, e: &Edge) -> Result<bool> {
    Ok(snap.edg(Ordering::Srd, &point(e))?.next().transpose()?.is_some())
}

fn contains_in(store: &Store, e: &Edge) -> Result<bool> {
    let key = Ordering::Srd.key(e);
    Ok(StoreScan::new(store, Ordering::Srd, &key)?.next().transpose()?.is_some())
}

fn fresh_dir(p: &Path) -> Result<()> {
    if p.exists() {
        fs::remove_dir_all(p).map_err(Error::io_at(p))?;
    }
    fs::create_dir_all(p).map_err(Error::io_at(p))
}

fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to).map_err(Error::io_at(to))
}

fn remove_dir(p: &Path) {
    if let Err(e) = fs::remove_dir_all(p) {
        log::warn!("could not remove {}: {e}", p.display());
    }
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        if p.exists() {
            remove_dir(p);
        }
    }
}

/// Deletes delta and dictionary directories the manifest does not list.
fn remove_unreferenced(dir: &Path, m: &Manifest) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(Error::io_at(dir))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ours = name.starts_with("delta-") || name.starts_with("dict-");
        let listed = m.deltas.iter().any(|d| d.dir == name) || m.dict_segments.contains(&name);
        if ours && !listed && entry.file_type()?.is_dir() {
            log::info!("removing leftover {name}");
            remove_dir(&entry.path());
        }
    }
    Ok(())
}
