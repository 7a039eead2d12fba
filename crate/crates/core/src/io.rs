//! Disk access plumbing: a gate bounding concurrent disk operations, gated
//! reader/writer wrappers, read-side instrumentation and file helpers.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use memmap2::Mmap;
use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

/// Counting semaphore admitting at most `permits` concurrent disk operations.
/// Records the highest concurrency it ever observed.
#[derive(Debug)]
pub struct IoGate {
    permits: usize,
    busy: Mutex<usize>,
    cv: Condvar,
    peak: AtomicUsize,
    ops: AtomicU64,
    bytes: AtomicU64,
}

impl IoGate {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(IoGate {
            permits: permits.max(1),
            busy: Mutex::new(0),
            cv: Condvar::new(),
            peak: AtomicUsize::new(0),
            ops: AtomicU64::new(0),
            bytes: AtomicU64::new(0),
        })
    }

    /// Unbounded gate for contexts that do not limit I/O.
    pub fn unbounded() -> Arc<Self> {
        IoGate::new(usize::MAX)
    }

    pub fn permits(&self) -> usize {
        self.permits
    }

    /// Runs `f` while holding one permit.
    pub fn run<T>(&self, f: impl FnOnce() -> io::Result<(T, usize)>) -> io::Result<T> {
        {
            let mut busy = self.busy.lock();
            while *busy >= self.permits {
                self.cv.wait(&mut busy);
            }
            *busy += 1;
            self.peak.fetch_max(*busy, Ordering::Relaxed);
        }
        let res = f();
        {
            let mut busy = self.busy.lock();
            *busy -= 1;
        }
        self.cv.notify_one();
        self.ops.fetch_add(1, Ordering::Relaxed);
        res.map(|(v, n)| {
            self.bytes.fetch_add(n as u64, Ordering::Relaxed);
            v
        })
    }

    /// Highest number of simultaneously admitted operations so far.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }

    pub fn operations(&self) -> u64 {
        self.ops.load(Ordering::Relaxed)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }
}

/// Buffered writer whose flushes pass through an [`IoGate`].
pub struct GatedWriter<W: Write> {
    inner: W,
    gate: Arc<IoGate>,
    buf: Vec<u8>,
    cap: usize,
    written: u64,
}

impl<W: Write> GatedWriter<W> {
    pub fn new(inner: W, gate: Arc<IoGate>) -> Self {
        Self::with_capacity(1 << 20, inner, gate)
    }

    pub fn with_capacity(cap: usize, inner: W, gate: Arc<IoGate>) -> Self {
        GatedWriter { inner, gate, buf: Vec::with_capacity(cap), cap, written: 0 }
    }

    /// Bytes accepted so far, including buffered ones.
    pub fn position(&self) -> u64 {
        self.written
    }

    fn drain(&mut self) -> io::Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let GatedWriter { inner, gate, buf, .. } = self;
        gate.run(|| {
            inner.write_all(buf)?;
            Ok(((), buf.len()))
        })?;
        buf.clear();
        Ok(())
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.drain()?;
        let GatedWriter { mut inner, gate, .. } = self;
        gate.run(|| inner.flush().map(|_| ((), 0)))?;
        Ok(inner)
    }
}

impl<W: Write> Write for GatedWriter<W> {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if self.buf.len() + data.len() > self.cap {
            self.drain()?;
        }
        if data.len() >= self.cap {
            let GatedWriter { inner, gate, .. } = self;
            gate.run(|| inner.write_all(data).map(|_| ((), data.len())))?;
        } else {
            self.buf.extend_from_slice(data);
        }
        self.written += data.len() as u64;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.drain()?;
        let GatedWriter { inner, gate, .. } = self;
        gate.run(|| inner.flush().map(|_| ((), 0)))
    }
}

/// Reader whose every `read` call passes through an [`IoGate`]. Wrap it in a
/// `BufReader` so calls are large.
pub struct GatedReader<R: Read> {
    inner: R,
    gate: Arc<IoGate>,
}

impl<R: Read> GatedReader<R> {
    pub fn new(inner: R, gate: Arc<IoGate>) -> Self {
        GatedReader { inner, gate }
    }
}

impl<R: Read> Read for GatedReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let GatedReader { inner, gate } = self;
        gate.run(|| inner.read(buf).map(|n| (n, n)))
    }
}

/// Read-side counters of one store. Table reads are the accesses that touch
/// encoded table bytes; header and node-manager reads are metadata.
#[derive(Debug, Default)]
pub struct ReadStats {
    table_reads: AtomicU64,
    table_bytes: AtomicU64,
    header_reads: AtomicU64,
    nm_lookups: AtomicU64,
}

impl ReadStats {
    pub(crate) fn table(&self, bytes: usize) {
        self.table_reads.fetch_add(1, Ordering::Relaxed);
        self.table_bytes.fetch_add(bytes as u64, Ordering::Relaxed);
    }

    pub(crate) fn header(&self) {
        self.header_reads.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn nm(&self) {
        self.nm_lookups.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> ReadCounters {
        ReadCounters {
            table_reads: self.table_reads.load(Ordering::Relaxed),
            table_bytes: self.table_bytes.load(Ordering::Relaxed),
            header_reads: self.header_reads.load(Ordering::Relaxed),
            nm_lookups: self.nm_lookups.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadCounters {
    pub table_reads: u64,
    pub table_bytes: u64,
    pub header_reads: u64,
    pub nm_lookups: u64,
}

impl std::ops::Sub for ReadCounters {
    type Output = ReadCounters;
    fn sub(self, o: ReadCounters) -> ReadCounters {
        ReadCounters {
            table_reads: self.table_reads - o.table_reads,
            table_bytes: self.table_bytes - o.table_bytes,
            header_reads: self.header_reads - o.header_reads,
            nm_lookups: self.nm_lookups - o.nm_lookups,
        }
    }
}

impl std::ops::Add for ReadCounters {
    type Output = ReadCounters;
    fn add(self, o: ReadCounters) -> ReadCounters {
        ReadCounters {
            table_reads: self.table_reads + o.table_reads,
            table_bytes: self.table_bytes + o.table_bytes,
            header_reads: self.header_reads + o.header_reads,
            nm_lookups: self.nm_lookups + o.nm_lookups,
        }
    }
}

/// Read-only memory map of a whole file.
pub(crate) fn map_file(path: &Path) -> Result<Mmap> {
    let file = File::open(path).map_err(Error::io_at(path))?;
    // SAFETY: database files are immutable once written; nothing truncates
    // them while a store is open.
    unsafe { Mmap::map(&file) }.map_err(Error::io_at(path))
}

pub(crate) fn create_file(path: &Path) -> Result<File> {
    File::create(path).map_err(Error::io_at(path))
}

/// Writes `data` to `path` through a temporary file and rename.
pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = create_file(&tmp)?;
        f.write_all(data).map_err(Error::io_at(&tmp))?;
        f.sync_all().map_err(Error::io_at(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(Error::io_at(path))
}

/// Total size of regular files directly inside `dir`.
pub fn dir_size(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(Error::io_at(dir))? {
        let entry = entry?;
        let meta = entry.metadata()?;
        if meta.is_file() {
            total += meta.len();
        }
    }
    Ok(total)
}
