//! Binary shard format and parallel readers.
//!
//! ```text
//! file    := "DOLPSHRD" version:u16be record*
//! record  := len:u32be json[len] (blob_len:u32be blob[blob_len])?
//! ```
//!
//! The JSON payload is a [`ManifestRecord`]. A blob of little-endian `i16`
//! PCM samples follows iff the record carries `audio` metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ManifestRecord, PipeError, Result, Utterance};

pub const SHARD_MAGIC: &[u8; 8] = b"DOLPSHRD";
pub const SHARD_VERSION: u16 = 1;
pub const SHARD_EXTENSION: &str = "dshard";
pub const SHARD_INDEX: &str = "shards.json";

const HEADER_LEN: u64 = 10;
const MAX_CHUNK: u32 = 1 << 28;
const IO_BUFFER: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub path: PathBuf,
    pub record_count: u64,
    pub byte_length: u64,
    pub bucket_id: usize,
}

/// JSON payload bytes of one record, exactly as stored.
pub fn encode_record(rec: &ManifestRecord) -> Vec<u8> {
    serde_json::to_vec(rec).expect("ManifestRecord serializes")
}

pub struct ShardWriter<W: Write> {
    inner: W,
    records: u64,
    bytes: u64,
}

impl<W: Write> ShardWriter<W> {
    pub fn new(mut inner: W) -> std::io::Result<Self> {
        inner.write_all(SHARD_MAGIC)?;
        inner.write_all(&SHARD_VERSION.to_be_bytes())?;
        Ok(Self { inner, records: 0, bytes: HEADER_LEN })
    }

    fn chunk(&mut self, data: &[u8]) -> std::io::Result<()> {
        let len = u32::try_from(data.len())
            .ok()
            .filter(|&l| l <= MAX_CHUNK)
            .ok_or_else(|| std::io::Error::new(ErrorKind::InvalidInput, "record too large"))?;
        self.inner.write_all(&len.to_be_bytes())?;
        self.inner.write_all(data)?;
        self.bytes += 4 + data.len() as u64;
        Ok(())
    }

    /// Appends one record. `samples` must be present exactly when the record
    /// has audio metadata, with matching length.
    pub fn push(&mut self, rec: &ManifestRecord, samples: Option<&[i16]>) -> std::io::Result<()> {
        match (rec.audio, samples) {
            (None, None) => {}
            (Some(a), Some(s)) if a.num_samples == s.len() as u64 => {}
            _ => {
                return Err(std::io::Error::new(
                    ErrorKind::InvalidInput,
                    format!("record {:?}: audio metadata and payload disagree", rec.id),
                ))
            }
        }
        self.chunk(&encode_record(rec))?;
        if let Some(s) = samples {
            let blob: Vec<u8> = s.iter().flat_map(|x| x.to_le_bytes()).collect();
            self.chunk(&blob)?;
        }
        self.records += 1;
        Ok(())
    }

    /// Flushes and returns `(writer, record count, byte length)`.
    pub fn finish(mut self) -> std::io::Result<(W, u64, u64)> {
        self.inner.flush()?;
        Ok((self.inner, self.records, self.bytes))
    }
}

/// Sequential reader over one shard.
pub struct ShardReader<R: Read> {
    inner: R,
    path: PathBuf,
    offset: u64,
    done: bool,
}

impl ShardReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(PipeError::io(path))?;
        Self::new(BufReader::with_capacity(IO_BUFFER, file), path)
    }
}

impl<R: Read> ShardReader<R> {
    pub fn new(mut inner: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut header = [0u8; HEADER_LEN as usize];
        if let Err(e) = inner.read_exact(&mut header) {
            return Err(if e.kind() == ErrorKind::UnexpectedEof {
                PipeError::BadMagic(path)
            } else {
                PipeError::Io { path, source: e }
            });
        }
        if &header[..8] != SHARD_MAGIC {
            return Err(PipeError::BadMagic(path));
        }
        let version = u16::from_be_bytes([header[8], header[9]]);
        if version != SHARD_VERSION {
            return Err(PipeError::UnsupportedVersion { path, version });
        }
        Ok(Self { inner, path, offset: HEADER_LEN, done: false })
    }

    fn corrupt(&self, offset: u64, reason: impl Into<String>) -> PipeError {
        PipeError::CorruptRecord {
            path: self.path.clone(),
            offset,
            reason: reason.into(),
        }
    }

    /// Reads one length-prefixed chunk. `Ok(None)` on clean end of file
    /// when `eof_ok`.
    fn chunk(&mut self, eof_ok: bool) -> Result<Option<Vec<u8>>> {
        let start = self.offset;
        let mut len = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut len[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(PipeError::Io { path: self.path.clone(), source: e }),
            }
        }
        if got == 0 && eof_ok {
            return Ok(None);
        }
        if got < 4 {
            return Err(self.corrupt(start, "truncated length prefix"));
        }
        let len = u32::from_be_bytes(len);
        if len > MAX_CHUNK {
            return Err(self.corrupt(start, format!("length {len} exceeds limit")));
        }
        let mut buf = vec![0u8; len as usize];
        if let Err(e) = self.inner.read_exact(&mut buf) {
            return Err(if e.kind() == ErrorKind::UnexpectedEof {
                self.corrupt(start, format!("payload shorter than length prefix {len}"))
            } else {
                PipeError::Io { path: self.path.clone(), source: e }
            });
        }
        self.offset += 4 + len as u64;
        Ok(Some(buf))
    }

    /// Next record as raw `(json payload, blob)` bytes.
    pub fn next_raw(&mut self) -> Result<Option<(Vec<u8>, Option<Vec<u8>>)>> {
        let start = self.offset;
        let Some(json) = self.chunk(true)? else {
            return Ok(None);
        };
        let has_audio = serde_json::from_slice::<serde_json::Value>(&json)
            .map_err(|e| self.corrupt(start, e.to_string()))?
            .get("audio")
            .is_some_and(|a| !a.is_null());
        let blob = if has_audio { self.chunk(false)? } else { None };
        Ok(Some((json, blob)))
    }

    fn read_record(&mut self) -> Result<Option<Utterance>> {
        let start = self.offset;
        let Some(json) = self.chunk(true)? else {
            return Ok(None);
        };
        let record: ManifestRecord =
            serde_json::from_slice(&json).map_err(|e| self.corrupt(start, e.to_string()))?;
        let samples = match record.audio {
            None => None,
            Some(a) => {
                let blob = self.chunk(false)?.expect("eof_ok = false");
                if blob.len() as u64 != a.num_samples * 2 {
                    return Err(self.corrupt(start, "audio blob length mismatch"));
                }
                Some(
                    blob.chunks_exact(2)
                        .map(|b| i16::from_le_bytes([b[0], b[1]]))
                        .collect(),
                )
            }
        };
        Ok(Some(Utterance { record, samples }))
    }

    /// Bytes consumed so far, header included.
    pub fn offset(&self) -> u64 {
        self.offset
    }
}

impl<R: Read> Iterator for ShardReader<R> {
    type Item = Result<Utterance>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(u)) => Some(Ok(u)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    ShardReader::open(path)?.collect()
}

fn shard_path(out_dir: &Path, bucket: usize, index: usize) -> PathBuf {
    out_dir.join(format!("shard-b{bucket:03}-{index:05}.{SHARD_EXTENSION}"))
}

fn write_group<'a, I>(items: I, bucket: usize, shard_size: usize, out_dir: &Path) -> Result<Vec<Shard>>
where
    I: IntoIterator<Item = (&'a ManifestRecord, Option<&'a [i16]>)>,
{
    let items: Vec<_> = items.into_iter().collect();
    let mut shards = Vec::new();
    for (index, chunk) in items.chunks(shard_size).enumerate() {
        let path = shard_path(out_dir, bucket, index);
        let file = File::create(&path).map_err(PipeError::io(&path))?;
        let mut w = ShardWriter::new(BufWriter::with_capacity(IO_BUFFER, file)).map_err(PipeError::io(&path))?;
        for (rec, samples) in chunk {
            w.push(rec, *samples).map_err(PipeError::io(&path))?;
        }
        let (_, record_count, byte_length) = w.finish().map_err(PipeError::io(&path))?;
        shards.push(Shard { path, record_count, byte_length, bucket_id: bucket });
    }
    Ok(shards)
}

fn prepare(out_dir: &Path, shard_size: usize) -> Result<()> {
    if shard_size == 0 {
        return Err(PipeError::InvalidParameter("shard_size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(PipeError::io(out_dir))
}

fn write_index(out_dir: &Path, shards: &[Shard]) -> Result<()> {
    let path = out_dir.join(SHARD_INDEX);
    let json = serde_json::to_vec_pretty(shards).expect("shards serialize");
    std::fs::write(&path, json).map_err(PipeError::io(&path))
}

/// Partitions records in order into `ceil(N / shard_size)` shard files.
pub fn write_shards(records: &[ManifestRecord], shard_size: usize, out_dir: impl AsRef<Path>) -> Result<Vec<Shard>> {
    let out_dir = out_dir.as_ref();
    prepare(out_dir, shard_size)?;
    let shards = write_group(records.iter().map(|r| (r, None)), 0, shard_size, out_dir)?;
    write_index(out_dir, &shards)?;
    Ok(shards)
}

pub fn write_utterance_shards(utts: &[Utterance], shard_size: usize, out_dir: impl AsRef<Path>) -> Result<Vec<Shard>> {
    let out_dir = out_dir.as_ref();
    prepare(out_dir, shard_size)?;
    let items = utts.iter().map(|u| (&u.record, u.samples.as_deref()));
    let shards = write_group(items, 0, shard_size, out_dir)?;
    write_index(out_dir, &shards)?;
    Ok(shards)
}

/// Shards each bucket separately; `assignment[i]` is record `i`'s bucket.
pub fn write_bucketed_shards(
    records: &[ManifestRecord],
    assignment: &[usize],
    shard_size: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<Shard>> {
    let out_dir = out_dir.as_ref();
    prepare(out_dir, shard_size)?;
    if assignment.len() != records.len() {
        return Err(PipeError::InvalidParameter("bucket assignment length mismatch".into()));
    }
    let n_buckets = assignment.iter().max().map_or(0, |m| m + 1);
    let mut shards = Vec::new();
    for b in 0..n_buckets {
        let members = records
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a == b)
            .map(|(r, _)| (r, None));
        shards.extend(write_group(members, b, shard_size, out_dir)?);
    }
    write_index(out_dir, &shards)?;
    Ok(shards)
}

/// Shard files in a directory, sorted by name.
pub fn list_shards(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(PipeError::io(dir))? {
        let path = entry.map_err(PipeError::io(dir))?.path();
        if path.extension().is_some_and(|e| e == SHARD_EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Shard `i` goes to reader `i % n_readers`.
fn partition(paths: &[PathBuf], n_readers: usize) -> Vec<Vec<PathBuf>> {
    let mut parts = vec![Vec::new(); n_readers.max(1)];
    let n = parts.len();
    for (i, p) in paths.iter().enumerate() {
        parts[i % n].push(p.clone());
    }
    parts
}

/// Records from many shards, produced by background reader threads that
/// each own a disjoint subset of the shards. Order is stable within a shard
/// and unspecified across readers.
pub struct RecordStream {
    rx: Option<Receiver<Result<Utterance>>>,
    workers: Vec<JoinHandle<()>>,
}

impl Iterator for RecordStream {
    type Item = Result<Utterance>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for RecordStream {
    fn drop(&mut self) {
        // Disconnect first so blocked senders return.
        self.rx.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub fn read_shards(paths: &[PathBuf], n_readers: usize) -> RecordStream {
    let (tx, rx) = sync_channel(4096);
    let workers = partition(paths, n_readers)
        .into_iter()
        .map(|mine| {
            let tx = tx.clone();
            std::thread::spawn(move || {
                for path in mine {
                    let reader = match ShardReader::open(&path) {
                        Ok(r) => r,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    };
                    for item in reader {
                        let failed = item.is_err();
                        if tx.send(item).is_err() || failed {
                            return;
                        }
                    }
                }
            })
        })
        .collect();
    RecordStream { rx: Some(rx), workers }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReadStats {
    pub readers: usize,
    pub shards: usize,
    pub records: u64,
    pub bytes: u64,
    pub seconds: f64,
    pub mb_per_s: f64,
}

/// Reads and parses every record of `paths` with `n_readers` threads and
/// reports throughput.
pub fn bench_read(paths: &[PathBuf], n_readers: usize) -> Result<ReadStats> {
    let parts = partition(paths, n_readers);
    let start = Instant::now();
    let results: Vec<Result<(u64, u64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .map(|mine| {
                s.spawn(move || {
                    let (mut records, mut bytes) = (0u64, 0u64);
                    for path in mine {
                        let mut reader = ShardReader::open(path)?;
                        for item in reader.by_ref() {
                            item?;
                            records += 1;
                        }
                        bytes += reader.offset();
                    }
                    Ok((records, bytes))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("reader thread panicked")).collect()
    });
    let seconds = start.elapsed().as_secs_f64();
    let (mut records, mut bytes) = (0, 0);
    for r in results {
        let (n, b) = r?;
        records += n;
        bytes += b;
    }
    Ok(ReadStats {
        readers: parts.len(),
        shards: paths.len(),
        records,
        bytes,
        seconds,
        mb_per_s: bytes as f64 / 1e6 / seconds.max(1e-9),
    })
}
