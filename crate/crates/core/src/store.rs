//! Append-only, line-delimited stage files.
//!
//! Each stage of a language pair lives in `<data_root>/<src>-<dst>/<stage>.jsonl`.
//! The first line is a header carrying the schema version; every following
//! line is one JSON record with a strictly increasing id. A line is only
//! valid once its terminating newline is on disk, so a torn write at the end
//! of a file is detected and reported rather than returned.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::lang::LangCode;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Catalog,
    SubtitlePair,
    Dialogue,
    Sentence,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Catalog, Stage::SubtitlePair, Stage::Dialogue, Stage::Sentence];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Catalog => "catalog",
            Stage::SubtitlePair => "subtitle_pair",
            Stage::Dialogue => "dialogue",
            Stage::Sentence => "sentence",
        }
    }
}

/// A type stored in its own record file.
pub trait Payload: Serialize + DeserializeOwned {
    /// File stem, e.g. `dialogue` for `dialogue.jsonl`.
    const FILE: &'static str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub id: u64,
    pub run_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub payload: T,
}

#[derive(Serialize)]
struct RecordRef<'a, T> {
    id: u64,
    run_id: &'a str,
    created_at: u64,
    payload: &'a T,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    stage: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot encode record: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("store {0} is locked by another writer (remove the .lock file if that process is gone)")]
    Locked(PathBuf),
    #[error("{path} has schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { path: PathBuf, found: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Where a stage file stops being readable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    /// Byte offset of the first invalid line.
    pub offset: u64,
    /// 1-based line number of the first invalid line.
    pub line: usize,
    pub reason: String,
}

/// Stage files of one language pair.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(data_root: &Path, source: &LangCode, target: &LangCode) -> Result<Store, StoreError> {
        let dir = data_root.join(format!("{source}-{target}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(format!("{file}.jsonl"))
    }

    /// Takes the writer lock, held until the guard is dropped.
    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        let path = self.dir.join(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(StoreLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(self.dir.clone())),
            Err(fs::TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }

    /// Writer that replaces the whole file when [`StageWriter::finish`] is
    /// called. Until then readers keep seeing the old contents.
    pub fn replace<T: Payload>(&self, run_id: &str) -> Result<StageWriter<T>, StoreError> {
        let path = self.path(T::FILE);
        let tmp = NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        let file = tmp.as_file().try_clone().map_err(io_err(&path))?;
        let mut writer = StageWriter::new(path, file, run_id, 0, Some(tmp));
        writer.write_header::<T>()?;
        Ok(writer)
    }

    /// Writer that appends after the last valid record. A torn tail left by
    /// an earlier crash is cut off first.
    pub fn append<T: Payload>(&self, run_id: &str) -> Result<StageWriter<T>, StoreError> {
        let path = self.path(T::FILE);
        let mut last_id = 0;
        let mut valid_end = 0;
        let mut has_header = false;
        if path.exists() {
            let mut scan = Scan::<IgnoredAny>::open(&path)?;
            for rec in &mut scan {
                last_id = rec?.id;
            }
            has_header = scan.header_seen;
            valid_end = scan.valid_end;
            if let Some(t) = scan.truncation() {
                log::warn!("{}: discarding invalid tail at line {} ({})", path.display(), t.line, t.reason);
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.set_len(valid_end).map_err(io_err(&path))?;
        file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        let mut writer = StageWriter::new(path, file, run_id, last_id, None);
        if !has_header {
            writer.write_header::<T>()?;
        }
        Ok(writer)
    }

    pub fn scan<T: Payload>(&self) -> Result<Scan<T>, StoreError> {
        Scan::open(&self.path(T::FILE))
    }

    /// Records of `T` matching `predicate`, in append order.
    pub fn scan_where<T: Payload>(
        &self,
        mut predicate: impl FnMut(&StageRecord<T>) -> bool,
    ) -> Result<impl Iterator<Item = Result<StageRecord<T>, StoreError>>, StoreError> {
        Ok(self.scan::<T>()?.filter(move |r| r.as_ref().map_or(true, &mut predicate)))
    }

    /// Number of valid records in a stage file.
    pub fn count(&self, stage: Stage) -> Result<usize, StoreError> {
        self.count_file(stage.name())
    }

    pub(crate) fn count_file(&self, file: &str) -> Result<usize, StoreError> {
        let mut n = 0;
        for rec in Scan::<IgnoredAny>::open(&self.path(file))? {
            rec?;
            n += 1;
        }
        Ok(n)
    }

    /// Truncation report for a stage file, if its tail is invalid.
    pub fn check(&self, stage: Stage) -> Result<Option<Truncation>, StoreError> {
        let mut scan = Scan::<IgnoredAny>::open(&self.path(stage.name()))?;
        for rec in &mut scan {
            rec?;
        }
        Ok(scan.truncation().cloned())
    }
}

/// Exclusive writer lock on a store directory.
#[derive(Debug)]
pub struct StoreLock {
    _file: File,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Buffered appender. Records become durable when a batch is committed:
/// automatically every `batch_size` appends, and on [`commit`](Self::commit)
/// or [`finish`](Self::finish).
pub struct StageWriter<T> {
    path: PathBuf,
    out: BufWriter<File>,
    run_id: String,
    next_id: u64,
    pending: usize,
    batch_size: usize,
    committed_id: u64,
    tmp: Option<NamedTempFile>,
    _payload: PhantomData<fn(&T)>,
}

impl<T: Payload> StageWriter<T> {
    fn new(path: PathBuf, file: File, run_id: &str, last_id: u64, tmp: Option<NamedTempFile>) -> Self {
        StageWriter {
            path,
            out: BufWriter::new(file),
            run_id: run_id.to_owned(),
            next_id: last_id + 1,
            pending: 0,
            batch_size: DEFAULT_BATCH_SIZE,
            committed_id: last_id,
            tmp,
            _payload: PhantomData,
        }
    }

    fn write_header<P: Payload>(&mut self) -> Result<(), StoreError> {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            stage: P::FILE.to_owned(),
        };
        let line = serde_json::to_string(&header)?;
        writeln!(self.out, "{line}").map_err(io_err(&self.path))
    }

    /// Records per durable batch; `1` makes every append durable on return.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn append(&mut self, payload: &T) -> Result<u64, StoreError> {
        let id = self.next_id;
        let record = RecordRef {
            id,
            run_id: self.run_id.as_str(),
            created_at: now_ms(),
            payload,
        };
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.out.write_all(&line).map_err(io_err(&self.path))?;
        self.next_id += 1;
        self.pending += 1;
        if self.pending >= self.batch_size {
            self.commit()?;
        }
        Ok(id)
    }

    /// Flushes and syncs pending records. Returns the last durable id.
    pub fn commit(&mut self) -> Result<u64, StoreError> {
        self.out.flush().map_err(io_err(&self.path))?;
        self.out.get_ref().sync_data().map_err(io_err(&self.path))?;
        self.pending = 0;
        self.committed_id = self.next_id - 1;
        Ok(self.committed_id)
    }

    pub fn committed_id(&self) -> u64 {
        self.committed_id
    }

    /// Commits, and for replacing writers swaps the new file into place.
    pub fn finish(mut self) -> Result<u64, StoreError> {
        let last = self.commit()?;
        if let Some(tmp) = self.tmp.take() {
            tmp.persist(&self.path).map_err(|e| io_err(&self.path)(e.error))?;
        }
        Ok(last)
    }
}

/// Streaming reader over one record file. Stops at the first invalid line;
/// see [`Scan::truncation`].
pub struct Scan<T> {
    reader: Option<BufReader<File>>,
    path: PathBuf,
    line: usize,
    offset: u64,
    valid_end: u64,
    last_id: u64,
    header_seen: bool,
    truncation: Option<Truncation>,
    buf: Vec<u8>,
    _payload: PhantomData<fn() -> T>,
}

impl<T: DeserializeOwned> Scan<T> {
    fn open(path: &Path) -> Result<Self, StoreError> {
        let reader = match File::open(path) {
            Ok(f) => Some(BufReader::new(f)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(path)(e)),
        };
        Ok(Scan {
            reader,
            path: path.to_owned(),
            line: 0,
            offset: 0,
            valid_end: 0,
            last_id: 0,
            header_seen: false,
            truncation: None,
            buf: Vec::new(),
            _payload: PhantomData,
        })
    }

    /// Set once iteration has stopped at an invalid line.
    pub fn truncation(&self) -> Option<&Truncation> {
        self.truncation.as_ref()
    }

    fn stop(&mut self, reason: String) {
        self.truncation = Some(Truncation {
            offset: self.offset,
            line: self.line,
            reason,
        });
        self.reader = None;
    }

    fn next_line(&mut self) -> Option<Result<(), StoreError>> {
        let reader = self.reader.as_mut()?;
        self.buf.clear();
        self.offset = self.valid_end;
        match reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => {
                self.reader = None;
                None
            }
            Ok(_) => {
                self.line += 1;
                if self.buf.last() != Some(&b'\n') {
                    self.stop("incomplete final line".into());
                    return None;
                }
                Some(Ok(()))
            }
            Err(e) => {
                self.reader = None;
                Some(Err(io_err(&self.path)(e)))
            }
        }
    }
}

impl<T: DeserializeOwned> Iterator for Scan<T> {
    type Item = Result<StageRecord<T>, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.header_seen {
            if let Err(e) = self.next_line()? {
                return Some(Err(e));
            }
            match serde_json::from_slice::<Header>(&self.buf) {
                Ok(h) if h.schema_version == SCHEMA_VERSION => {}
                Ok(h) => {
                    self.reader = None;
                    return Some(Err(StoreError::Schema {
                        path: self.path.clone(),
                        found: h.schema_version,
                    }));
                }
                Err(e) => {
                    self.stop(format!("invalid header: {e}"));
                    return None;
                }
            }
            self.header_seen = true;
            self.valid_end += self.buf.len() as u64;
        }
        if let Err(e) = self.next_line()? {
            return Some(Err(e));
        }
        match serde_json::from_slice::<StageRecord<T>>(&self.buf) {
            Ok(rec) if rec.id == self.last_id + 1 => {
                self.last_id = rec.id;
                self.valid_end += self.buf.len() as u64;
                Some(Ok(rec))
            }
            Ok(rec) => {
                self.stop(format!("record id {} does not follow {}", rec.id, self.last_id));
                None
            }
            Err(e) => {
                self.stop(format!("unparseable record: {e}"));
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Note {
        n: u64,
        text: String,
    }

    impl Payload for Note {
        const FILE: &'static str = "dialogue";
    }

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), &"en".parse().unwrap(), &"fa".parse().unwrap()).unwrap();
        (dir, store)
    }

    fn note(n: u64) -> Note {
        Note { n, text: format!("note {n} «ok»") }
    }

    fn read_all(store: &Store) -> Vec<Note> {
        store.scan::<Note>().unwrap().map(|r| r.unwrap().payload).collect()
    }

    #[test]
    fn empty_store() {
        let (_d, store) = store();
        assert!(read_all(&store).is_empty());
        assert_eq!(store.count(Stage::Dialogue).unwrap(), 0);
        assert_eq!(store.check(Stage::Dialogue).unwrap(), None);
    }

    #[test]
    fn append_then_scan() {
        let (_d, store) = store();
        let mut w = store.append::<Note>("run").unwrap();
        let a = w.append(&note(1)).unwrap();
        let b = w.append(&note(2)).unwrap();
        assert!(b > a);
        w.finish().unwrap();
        assert_eq!(read_all(&store), vec![note(1), note(2)]);
        assert_eq!(store.count(Stage::Dialogue).unwrap(), 2);

        let mut w = store.append::<Note>("run2").unwrap();
        assert_eq!(w.append(&note(3)).unwrap(), 3);
        w.finish().unwrap();
        let recs: Vec<_> = store.scan::<Note>().unwrap().map(Result::unwrap).collect();
        assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(recs[2].run_id, "run2");
    }

    #[test]
    fn replace_swaps_on_finish_only() {
        let (_d, store) = store();
        let mut w = store.replace::<Note>("r1").unwrap();
        w.append(&note(1)).unwrap();
        w.finish().unwrap();

        let mut w = store.replace::<Note>("r2").unwrap();
        w.append(&note(7)).unwrap();
        w.commit().unwrap();
        assert_eq!(read_all(&store), vec![note(1)]);
        w.finish().unwrap();
        assert_eq!(read_all(&store), vec![note(7)]);

        let mut w = store.replace::<Note>("r3").unwrap();
        w.append(&note(9)).unwrap();
        drop(w);
        assert_eq!(read_all(&store), vec![note(7)]);
        let leftovers = fs::read_dir(store.dir()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn garbage_tail_is_reported_and_cut_on_append() {
        let (_d, store) = store();
        let mut w = store.append::<Note>("r").unwrap();
        for n in 1..=3 {
            w.append(&note(n)).unwrap();
        }
        w.finish().unwrap();
        let path = store.path("dialogue");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":4,\"run_id\":\"r\",\"crea").unwrap();
        drop(f);

        let mut scan = store.scan::<Note>().unwrap();
        let got: Vec<_> = (&mut scan).map(|r| r.unwrap().payload).collect();
        assert_eq!(got, vec![note(1), note(2), note(3)]);
        let t = scan.truncation().unwrap();
        assert_eq!(t.line, 5);
        assert_eq!(store.count(Stage::Dialogue).unwrap(), 3);

        let mut w = store.append::<Note>("r").unwrap();
        assert_eq!(w.append(&note(4)).unwrap(), 4);
        w.finish().unwrap();
        assert_eq!(read_all(&store).len(), 4);
        assert_eq!(store.check(Stage::Dialogue).unwrap(), None);
    }

    #[test]
    fn out_of_sequence_id_stops_scan() {
        let (_d, store) = store();
        let mut w = store.append::<Note>("r").unwrap();
        w.append(&note(1)).unwrap();
        w.finish().unwrap();
        let path = store.path("dialogue");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{{\"id\":9,\"run_id\":\"r\",\"created_at\":0,\"payload\":{{\"n\":9,\"text\":\"x\"}}}}").unwrap();
        drop(f);
        assert_eq!(read_all(&store), vec![note(1)]);
    }

    #[test]
    fn filtered_scan() {
        let (_d, store) = store();
        let mut w = store.append::<Note>("r").unwrap();
        for n in 0..10_000 {
            w.append(&note(n)).unwrap();
        }
        w.finish().unwrap();
        let evens: Vec<u64> = store
            .scan_where::<Note>(|r| r.payload.n % 2 == 0)
            .unwrap()
            .map(|r| r.unwrap().payload.n)
            .collect();
        assert_eq!(evens.len(), 5000);
        assert!(evens.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn lock_is_exclusive() {
        let (_d, store) = store();
        let guard = store.lock().unwrap();
        assert!(matches!(store.lock(), Err(StoreError::Locked(_))));
        drop(guard);
        store.lock().unwrap();
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let (_d, store) = store();
        fs::write(store.path("dialogue"), "{\"schema_version\":99,\"stage\":\"dialogue\"}\n").unwrap();
        let first = store.scan::<Note>().unwrap().next().unwrap();
        assert!(matches!(first, Err(StoreError::Schema { found: 99, .. })));
    }
}
