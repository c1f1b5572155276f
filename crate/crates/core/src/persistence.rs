//! File-backed stores shared by the pipeline: append-only logs with sequence
//! prefixes, atomic snapshot files, and the checkpoint registry.
//!
//! Framing is fixed here: one record per line, tab-separated fields with
//! escaped separators, and a strictly increasing sequence number prefixing
//! every log record. Record schemas belong to the owning modules.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    Missing(PathBuf),
    #[error("corrupt record at {path}:{line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Escape a field so it can sit inside a tab-separated line.
pub fn escape_field(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

pub fn unescape_field(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn encode_line(fields: &[&str]) -> String {
    fields
        .iter()
        .map(|f| escape_field(f))
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn decode_line(line: &str) -> Vec<String> {
    line.split('\t').map(unescape_field).collect()
}

/// A replayed log: complete records in order, plus whether a trailing partial
/// record was dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub records: Vec<Vec<String>>,
    pub truncated: bool,
}

/// Append-only, sequence-prefixed record log.
///
/// The file is never truncated by this type; appends reopen the file in
/// append mode so multiple short-lived handles interleave safely under the
/// single-writer discipline the callers observe.
#[derive(Debug, Clone)]
pub struct AppendLog {
    path: PathBuf,
    next_seq: u64,
}

impl AppendLog {
    /// Open (creating if absent) and position the sequence counter after the
    /// last complete record.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let next_seq = match fs::read_to_string(&path) {
            Ok(content) => {
                let (_, last_seq) = parse_log(&path, &content)?;
                last_seq.map(|s| s + 1).unwrap_or(0)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(io_err(&path, e)),
        };
        Ok(AppendLog { path, next_seq })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durable append; returns the record's sequence number.
    pub fn append(&mut self, fields: &[&str]) -> Result<u64, StoreError> {
        self.append_all(std::slice::from_ref(&fields))
    }

    /// Append several records in one write; returns the first sequence used.
    pub fn append_all(&mut self, records: &[&[&str]]) -> Result<u64, StoreError> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| io_err(&self.path, e))?;
            }
        }
        let first = self.next_seq;
        let mut buf = String::new();
        for fields in records {
            buf.push_str(&self.next_seq.to_string());
            if !fields.is_empty() {
                buf.push('\t');
                buf.push_str(&encode_line(fields));
            }
            buf.push('\n');
            self.next_seq += 1;
        }
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        file.write_all(buf.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        file.flush().map_err(|e| io_err(&self.path, e))?;
        Ok(first)
    }

    /// Replay all complete records (sequence prefix stripped). A log handle
    /// whose file was never written replays empty.
    pub fn replay(&self) -> Result<Replay, StoreError> {
        match replay_path(&self.path) {
            Ok(replay) => Ok(replay),
            Err(StoreError::Missing(_)) => Ok(Replay {
                records: Vec::new(),
                truncated: false,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Replay a log file without opening it for writing.
pub fn replay_path(path: &Path) -> Result<Replay, StoreError> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(StoreError::Missing(path.to_path_buf()))
        }
        Err(e) => return Err(io_err(path, e)),
    };
    let (replay, _) = parse_log(path, &content)?;
    Ok(replay)
}

fn parse_log(path: &Path, content: &str) -> Result<(Replay, Option<u64>), StoreError> {
    let mut records = Vec::new();
    let mut truncated = false;
    let mut last_seq: Option<u64> = None;
    for (idx, line) in content.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        let body = line.trim_end_matches('\n');
        if !complete {
            // Partial trailing write: stop at the last complete record.
            truncated = true;
            break;
        }
        if body.is_empty() {
            continue;
        }
        let mut fields = decode_line(body);
        let seq: u64 = match fields.first().and_then(|s| s.parse().ok()) {
            Some(s) => s,
            None => {
                truncated = true;
                break;
            }
        };
        if let Some(prev) = last_seq {
            if seq <= prev {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    detail: format!("sequence {seq} not increasing after {prev}"),
                });
            }
        }
        last_seq = Some(seq);
        fields.remove(0);
        records.push(fields);
    }
    Ok((Replay { records, truncated }, last_seq))
}

/// Latest-state table persisted with write-temp-then-rename semantics.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    path: PathBuf,
}

const SNAPSHOT_HEADER: &str = "# snapshot v1";

impl SnapshotStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SnapshotStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    /// Atomically replace the snapshot contents.
    pub fn write(&self, records: &[Vec<String>]) -> Result<(), StoreError> {
        let mut buf = String::from(SNAPSHOT_HEADER);
        buf.push('\n');
        for record in records {
            let fields: Vec<&str> = record.iter().map(String::as_str).collect();
            buf.push_str(&encode_line(&fields));
            buf.push('\n');
        }
        write_atomic(&self.path, buf.as_bytes())
    }

    pub fn read(&self) -> Result<Vec<Vec<String>>, StoreError> {
        let content = match fs::read_to_string(&self.path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::Missing(self.path.clone()))
            }
            Err(e) => return Err(io_err(&self.path, e)),
        };
        let mut out = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let _ = idx;
            out.push(decode_line(line));
        }
        Ok(out)
    }

    /// Read if present, else empty.
    pub fn read_or_default(&self) -> Result<Vec<Vec<String>>, StoreError> {
        match self.read() {
            Ok(r) => Ok(r),
            Err(StoreError::Missing(_)) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}

/// Atomic file replace (temp file in the same directory, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Directory of checkpoint files named by version hash plus a `CURRENT`
/// pointer file. The pointer is only updated after the checkpoint bytes are
/// durably in place, so it always names an existing file.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    dir: PathBuf,
}

impl ModelRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ModelRegistry { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn checkpoint_path(&self, version: &str) -> PathBuf {
        self.dir.join(format!("{version}.ckpt"))
    }

    fn current_path(&self) -> PathBuf {
        self.dir.join("CURRENT")
    }

    /// Install checkpoint bytes under `version` and advance `CURRENT`.
    pub fn install(&self, version: &str, bytes: &[u8]) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        write_atomic(&self.checkpoint_path(version), bytes)?;
        write_atomic(&self.current_path(), version.as_bytes())
    }

    pub fn current_version(&self) -> Result<Option<String>, StoreError> {
        match fs::read_to_string(self.current_path()) {
            Ok(v) => Ok(Some(v.trim().to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&self.current_path(), e)),
        }
    }

    pub fn load(&self, version: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.checkpoint_path(version);
        fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::Missing(path.clone()),
            _ => io_err(&path, e),
        })
    }

    pub fn load_current(&self) -> Result<Option<(String, Vec<u8>)>, StoreError> {
        match self.current_version()? {
            Some(v) => {
                let bytes = self.load(&v)?;
                Ok(Some((v, bytes)))
            }
            None => Ok(None),
        }
    }

    pub fn versions(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&self.dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| io_err(&self.dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".ckpt") {
                out.push(stem.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Store the pretrained backbone bytes produced by the pretrain step.
    pub fn install_base(&self, bytes: &[u8]) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        write_atomic(&self.dir.join("base.plm"), bytes)
    }

    pub fn load_base(&self) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.dir.join("base.plm");
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}
