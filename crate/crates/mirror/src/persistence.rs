//! Append-only session log and the poem archive.
//!
//! The log holds one JSON object per line. Engine events are written in
//! their native form (`{"event":"Tick","ts":5}`); two extra record kinds,
//! `SessionStarted` and `SettingsChanged`, carry the nonce and settings
//! needed to replay the exact action trace. A crash can leave at most one
//! partial final line: replay skips it with a warning and reopening the log
//! cuts it off before appending.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use mirror_core::affect::{AffectParams, Lexicon};
use mirror_core::engine::{self, Action, EngineConfig, EngineError, EngineEvent, EngineSettings, SessionState};
use mirror_core::poem::{Poem, PoemConfig};
use mirror_core::sampling::SamplingParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line} is not a valid record: {reason}", path.display())]
    CorruptRecord { path: PathBuf, line: usize, reason: String },
    #[error("poem {0} is already archived")]
    DuplicateId(String),
    #[error("{0:?} is not a valid poem id")]
    InvalidId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The replay-relevant part of the engine settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsSnapshot {
    pub timing: EngineConfig,
    pub affect: AffectParams,
    pub sampling: SamplingParams,
    pub poem: PoemConfig,
    pub lexicon: Lexicon,
}

impl From<&EngineSettings> for SettingsSnapshot {
    fn from(s: &EngineSettings) -> Self {
        Self {
            timing: s.timing,
            affect: s.affect,
            sampling: s.sampling,
            poem: s.poem.clone(),
            lexicon: s.lexicon.clone(),
        }
    }
}

impl From<SettingsSnapshot> for EngineSettings {
    fn from(s: SettingsSnapshot) -> Self {
        Self {
            timing: s.timing,
            affect: s.affect,
            sampling: s.sampling,
            poem: s.poem,
            lexicon: s.lexicon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum MetaRecord {
    SessionStarted {
        ts: u64,
        nonce: u64,
        settings: SettingsSnapshot,
    },
    SettingsChanged {
        ts: u64,
        settings: SettingsSnapshot,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum LogRecord {
    Engine(EngineEvent),
    Meta(MetaRecord),
}

impl LogRecord {
    fn parse(line: &str) -> Result<Self, serde_json::Error> {
        let value: serde_json::Value = serde_json::from_str(line)?;
        match value.get("event").and_then(|e| e.as_str()) {
            Some("SessionStarted" | "SettingsChanged") => serde_json::from_value(value).map(LogRecord::Meta),
            _ => serde_json::from_value(value).map(LogRecord::Engine),
        }
    }
}

/// Writer end of a session log.
#[derive(Debug)]
pub struct SessionLog {
    path: PathBuf,
    file: File,
}

impl SessionLog {
    /// Opens `path` for appending, creating it if needed. A partial final
    /// line left by a crash is removed first.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut contents = Vec::new();
        file.read_to_end(&mut contents).map_err(io_err(&path))?;
        if contents.last().is_some_and(|&b| b != b'\n') {
            let keep = contents.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            tracing::warn!(
                path = %path.display(),
                dropped = contents.len() - keep,
                "removing truncated final record"
            );
            file.set_len(keep as u64).map_err(io_err(&path))?;
            file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;
        }
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), PersistError> {
        let mut line = serde_json::to_vec(record).expect("log records always serialise");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }

    pub fn append_event(&mut self, event: &EngineEvent) -> Result<(), PersistError> {
        self.append(&LogRecord::Engine(event.clone()))
    }
}

/// Everything read back from a log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Replay {
    pub records: Vec<LogRecord>,
    /// 1-based line number of a skipped partial final line.
    pub skipped_tail: Option<usize>,
}

impl Replay {
    pub fn events(&self) -> Vec<EngineEvent> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Engine(e) => Some(e.clone()),
                LogRecord::Meta(_) => None,
            })
            .collect()
    }

    pub fn nonce(&self) -> Option<u64> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Meta(MetaRecord::SessionStarted { nonce, .. }) => Some(*nonce),
            _ => None,
        })
    }

    /// Runs the log through the engine from `init`, applying recorded
    /// settings changes in place. `defaults` and `nonce` are used when the
    /// log carries no `SessionStarted` record.
    pub fn trace(
        &self,
        defaults: &EngineSettings,
        nonce: u64,
    ) -> Result<(SessionState, Vec<Action>), EngineError> {
        let mut settings = defaults.clone();
        let mut state = None;
        let mut actions = Vec::new();
        for record in &self.records {
            match record {
                LogRecord::Meta(MetaRecord::SessionStarted { nonce, settings: s, .. }) => {
                    settings = s.clone().into();
                    state = Some(engine::init(&settings.timing, *nonce)?);
                }
                LogRecord::Meta(MetaRecord::SettingsChanged { settings: s, .. }) => {
                    settings = s.clone().into();
                }
                LogRecord::Engine(event) => {
                    let current = match state.take() {
                        Some(s) => s,
                        None => engine::init(&settings.timing, nonce)?,
                    };
                    let (next, out) = engine::step(&current, event, &settings)?;
                    state = Some(next);
                    actions.extend(out);
                }
            }
        }
        let state = match state {
            Some(s) => s,
            None => engine::init(&settings.timing, nonce)?,
        };
        Ok((state, actions))
    }
}

pub fn replay(path: &Path) -> Result<Replay, PersistError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_log(path, &bytes)
}

/// The engine events of a log, in order.
pub fn replay_events(path: &Path) -> Result<Vec<EngineEvent>, PersistError> {
    Ok(replay(path)?.events())
}

pub fn parse_log(path: &Path, bytes: &[u8]) -> Result<Replay, PersistError> {
    let mut out = Replay::default();
    let complete = bytes.last().is_none_or(|&b| b == b'\n');
    let lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    // `split` yields a trailing empty slice after the final newline.
    let count = if complete { lines.len() - 1 } else { lines.len() };
    for (i, raw) in lines[..count].iter().enumerate() {
        let parsed = std::str::from_utf8(raw)
            .map_err(|e| e.to_string())
            .and_then(|line| LogRecord::parse(line).map_err(|e| e.to_string()));
        match parsed {
            Ok(record) => out.records.push(record),
            Err(_) if i + 1 == count && !complete => {
                tracing::warn!(path = %path.display(), line = i + 1, "skipping truncated final record");
                out.skipped_tail = Some(i + 1);
            }
            Err(reason) => {
                return Err(PersistError::CorruptRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason,
                })
            }
        }
    }
    Ok(out)
}

/// An archived poem: every poem field plus archive bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoemRecord {
    #[serde(flatten)]
    pub poem: Poem,
    pub archived_at: u64,
    pub sequence: u64,
}

/// One row of `index.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub sequence: u64,
    pub id: String,
    pub created_at: u64,
}

pub const INDEX_FILE: &str = "index.csv";

/// Ids become file names, so they are limited to a safe alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// One `<id>.json` file per poem plus `index.csv`.
#[derive(Debug)]
pub struct PoemArchive {
    dir: PathBuf,
    ids: HashSet<String>,
    next_sequence: u64,
}

impl PoemArchive {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut archive = Self {
            dir,
            ids: HashSet::new(),
            next_sequence: 1,
        };
        for entry in archive.index()? {
            archive.next_sequence = archive.next_sequence.max(entry.sequence + 1);
            archive.ids.insert(entry.id);
        }
        Ok(archive)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX_FILE)
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Stores `poem` under the next sequence number. The record file is
    /// written before the index row, so an interrupted call leaves at most
    /// an unindexed file that a retry overwrites.
    pub fn archive(&mut self, poem: &Poem, archived_at: u64) -> Result<PoemRecord, PersistError> {
        if !valid_id(&poem.id) {
            return Err(PersistError::InvalidId(poem.id.clone()));
        }
        if self.ids.contains(&poem.id) {
            return Err(PersistError::DuplicateId(poem.id.clone()));
        }
        let record = PoemRecord {
            poem: poem.clone(),
            archived_at,
            sequence: self.next_sequence,
        };
        let path = self.record_path(&poem.id);
        let tmp = path.with_extension("json.tmp");
        let json = serde_json::to_vec_pretty(&record).expect("poem records always serialise");
        std::fs::write(&tmp, json).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;

        let index = self.index_path();
        let fresh = !index.exists();
        let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(Vec::new());
        writer
            .serialize(IndexEntry {
                sequence: record.sequence,
                id: poem.id.clone(),
                created_at: poem.created_at,
            })
            .expect("index rows always serialise");
        let row = writer.into_inner().expect("writing to a Vec");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(io_err(&index))?;
        file.write_all(&row).map_err(io_err(&index))?;

        self.ids.insert(poem.id.clone());
        self.next_sequence += 1;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<Option<PoemRecord>, PersistError> {
        if !self.ids.contains(id) {
            return Ok(None);
        }
        read_record(&self.dir, id)
    }

    /// The index rows in file order.
    pub fn index(&self) -> Result<Vec<IndexEntry>, PersistError> {
        read_index(&self.dir)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Reads `<id>.json` from an archive directory without opening it for
/// writing. Unknown or malformed ids give `None`.
pub fn read_record(dir: &Path, id: &str) -> Result<Option<PoemRecord>, PersistError> {
    if !valid_id(id) {
        return Ok(None);
    }
    let path = dir.join(format!("{id}.json"));
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&path)(e)),
    };
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| PersistError::CorruptRecord {
            path,
            line: e.line(),
            reason: e.to_string(),
        })
}

/// The rows of an archive's `index.csv` in file order.
pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>, PersistError> {
    let path = dir.join(INDEX_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| PersistError::CorruptRecord {
                path: path.clone(),
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}
