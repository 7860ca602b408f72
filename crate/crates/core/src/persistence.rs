//! Append-only transcript storage, one JSON [`Turn`] record per line.
//!
//! Layout under the data directory:
//!
//! ```text
//! <session_id>.meta.json   session metadata (config, created_at)
//! <session_id>.jsonl       turn records; each committed turn appends its
//!                          user and assistant records with a single write
//! ```
//!
//! Recovery keeps the longest prefix of complete user/assistant pairs and
//! truncates anything after it (a torn write from a crash).

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::model::{ConversationHistory, HistoryError, Role, TimestampMs, Turn};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("corrupt metadata for {id}: {message}")]
    Meta { id: String, message: String },
    #[error("records must be a user turn followed by an assistant turn")]
    NotAPair,
    #[error(transparent)]
    History(#[from] HistoryError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub created_at: TimestampMs,
    pub config: SessionConfig,
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl TranscriptStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn check(&self, id: &str) -> Result<(), PersistError> {
        if valid_id(id) {
            Ok(())
        } else {
            Err(PersistError::InvalidId(id.to_string()))
        }
    }

    pub fn transcript_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.meta.json"))
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.meta_path(id).is_file()
    }

    /// Writes session metadata (atomically, via rename) and an empty transcript.
    pub fn create(&self, meta: &SessionMeta) -> Result<(), PersistError> {
        self.check(&meta.session_id)?;
        let path = self.meta_path(&meta.session_id);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        let transcript = self.transcript_path(&meta.session_id);
        OpenOptions::new().create(true).append(true).open(&transcript).map_err(io_err(&transcript))?;
        Ok(())
    }

    pub fn load_meta(&self, id: &str) -> Result<SessionMeta, PersistError> {
        self.check(id)?;
        let path = self.meta_path(id);
        let body = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(PersistError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        serde_json::from_slice(&body).map_err(|e| PersistError::Meta { id: id.to_string(), message: e.to_string() })
    }

    /// Appends one committed turn. Both records go out in a single write
    /// followed by `fsync`, so recovery sees both or neither.
    pub fn append_pair(&self, id: &str, user: &Turn, assistant: &Turn) -> Result<(), PersistError> {
        self.check(id)?;
        if user.role != Role::User || assistant.role != Role::Assistant || assistant.turn_index != user.turn_index + 1 {
            return Err(PersistError::NotAPair);
        }
        let mut buf = serde_json::to_vec(user).expect("turn serializes");
        buf.push(b'\n');
        buf.extend(serde_json::to_vec(assistant).expect("turn serializes"));
        buf.push(b'\n');

        let path = self.transcript_path(id);
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        file.write_all(&buf).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        Ok(())
    }

    /// Reads back all committed turns, truncating a torn tail if one is found.
    pub fn recover(&self, id: &str) -> Result<Vec<Turn>, PersistError> {
        self.check(id)?;
        let path = self.transcript_path(id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(PersistError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut reader = BufReader::new(file);
        let mut turns = Vec::new();
        let mut valid_len: u64 = 0;
        let mut offset: u64 = 0;
        let mut pending: Option<Turn> = None;
        let mut line = Vec::new();
        let mut torn = false;
        loop {
            line.clear();
            let n = reader.read_until(b'\n', &mut line).map_err(io_err(&path))?;
            if n == 0 {
                break;
            }
            offset += n as u64;
            if line.last() != Some(&b'\n') {
                torn = true;
                break;
            }
            let Ok(turn) = serde_json::from_slice::<Turn>(&line) else {
                torn = true;
                break;
            };
            match (pending.take(), turn.role) {
                (None, Role::User) => pending = Some(turn),
                (Some(user), Role::Assistant) if turn.turn_index == user.turn_index + 1 => {
                    turns.push(user);
                    turns.push(turn);
                    valid_len = offset;
                }
                _ => {
                    torn = true;
                    break;
                }
            }
        }
        if torn || pending.is_some() || valid_len != offset {
            let file = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            file.set_len(valid_len).map_err(io_err(&path))?;
            file.sync_data().map_err(io_err(&path))?;
            tracing::warn!(session = id, kept_bytes = valid_len, "truncated torn transcript tail");
        }
        Ok(turns)
    }

    /// Rebuilds the conversation history by replaying committed turns.
    pub fn replay_history(&self, id: &str) -> Result<(SessionMeta, ConversationHistory), PersistError> {
        let meta = self.load_meta(id)?;
        let mut history = ConversationHistory::new(meta.config.system_prompt.clone(), meta.config.history_budget)?;
        for turn in self.recover(id)? {
            history.append_turn(turn)?;
        }
        Ok((meta, history))
    }

    pub fn list_sessions(&self) -> Result<Vec<String>, PersistError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let entry = entry.map_err(io_err(&self.dir))?;
            let name = entry.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".meta.json")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
