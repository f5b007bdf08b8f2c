//! Append-only memory of an agent: scenario context, character notes, the
//! conversation, and the emotions produced by appraisal.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, SharedClock};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("emotion entries must come from the agent, got {0}")]
    EmotionNotFromAgent(Speaker),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Context,
    Character,
    Observation,
    Emotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Player,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Agent => "agent",
            Speaker::Player => "player",
            Speaker::System => "system",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub speaker: Speaker,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

/// Picks the entries that reach a prompt. Only [`FullLog`] exists: the
/// conversations are short enough to include whole.
pub trait Recall {
    fn recall<'a>(&self, store: &'a MemoryStore) -> Vec<&'a MemoryEntry>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FullLog;

impl Recall for FullLog {
    fn recall<'a>(&self, store: &'a MemoryStore) -> Vec<&'a MemoryEntry> {
        store.entries.iter().collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryStore {
    owner: String,
    entries: Vec<MemoryEntry>,
    #[serde(skip, default = "clock::system")]
    clock: SharedClock,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.owner == other.owner && self.entries == other.entries
    }
}

impl MemoryStore {
    pub fn new(owner: impl Into<String>, clock: SharedClock) -> Self {
        Self {
            owner: owner.into(),
            entries: Vec::new(),
            clock,
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_clock(&mut self, clock: SharedClock) {
        self.clock = clock;
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn last_seq(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.seq)
    }

    pub fn append(&mut self, kind: EntryKind, speaker: Speaker, text: &str) -> Result<u64, MemoryError> {
        if text.is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if kind == EntryKind::Emotion && speaker != Speaker::Agent {
            return Err(MemoryError::EmotionNotFromAgent(speaker));
        }
        let seq = self.last_seq() + 1;
        self.entries.push(MemoryEntry {
            seq,
            kind,
            speaker,
            text: text.to_string(),
            created_at: self.clock.now(),
        });
        Ok(seq)
    }

    pub fn count(&self, kind: EntryKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// Full rendering: context and character entries first, verbatim, then
    /// the conversation one entry per line.
    pub fn render_transcript(&self, agent_name: &str, player_name: &str, include_emotions: bool) -> String {
        let entries = FullLog.recall(self);
        let preamble = entries
            .iter()
            .filter(|e| matches!(e.kind, EntryKind::Context | EntryKind::Character))
            .map(|e| e.text.clone());
        let dialogue = render_dialogue(&entries, agent_name, player_name, include_emotions);
        preamble.chain(dialogue).collect::<Vec<_>>().join("\n")
    }

    /// Conversation lines only (observations and, optionally, emotions).
    pub fn render_dialogue(&self, agent_name: &str, player_name: &str, include_emotions: bool) -> String {
        render_dialogue(&FullLog.recall(self), agent_name, player_name, include_emotions).join("\n")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("memory entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses JSONL produced by [`MemoryStore::to_jsonl`], re-checking the
    /// store invariants.
    pub fn from_jsonl(owner: impl Into<String>, text: &str, clock: SharedClock) -> Result<Self, MemoryError> {
        let mut store = Self::new(owner, clock);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry = serde_json::from_str(line).map_err(|e| MemoryError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let bad = |message: &str| MemoryError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            if entry.seq <= store.last_seq() {
                return Err(bad("seq must be strictly increasing"));
            }
            if entry.text.is_empty() {
                return Err(bad("empty text"));
            }
            if entry.kind == EntryKind::Emotion && entry.speaker != Speaker::Agent {
                return Err(bad("emotion entry not spoken by the agent"));
            }
            store.entries.push(entry);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path, owner: impl Into<String>, clock: SharedClock) -> Result<Self, MemoryError> {
        let text = fs::read_to_string(path)?;
        Self::from_jsonl(owner, &text, clock)
    }
}

fn render_dialogue(entries: &[&MemoryEntry], agent_name: &str, player_name: &str, include_emotions: bool) -> Vec<String> {
    entries
        .iter()
        .filter_map(|e| match e.kind {
            EntryKind::Observation => Some(match e.speaker {
                Speaker::Agent => format!("{agent_name}: {}", e.text),
                Speaker::Player => format!("{player_name}: {}", e.text),
                Speaker::System => e.text.clone(),
            }),
            EntryKind::Emotion if include_emotions => Some(format!("({agent_name} feels: {})", e.text)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::logical;

    fn store() -> MemoryStore {
        MemoryStore::new("s1", logical())
    }

    #[test]
    fn first_append_is_seq_one() {
        let mut s = store();
        assert_eq!(s.append(EntryKind::Observation, Speaker::Player, "Hi").unwrap(), 1);
        assert_eq!(s.append(EntryKind::Observation, Speaker::Agent, "Hello").unwrap(), 2);
        let seqs: Vec<_> = s.entries().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn rejects_empty_text() {
        let mut s = store();
        assert!(matches!(
            s.append(EntryKind::Observation, Speaker::Player, ""),
            Err(MemoryError::EmptyText)
        ));
        assert!(s.is_empty());
    }

    #[test]
    fn emotions_belong_to_the_agent() {
        let mut s = store();
        assert!(matches!(
            s.append(EntryKind::Emotion, Speaker::Player, "sad"),
            Err(MemoryError::EmotionNotFromAgent(Speaker::Player))
        ));
        assert!(s.append(EntryKind::Emotion, Speaker::Agent, "sad").is_ok());
    }

    #[test]
    fn empty_store_renders_empty() {
        assert_eq!(store().render_transcript("Chibitea", "Player", true), "");
    }

    #[test]
    fn renders_observations_with_names() {
        let mut s = store();
        s.append(EntryKind::Observation, Speaker::Player, "Hi").unwrap();
        s.append(EntryKind::Observation, Speaker::Agent, "Hello").unwrap();
        assert_eq!(s.render_transcript("Chibitea", "Player", false), "Player: Hi\nChibitea: Hello");
    }

    #[test]
    fn emotion_lines_interleave_at_their_position() {
        let mut s = store();
        s.append(EntryKind::Observation, Speaker::Player, "Hi").unwrap();
        s.append(EntryKind::Emotion, Speaker::Agent, "nervous but hopeful").unwrap();
        s.append(EntryKind::Observation, Speaker::Agent, "Hello").unwrap();
        assert_eq!(
            s.render_transcript("Chibitea", "Player", true),
            "Player: Hi\n(Chibitea feels: nervous but hopeful)\nChibitea: Hello"
        );
        assert!(!s.render_transcript("Chibitea", "Player", false).contains("nervous"));
    }

    #[test]
    fn context_renders_first_and_verbatim() {
        let mut s = store();
        s.append(EntryKind::Observation, Speaker::Player, "Hi").unwrap();
        s.append(EntryKind::Context, Speaker::System, "A café called Wunderbar.").unwrap();
        assert_eq!(
            s.render_transcript("Chibitea", "Player", false),
            "A café called Wunderbar.\nPlayer: Hi"
        );
        assert_eq!(s.render_dialogue("Chibitea", "Player", false), "Player: Hi");
    }

    #[test]
    fn jsonl_rejects_non_increasing_seq() {
        let mut s = store();
        s.append(EntryKind::Observation, Speaker::Player, "a").unwrap();
        let line = s.to_jsonl();
        let doubled = format!("{line}{line}");
        let err = MemoryStore::from_jsonl("s1", &doubled, logical()).unwrap_err();
        assert!(matches!(err, MemoryError::Parse { line: 2, .. }));
    }

    #[test]
    fn jsonl_uses_rfc3339_timestamps() {
        let mut s = store();
        s.append(EntryKind::Observation, Speaker::Player, "a").unwrap();
        assert_eq!(
            s.to_jsonl(),
            "{\"seq\":1,\"kind\":\"observation\",\"speaker\":\"player\",\"text\":\"a\",\"created_at\":\"2023-01-01T00:00:00Z\"}\n"
        );
    }
}
