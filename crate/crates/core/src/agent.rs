//! The three agent architectures and the per-turn orchestration.
//!
//! Every strategy sends one system message (the profile instruction) and one
//! consolidated user message:
//!
//! | strategy           | user message                                   | calls/turn |
//! |--------------------|------------------------------------------------|------------|
//! | `no_memory`        | current player input only                      | 1          |
//! | `memory`           | conversation log                               | 1          |
//! | `chain_of_emotion` | conversation log with appraised emotion lines  | 2          |
//!
//! A chain-of-emotion turn first asks the model how the agent feels (the
//! appraisal prompt), stores that as an emotion entry, then generates the
//! reply from the log including it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::memory::{EntryKind, MemoryError, MemoryStore, Speaker};

/// User-message stand-in when the agent speaks first.
pub const OPENING_CUE: &str = "Begin the conversation.";

pub const AGENT_NAME_PLACEHOLDER: &str = "{agent_name}";

pub const DEFAULT_APPRAISAL_TEMPLATE: &str = "Briefly describe how {agent_name} feels right now given the situation and their personality. Describe why they feel a certain way. {agent_name} feels:";

pub const WUNDERBAR_INSTRUCTION: &str = "You are Chibitea, a creature meeting your romantic partner (you call them Darling) in a fun role-playing game. Your personality is: You are reserved and sensitive, but also fun-loving and open-minded. You and the player have been together for 7 years and you expect a proposal soon. You are very much in love and happy in your relationship. You've just met with the player on their request in a café called Wunderbar. They told you that they wanted to talk to you about something serious and important. Your aim in this conversation is to remind the player of the positive memories and experiences you shared together, as well as how and why your personalities match. Portray your feelings convincingly and accurately. Say what Chibitea responds in 2-3 sentences. Do not describe what Chibitea does. Only provide the dialog.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("unknown strategy {0:?} (expected no-memory, memory or chain-of-emotion)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoMemory,
    Memory,
    ChainOfEmotion,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::NoMemory, Strategy::Memory, Strategy::ChainOfEmotion];

    /// Completions per turn.
    pub fn calls_per_turn(self) -> usize {
        match self {
            Strategy::ChainOfEmotion => 2,
            _ => 1,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Strategy::NoMemory => "no-memory",
            Strategy::Memory => "memory",
            Strategy::ChainOfEmotion => "chain-of-emotion",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Strategy {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "no-memory" | "nomemory" => Ok(Strategy::NoMemory),
            "memory" => Ok(Strategy::Memory),
            "chain-of-emotion" | "coe" => Ok(Strategy::ChainOfEmotion),
            _ => Err(AgentError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_name: String,
    pub player_name: String,
    pub instruction: String,
    pub appraisal_template: String,
}

impl Default for AgentProfile {
    fn default() -> Self {
        Self::wunderbar()
    }
}

impl AgentProfile {
    /// The café breakup scenario.
    pub fn wunderbar() -> Self {
        Self {
            agent_name: "Chibitea".into(),
            player_name: "Player".into(),
            instruction: WUNDERBAR_INSTRUCTION.into(),
            appraisal_template: DEFAULT_APPRAISAL_TEMPLATE.into(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.instruction.trim().is_empty() {
            return Err(AgentError::InvalidProfile("instruction is empty".into()));
        }
        if !self.appraisal_template.contains(AGENT_NAME_PLACEHOLDER) {
            return Err(AgentError::InvalidProfile(format!(
                "appraisal_template lacks the {AGENT_NAME_PLACEHOLDER} placeholder"
            )));
        }
        if self.agent_name.trim().is_empty() || self.player_name.trim().is_empty() {
            return Err(AgentError::InvalidProfile("names must not be empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let profile: Self = serde_json::from_str(text)?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn appraisal_prompt(&self) -> String {
        self.appraisal_template.replace(AGENT_NAME_PLACEHOLDER, &self.agent_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u32,
    pub player_input: Option<String>,
    pub emotion: Option<String>,
    pub reply: String,
    pub llm_calls: u32,
}

/// Messages for the reply-generation call.
///
/// `pending_input` is the player line not yet in `store`. For the memory
/// strategies it is appended to the log as a player line; when it is absent
/// and the log has no conversation yet, the opening cue is used instead.
pub fn build_response_messages(
    strategy: Strategy,
    profile: &AgentProfile,
    store: &MemoryStore,
    pending_input: Option<&str>,
) -> Vec<ChatMessage> {
    let user = match strategy {
        Strategy::NoMemory => pending_input.unwrap_or(OPENING_CUE).to_string(),
        Strategy::Memory | Strategy::ChainOfEmotion => {
            let include_emotions = strategy == Strategy::ChainOfEmotion;
            let mut lines = Vec::new();
            let log = store.render_dialogue(&profile.agent_name, &profile.player_name, include_emotions);
            if !log.is_empty() {
                lines.push(log);
            }
            match pending_input {
                Some(input) => lines.push(format!("{}: {input}", profile.player_name)),
                None if store.count(EntryKind::Observation) == 0 => lines.push(OPENING_CUE.to_string()),
                None => {}
            }
            lines.join("\n")
        }
    };
    vec![ChatMessage::system(&profile.instruction), ChatMessage::user(user)]
}

/// Messages for the appraisal call: the log with emotions, then the
/// instantiated appraisal template.
pub fn build_appraisal_messages(profile: &AgentProfile, store: &MemoryStore) -> Vec<ChatMessage> {
    let log = store.render_dialogue(&profile.agent_name, &profile.player_name, true);
    let prompt = profile.appraisal_prompt();
    let user = if log.is_empty() {
        prompt
    } else {
        format!("{log}\n\n{prompt}")
    };
    vec![ChatMessage::system(&profile.instruction), ChatMessage::user(user)]
}

/// One appraisal completion; the reply is trimmed and otherwise verbatim.
pub fn appraise(profile: &AgentProfile, store: &MemoryStore, gateway: &Gateway) -> Result<String, GatewayError> {
    let reply = gateway.chat(build_appraisal_messages(profile, store))?;
    Ok(reply.trim().to_string())
}

/// One agent in one condition: strategy, profile and its memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub strategy: Strategy,
    pub profile: AgentProfile,
    pub store: MemoryStore,
    pub turns_taken: u32,
}

impl AgentState {
    /// Fresh agent whose memory starts with the scenario instruction as a
    /// context entry.
    pub fn new(strategy: Strategy, profile: AgentProfile, owner: impl Into<String>, clock: SharedClock) -> Result<Self, AgentError> {
        profile.validate()?;
        let mut store = MemoryStore::new(owner, clock);
        store.append(EntryKind::Context, Speaker::System, &profile.instruction)?;
        Ok(Self {
            strategy,
            profile,
            store,
            turns_taken: 0,
        })
    }

    /// Runs one turn. Memory changes are staged and committed only when every
    /// completion succeeded, so a failed turn leaves the store untouched.
    pub fn take_turn(&mut self, gateway: &Gateway, player_input: Option<&str>) -> Result<TurnRecord, AgentError> {
        let mut staged = self.store.clone();
        if let Some(input) = player_input {
            staged.append(EntryKind::Observation, Speaker::Player, input)?;
        }

        let mut llm_calls = 0;
        let emotion = if self.strategy == Strategy::ChainOfEmotion {
            let emotion = appraise(&self.profile, &staged, gateway)?;
            llm_calls += 1;
            staged.append(EntryKind::Emotion, Speaker::Agent, &emotion)?;
            Some(emotion)
        } else {
            None
        };

        let messages = match self.strategy {
            Strategy::NoMemory => build_response_messages(self.strategy, &self.profile, &self.store, player_input),
            _ => build_response_messages(self.strategy, &self.profile, &staged, None),
        };
        let reply = gateway.chat(messages)?.trim().to_string();
        llm_calls += 1;
        staged.append(EntryKind::Observation, Speaker::Agent, &reply)?;

        self.store = staged;
        self.turns_taken += 1;
        Ok(TurnRecord {
            turn_index: self.turns_taken,
            player_input: player_input.map(str::to_string),
            emotion,
            reply,
            llm_calls,
        })
    }
}
