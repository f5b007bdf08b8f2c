//! Core engine for affective LLM agents with an explicit chain of emotion.
//!
//! The crate is organised bottom-up:
//!
//! - [`gateway`]: chat-completion and moderation access (HTTP or scripted), with an audit log.
//! - [`memory`]: the append-only store every prompt is rendered from.
//! - [`agent`]: the three agent architectures and the appraisal/response turn loop.
//! - [`steu`]: a five-option emotional-understanding benchmark harness.
//! - [`lexicon`]: dictionary-based per-sentence content metrics.
//! - [`stats`]: one-way ANOVA, Welch tests and the special functions behind them.
//! - [`session`]: the counterbalanced three-condition game protocol used by the server.

pub mod agent;
pub mod clock;
pub mod gateway;
pub mod lexicon;
pub mod memory;
pub mod session;
pub mod stats;
pub mod steu;

pub use agent::{AgentProfile, AgentState, Strategy, TurnRecord};
pub use clock::{Clock, LogicalClock, SharedClock, SystemClock};
pub use gateway::{ChatMessage, CompletionRequest, Gateway, ModerationVerdict, Role};
pub use memory::{EntryKind, MemoryEntry, MemoryStore, Speaker};
