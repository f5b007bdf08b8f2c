//! The three-condition game protocol.
//!
//! A participant plays every strategy once, in an order taken round-robin
//! from the six permutations. Each condition is a conversation of at most
//! `turn_limit` agent turns (the agent's opening line counts as the first),
//! followed by a 12-item questionnaire. Every agent reply is moderated before
//! it is returned; a flagged reply ends the session and is withheld.
//!
//! [`SessionManager`] owns all sessions, serializes operations per session and
//! snapshots each session to disk after every mutation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, AgentProfile, AgentState, Strategy};
use crate::clock::SharedClock;
use crate::gateway::Gateway;
use crate::memory::{EntryKind, MemoryEntry};

pub const DEFAULT_TURN_LIMIT: u32 = 6;
pub const SCORE_MIN: i64 = 0;
pub const SCORE_MAX: i64 = 6;

/// All orders of the three strategies; session k gets `PERMUTATIONS[k % 6]`.
pub const PERMUTATIONS: [[Strategy; 3]; 6] = {
    use Strategy::*;
    [
        [NoMemory, Memory, ChainOfEmotion],
        [NoMemory, ChainOfEmotion, Memory],
        [Memory, NoMemory, ChainOfEmotion],
        [Memory, ChainOfEmotion, NoMemory],
        [ChainOfEmotion, NoMemory, Memory],
        [ChainOfEmotion, Memory, NoMemory],
    ]
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Believability,
    ObservedEi,
    WarmthCompetence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuestionnaireItem {
    pub key: &'static str,
    pub scale: Scale,
    pub text: &'static str,
}

const fn item(key: &'static str, scale: Scale, text: &'static str) -> QuestionnaireItem {
    QuestionnaireItem { key, scale, text }
}

/// The 12 post-condition items, each rated 0-6.
pub const QUESTIONNAIRE: [QuestionnaireItem; 12] = [
    item("human_like", Scale::Believability, "The agent's behaviour was human-like."),
    item("natural", Scale::Believability, "The agent's reactions were natural."),
    item("reacted", Scale::Believability, "The agent reacted to my input."),
    item("did_not_care", Scale::Believability, "The agent did not care about the scenario."),
    item("knows_emotions", Scale::ObservedEi, "The agent always knows their friends' emotions from their behaviour."),
    item("good_observer", Scale::ObservedEi, "The agent is a good observer of others' emotions."),
    item("sensitive", Scale::ObservedEi, "The agent is sensitive to the feelings and emotions of others."),
    item("understands", Scale::ObservedEi, "The agent has a good understanding of the emotions of people around them."),
    item("capable", Scale::WarmthCompetence, "How capable was the agent?"),
    item("competent", Scale::WarmthCompetence, "How competent was the agent?"),
    item("friendly", Scale::WarmthCompetence, "How friendly was the agent?"),
    item("warm", Scale::WarmthCompetence, "How warm was the agent?"),
];

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("wrong stage: session is {actual}, expected {expected}")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("turn limit of {0} reached")]
    TurnLimit(u32),
    #[error("text must not be empty")]
    EmptyText,
    #[error("the opening line for this condition has not been generated yet; retry it first")]
    OpeningPending,
    #[error("the opening line was already generated")]
    OpeningDone,
    #[error("invalid questionnaire: {0}")]
    InvalidQuestionnaire(String),
    #[error("questionnaire for {0} already submitted")]
    DuplicateSubmission(Strategy),
    #[error("questionnaire is for {got}, current condition is {expected}")]
    ConditionMismatch { expected: Strategy, got: Strategy },
    #[error("unauthorized")]
    Unauthorized,
    #[error("agent failure: {0}")]
    Agent(#[from] AgentError),
    #[error("persistence: {0}")]
    Persist(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Playing,
    Questionnaire,
    Finished,
    Terminated,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Playing => "playing",
            Stage::Questionnaire => "questionnaire",
            Stage::Finished => "finished",
            Stage::Terminated => "terminated",
        })
    }
}

/// Body of a questionnaire submission: item key -> score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub condition: Strategy,
    pub scores: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredQuestionnaire {
    pub condition: Strategy,
    pub submitted_at: DateTime<Utc>,
    /// In [`QUESTIONNAIRE`] order.
    pub scores: Vec<ItemScore>,
}

impl QuestionnaireResponse {
    /// Checks every item is present, known and within 0-6; returns scores in
    /// canonical item order.
    pub fn validate(&self) -> Result<Vec<ItemScore>, SessionError> {
        if let Some(unknown) = self.scores.keys().find(|k| !QUESTIONNAIRE.iter().any(|q| q.key == k.as_str())) {
            return Err(SessionError::InvalidQuestionnaire(format!("unknown item {unknown:?}")));
        }
        QUESTIONNAIRE
            .iter()
            .map(|q| {
                let score = *self
                    .scores
                    .get(q.key)
                    .ok_or_else(|| SessionError::InvalidQuestionnaire(format!("missing item {:?}", q.key)))?;
                if !(SCORE_MIN..=SCORE_MAX).contains(&score) {
                    return Err(SessionError::InvalidQuestionnaire(format!(
                        "item {:?} scored {score}, must be {SCORE_MIN}-{SCORE_MAX}",
                        q.key
                    )));
                }
                Ok(ItemScore {
                    item: q.key.to_string(),
                    score: score as u8,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub session_id: String,
    pub condition: Strategy,
    pub condition_index: usize,
    /// Absent when the reply was withheld by moderation.
    pub reply: Option<String>,
    pub turn_count: u32,
    pub turn_limit: u32,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedTurn {
    key: String,
    outcome: TurnOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub strategy: Strategy,
    pub character_seed: u64,
    pub agent: AgentState,
    pub turn_count: u32,
    /// Seq of a reply held back by moderation.
    pub withheld_seq: Option<u64>,
    pub questionnaire: Option<StoredQuestionnaire>,
    pub last_error: Option<String>,
    #[serde(default)]
    last_turn: Option<CachedTurn>,
}

impl ConditionRun {
    /// Memory entries minus anything withheld by moderation.
    pub fn visible_entries(&self) -> Vec<MemoryEntry> {
        self.agent
            .store
            .entries()
            .iter()
            .filter(|e| Some(e.seq) != self.withheld_seq)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub order_index: usize,
    pub condition_order: [Strategy; 3],
    pub stage: Stage,
    pub current_condition_index: usize,
    pub conditions: Vec<ConditionRun>,
    pub demographics: Option<Demographics>,
    pub terminated_reason: Option<String>,
}

impl Session {
    pub fn current(&self) -> &ConditionRun {
        &self.conditions[self.current_condition_index]
    }

    fn current_mut(&mut self) -> &mut ConditionRun {
        &mut self.conditions[self.current_condition_index]
    }

    pub fn character_seed(&self) -> u64 {
        self.current().character_seed
    }
}

/// What the client sees after creating a session or advancing a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStart {
    pub session_id: String,
    pub condition_order: [Strategy; 3],
    pub condition_index: usize,
    pub condition: Strategy,
    pub character_seed: u64,
    pub stage: Stage,
    pub turn_count: u32,
    pub opening: Option<String>,
    /// Set when the opening line failed; retry via [`SessionManager::retry_opening`].
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireOutcome {
    pub session_id: String,
    pub stage: Stage,
    /// Present unless the session is finished.
    pub next: Option<ConditionStart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTranscript {
    pub condition: Strategy,
    pub character_seed: u64,
    pub turn_count: u32,
    pub entries: Vec<MemoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptView {
    pub session_id: String,
    pub stage: Stage,
    pub condition_index: usize,
    pub conditions: Vec<ConditionTranscript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionExport {
    pub condition: Strategy,
    pub character_seed: u64,
    pub turn_count: u32,
    pub withheld_seq: Option<u64>,
    pub transcript: Vec<MemoryEntry>,
    pub questionnaire: Option<StoredQuestionnaire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub session_id: String,
    pub stage: Stage,
    pub terminated: bool,
    pub terminated_reason: Option<String>,
    pub condition_order: [Strategy; 3],
    pub demographics: Option<Demographics>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub conditions: Vec<ConditionExport>,
}

impl From<&Session> for ExportRecord {
    fn from(s: &Session) -> Self {
        Self {
            session_id: s.id.clone(),
            stage: s.stage,
            terminated: s.stage == Stage::Terminated,
            terminated_reason: s.terminated_reason.clone(),
            condition_order: s.condition_order,
            demographics: s.demographics.clone(),
            created_at: s.created_at,
            updated_at: s.updated_at,
            conditions: s
                .conditions
                .iter()
                .map(|c| ConditionExport {
                    condition: c.strategy,
                    character_seed: c.character_seed,
                    turn_count: c.turn_count,
                    withheld_seq: c.withheld_seq,
                    transcript: c.agent.store.entries().to_vec(),
                    questionnaire: c.questionnaire.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFilter {
    /// Finished and terminated sessions.
    #[default]
    Completed,
    Finished,
    Terminated,
}

impl ExportFilter {
    fn accepts(self, stage: Stage) -> bool {
        match self {
            ExportFilter::Completed => matches!(stage, Stage::Finished | Stage::Terminated),
            ExportFilter::Finished => stage == Stage::Finished,
            ExportFilter::Terminated => stage == Stage::Terminated,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub profile: AgentProfile,
    pub turn_limit: u32,
    pub seed: u64,
    pub state_dir: Option<PathBuf>,
    pub admin_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            profile: AgentProfile::wunderbar(),
            turn_limit: DEFAULT_TURN_LIMIT,
            seed: 0,
            state_dir: None,
            admin_token: None,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryState {
    created: u64,
    draws: u64,
}

#[derive(Default)]
struct Registry {
    state: RegistryState,
    sessions: HashMap<String, Arc<Mutex<Session>>>,
    order: Vec<String>,
}

pub struct SessionManager {
    config: ServiceConfig,
    gateway: Arc<Gateway>,
    clock: SharedClock,
    registry: Mutex<Registry>,
}

impl SessionManager {
    /// Opens the manager, resuming any sessions snapshotted in `state_dir`.
    pub fn open(config: ServiceConfig, gateway: Arc<Gateway>, clock: SharedClock) -> Result<Self, SessionError> {
        config.profile.validate()?;
        let mut registry = Registry::default();
        if let Some(dir) = &config.state_dir {
            fs::create_dir_all(dir.join("sessions"))?;
            let reg_path = dir.join("registry.json");
            if reg_path.exists() {
                registry.state = serde_json::from_str(&fs::read_to_string(&reg_path)?).map_err(io::Error::other)?;
            }
            let mut loaded: Vec<Session> = Vec::new();
            for entry in fs::read_dir(dir.join("sessions"))? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let mut session: Session =
                    serde_json::from_str(&fs::read_to_string(&path)?).map_err(io::Error::other)?;
                for c in &mut session.conditions {
                    c.agent.store.set_clock(clock.clone());
                }
                loaded.push(session);
            }
            loaded.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
            for s in loaded {
                registry.order.push(s.id.clone());
                registry.sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(Self {
            config,
            gateway,
            clock,
            registry: Mutex::new(registry),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn session_count(&self) -> usize {
        self.registry.lock().unwrap().order.len()
    }

    fn draw(&self, reg: &mut Registry) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(reg.state.draws);
        reg.state.draws += 1;
        rng
    }

    fn draw_seed(&self) -> u64 {
        let mut reg = self.registry.lock().unwrap();
        let seed = self.draw(&mut reg).next_u64();
        self.persist_registry(&reg.state).ok();
        seed
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.registry
            .lock()
            .unwrap()
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }

    pub fn create_session(&self) -> Result<ConditionStart, SessionError> {
        let (id, order_index, seed) = {
            let mut reg = self.registry.lock().unwrap();
            let order_index = (reg.state.created % PERMUTATIONS.len() as u64) as usize;
            reg.state.created += 1;
            let mut bytes = [0u8; 16];
            self.draw(&mut reg).fill_bytes(&mut bytes);
            let id = uuid::Builder::from_random_bytes(bytes).into_uuid().to_string();
            let seed = self.draw(&mut reg).next_u64();
            self.persist_registry(&reg.state)?;
            (id, order_index, seed)
        };
        let now = self.clock.now();
        let order = PERMUTATIONS[order_index];
        let mut session = Session {
            id: id.clone(),
            created_at: now,
            updated_at: now,
            order_index,
            condition_order: order,
            stage: Stage::Playing,
            current_condition_index: 0,
            conditions: Vec::new(),
            demographics: None,
            terminated_reason: None,
        };
        session.conditions.push(self.new_condition(&id, order[0], seed)?);
        self.run_opening(&mut session);
        self.persist(&session)?;
        let start = start_view(&session);
        let mut reg = self.registry.lock().unwrap();
        reg.order.push(id.clone());
        reg.sessions.insert(id, Arc::new(Mutex::new(session)));
        Ok(start)
    }

    fn new_condition(&self, session_id: &str, strategy: Strategy, character_seed: u64) -> Result<ConditionRun, SessionError> {
        let owner = format!("{session_id}/{strategy}");
        Ok(ConditionRun {
            strategy,
            character_seed,
            agent: AgentState::new(strategy, self.config.profile.clone(), owner, self.clock.clone())?,
            turn_count: 0,
            withheld_seq: None,
            questionnaire: None,
            last_error: None,
            last_turn: None,
        })
    }

    /// Generates (and moderates) the agent's opening line for the current
    /// condition. Failures are recorded on the condition, not returned.
    fn run_opening(&self, session: &mut Session) {
        let outcome = self.moderated_turn(session, None);
        if let Err(e) = outcome {
            session.current_mut().last_error = Some(e.to_string());
        }
    }

    /// take_turn + moderation + stage bookkeeping. Returns the visible reply.
    fn moderated_turn(&self, session: &mut Session, input: Option<&str>) -> Result<Option<String>, SessionError> {
        let limit = self.config.turn_limit;
        let run = session.current_mut();
        let record = run.agent.take_turn(&self.gateway, input)?;
        run.last_error = None;
        run.turn_count += 1;
        let verdict = self.gateway.moderate(&record.reply);
        let reply = if verdict.flagged {
            run.withheld_seq = Some(run.agent.store.last_seq());
            let flagged: Vec<&str> = verdict
                .category_scores
                .iter()
                .filter(|(_, s)| **s >= 0.5)
                .map(|(c, _)| c.as_str())
                .collect();
            session.stage = Stage::Terminated;
            session.terminated_reason = Some(if flagged.is_empty() {
                "moderation".to_string()
            } else {
                format!("moderation: {}", flagged.join(", "))
            });
            None
        } else {
            if run.turn_count >= limit {
                session.stage = Stage::Questionnaire;
            }
            Some(record.reply)
        };
        session.updated_at = self.clock.now();
        Ok(reply)
    }

    pub fn retry_opening(&self, id: &str) -> Result<ConditionStart, SessionError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().unwrap();
        expect_stage(&session, Stage::Playing)?;
        if session.current().turn_count > 0 {
            return Err(SessionError::OpeningDone);
        }
        self.run_opening(&mut session);
        self.persist(&session)?;
        Ok(start_view(&session))
    }

    pub fn post_turn(&self, id: &str, text: &str, idempotency_key: Option<&str>) -> Result<TurnOutcome, SessionError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().unwrap();
        if let (Some(key), Some(cached)) = (idempotency_key, &session.current().last_turn) {
            if cached.key == key {
                return Ok(cached.outcome.clone());
            }
        }
        let limit = self.config.turn_limit;
        if session.stage == Stage::Questionnaire && session.current().turn_count >= limit {
            return Err(SessionError::TurnLimit(limit));
        }
        expect_stage(&session, Stage::Playing)?;
        if session.current().turn_count == 0 {
            return Err(SessionError::OpeningPending);
        }
        if session.current().turn_count >= limit {
            return Err(SessionError::TurnLimit(limit));
        }
        if text.trim().is_empty() {
            return Err(SessionError::EmptyText);
        }
        let reply = self.moderated_turn(&mut session, Some(text))?;
        let outcome = TurnOutcome {
            session_id: session.id.clone(),
            condition: session.current().strategy,
            condition_index: session.current_condition_index,
            reply,
            turn_count: session.current().turn_count,
            turn_limit: limit,
            stage: session.stage,
        };
        if let Some(key) = idempotency_key {
            session.current_mut().last_turn = Some(CachedTurn {
                key: key.to_string(),
                outcome: outcome.clone(),
            });
        }
        self.persist(&session)?;
        Ok(outcome)
    }

    pub fn submit_questionnaire(&self, id: &str, response: &QuestionnaireResponse) -> Result<QuestionnaireOutcome, SessionError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().unwrap();
        if session
            .conditions
            .iter()
            .any(|c| c.strategy == response.condition && c.questionnaire.is_some())
        {
            return Err(SessionError::DuplicateSubmission(response.condition));
        }
        expect_stage(&session, Stage::Questionnaire)?;
        let expected = session.current().strategy;
        if response.condition != expected {
            return Err(SessionError::ConditionMismatch {
                expected,
                got: response.condition,
            });
        }
        let scores = response.validate()?;
        let now = self.clock.now();
        session.current_mut().questionnaire = Some(StoredQuestionnaire {
            condition: expected,
            submitted_at: now,
            scores,
        });
        session.updated_at = now;

        if session.current_condition_index + 1 >= session.condition_order.len() {
            session.stage = Stage::Finished;
            self.persist(&session)?;
            return Ok(QuestionnaireOutcome {
                session_id: session.id.clone(),
                stage: session.stage,
                next: None,
            });
        }

        let next_index = session.current_condition_index + 1;
        let strategy = session.condition_order[next_index];
        let seed = self.draw_seed();
        let run = self.new_condition(&session.id, strategy, seed)?;
        session.conditions.push(run);
        session.current_condition_index = next_index;
        session.stage = Stage::Playing;
        self.run_opening(&mut session);
        self.persist(&session)?;
        Ok(QuestionnaireOutcome {
            session_id: session.id.clone(),
            stage: session.stage,
            next: Some(start_view(&session)),
        })
    }

    pub fn submit_demographics(&self, id: &str, demographics: Demographics) -> Result<(), SessionError> {
        let handle = self.session(id)?;
        let mut session = handle.lock().unwrap();
        if !matches!(session.stage, Stage::Finished | Stage::Terminated) {
            return Err(SessionError::WrongStage {
                expected: Stage::Finished,
                actual: session.stage,
            });
        }
        session.demographics = Some(demographics);
        session.updated_at = self.clock.now();
        self.persist(&session)?;
        Ok(())
    }

    pub fn transcript(&self, id: &str) -> Result<TranscriptView, SessionError> {
        let session = self.get(id)?;
        Ok(TranscriptView {
            session_id: session.id.clone(),
            stage: session.stage,
            condition_index: session.current_condition_index,
            conditions: session
                .conditions
                .iter()
                .map(|c| ConditionTranscript {
                    condition: c.strategy,
                    character_seed: c.character_seed,
                    turn_count: c.turn_count,
                    entries: c.visible_entries(),
                })
                .collect(),
        })
    }

    pub fn authorize(&self, token: Option<&str>) -> Result<(), SessionError> {
        match (&self.config.admin_token, token) {
            (Some(expected), Some(given)) if expected == given => Ok(()),
            _ => Err(SessionError::Unauthorized),
        }
    }

    /// Consistent snapshot of completed sessions, in creation order.
    pub fn export(&self, token: Option<&str>, filter: ExportFilter) -> Result<Vec<ExportRecord>, SessionError> {
        self.authorize(token)?;
        let reg = self.registry.lock().unwrap();
        Ok(reg
            .order
            .iter()
            .filter_map(|id| {
                let session = reg.sessions[id].lock().unwrap();
                filter.accepts(session.stage).then(|| ExportRecord::from(&*session))
            })
            .collect())
    }

    fn persist_registry(&self, state: &RegistryState) -> io::Result<()> {
        if let Some(dir) = &self.config.state_dir {
            write_atomic(&dir.join("registry.json"), &serde_json::to_string(state)?)?;
        }
        Ok(())
    }

    fn persist(&self, session: &Session) -> io::Result<()> {
        let Some(dir) = &self.config.state_dir else {
            return Ok(());
        };
        write_atomic(
            &dir.join("sessions").join(format!("{}.json", session.id)),
            &serde_json::to_string(session)?,
        )?;
        for c in &session.conditions {
            fs::write(
                dir.join(format!("memory-{}-{}.jsonl", session.id, c.strategy)),
                c.agent.store.to_jsonl(),
            )?;
        }
        Ok(())
    }
}

fn expect_stage(session: &Session, expected: Stage) -> Result<(), SessionError> {
    if session.stage == expected {
        Ok(())
    } else {
        Err(SessionError::WrongStage {
            expected,
            actual: session.stage,
        })
    }
}

fn start_view(session: &Session) -> ConditionStart {
    let run = session.current();
    let opening = if run.turn_count > 0 && run.withheld_seq.is_none() {
        run.agent
            .store
            .entries()
            .iter()
            .find(|e| e.kind == EntryKind::Observation)
            .map(|e| e.text.clone())
    } else {
        None
    };
    ConditionStart {
        session_id: session.id.clone(),
        condition_order: session.condition_order,
        condition_index: session.current_condition_index,
        condition: run.strategy,
        character_seed: run.character_seed,
        stage: session.stage,
        turn_count: run.turn_count,
        opening,
        error: run.last_error.clone(),
    }
}

fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::logical;
    use crate::gateway::{ModerationVerdict, ScriptedBackend};

    fn full_scores(value: i64) -> BTreeMap<String, i64> {
        QUESTIONNAIRE.iter().map(|q| (q.key.to_string(), value)).collect()
    }

    fn manager(backend: Arc<ScriptedBackend>) -> SessionManager {
        let config = ServiceConfig {
            admin_token: Some("secret".into()),
            ..ServiceConfig::default()
        };
        SessionManager::open(config, Arc::new(Gateway::new(backend)), logical()).unwrap()
    }

    #[test]
    fn permutations_are_distinct() {
        for (i, a) in PERMUTATIONS.iter().enumerate() {
            let mut sorted = *a;
            sorted.sort();
            assert_eq!(sorted, Strategy::ALL);
            for b in &PERMUTATIONS[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn questionnaire_validation() {
        let ok = QuestionnaireResponse {
            condition: Strategy::Memory,
            scores: full_scores(3),
        };
        assert_eq!(ok.validate().unwrap().len(), 12);

        let mut bad = ok.clone();
        bad.scores.insert("warm".into(), 7);
        assert!(matches!(bad.validate(), Err(SessionError::InvalidQuestionnaire(m)) if m.contains("warm")));

        let mut missing = ok.clone();
        missing.scores.remove("natural");
        assert!(missing.validate().is_err());

        let mut negative = ok.clone();
        negative.scores.insert("natural".into(), -1);
        assert!(negative.validate().is_err());

        let mut extra = ok;
        extra.scores.insert("bogus".into(), 1);
        assert!(extra.validate().is_err());
    }

    #[test]
    fn opening_line_counts_as_first_turn() {
        let m = manager(Arc::new(ScriptedBackend::new(["Hello darling"])));
        let start = m.create_session().unwrap();
        // first permutation opens with no_memory: one call
        assert_eq!(start.opening.as_deref(), Some("Hello darling"));
        assert_eq!(start.turn_count, 1);
        assert_eq!(start.stage, Stage::Playing);
    }

    #[test]
    fn failed_opening_is_retryable() {
        let backend = Arc::new(ScriptedBackend::default());
        backend.push_failure("timeout");
        backend.push_reply("Hi again");
        let m = manager(backend);
        let start = m.create_session().unwrap();
        assert!(start.error.is_some());
        assert_eq!(start.turn_count, 0);
        assert!(matches!(
            m.post_turn(&start.session_id, "hello", None),
            Err(SessionError::OpeningPending)
        ));
        let retried = m.retry_opening(&start.session_id).unwrap();
        assert_eq!(retried.opening.as_deref(), Some("Hi again"));
        assert_eq!(retried.error, None);
        assert!(matches!(m.retry_opening(&start.session_id), Err(SessionError::OpeningDone)));
    }

    #[test]
    fn idempotent_turns() {
        let m = manager(Arc::new(ScriptedBackend::new(["open", "reply one", "reply two"])));
        let s = m.create_session().unwrap();
        let a = m.post_turn(&s.session_id, "hi", Some("k1")).unwrap();
        let b = m.post_turn(&s.session_id, "hi", Some("k1")).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.gateway().audit_len(), 2);
        let c = m.post_turn(&s.session_id, "hi", Some("k2")).unwrap();
        assert_eq!(c.turn_count, 3);
    }

    #[test]
    fn empty_text_rejected() {
        let m = manager(Arc::new(ScriptedBackend::new(["open"])));
        let s = m.create_session().unwrap();
        assert!(matches!(m.post_turn(&s.session_id, "  ", None), Err(SessionError::EmptyText)));
        assert!(matches!(m.post_turn("nope", "x", None), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn flagged_opening_terminates() {
        let backend = Arc::new(ScriptedBackend::new(["bad words"]));
        backend.push_verdict(ModerationVerdict::flagged_for("harassment", 0.9));
        let m = manager(backend);
        let s = m.create_session().unwrap();
        assert_eq!(s.stage, Stage::Terminated);
        assert_eq!(s.opening, None);
        let t = m.transcript(&s.session_id).unwrap();
        assert!(t.conditions[0].entries.iter().all(|e| e.text != "bad words"));
        let export = m.export(Some("secret"), ExportFilter::Terminated).unwrap();
        assert_eq!(export.len(), 1);
        assert_eq!(export[0].terminated_reason.as_deref(), Some("moderation: harassment"));
    }

    #[test]
    fn export_requires_token() {
        let m = manager(Arc::new(ScriptedBackend::default()));
        assert!(matches!(m.export(None, ExportFilter::Completed), Err(SessionError::Unauthorized)));
        assert!(matches!(m.export(Some("wrong"), ExportFilter::Completed), Err(SessionError::Unauthorized)));
        assert!(m.export(Some("secret"), ExportFilter::Completed).unwrap().is_empty());
    }
}
