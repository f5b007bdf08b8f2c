//! Replays a fixed sequence of player inputs against one agent strategy.

use std::fs;
use std::io;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use coe_core::clock::SharedClock;
use coe_core::gateway::AuditEntry;
use coe_core::{AgentProfile, AgentState, EntryKind, Gateway, MemoryStore, Speaker, Strategy, TurnRecord};

/// The player lines used for every condition of the fixed-input comparison.
pub const SAMPLE_INPUTS: [&str; 5] = [
    "I am sorry but I think we need to break up.",
    "Tell me how you feel right now.",
    "When you think back and remember the time we had together, what do you feel then?",
    "Do you think you will be alright?",
    "If you want to share anything else, now is the time.",
];

/// Ordered player inputs. The first entry is always the absent-input opening.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixedScript {
    pub inputs: Vec<Option<String>>,
}

impl FixedScript {
    pub fn sample() -> Self {
        let mut inputs = vec![None];
        inputs.extend(SAMPLE_INPUTS.iter().map(|s| Some(s.to_string())));
        Self { inputs }
    }

    pub fn validate(&self) -> Result<()> {
        match self.inputs.first() {
            None => bail!("script is empty"),
            Some(Some(_)) => bail!("the first script entry must be null (the agent opens)"),
            Some(None) => {}
        }
        for (i, input) in self.inputs.iter().enumerate().skip(1) {
            match input {
                Some(text) if !text.trim().is_empty() => {}
                _ => bail!("script entry {i} must be a non-empty string"),
            }
        }
        Ok(())
    }

    /// A JSON array such as `[null, "hello", "bye"]`.
    pub fn from_json(text: &str) -> Result<Self> {
        let script: Self = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing script {}", path.display()))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub strategy: Strategy,
    pub turns: Vec<TurnRecord>,
    pub store: MemoryStore,
    pub audit: Vec<AuditEntry>,
    /// Set when a gateway error cut the run short.
    pub error: Option<String>,
}

impl Simulation {
    pub fn complete(&self) -> bool {
        self.error.is_none()
    }

    /// Agent lines only, one reply per line.
    pub fn replies_text(&self) -> String {
        let mut out = String::new();
        for e in self.store.entries() {
            if e.kind == EntryKind::Observation && e.speaker == Speaker::Agent {
                out.push_str(&e.text.split_whitespace().collect::<Vec<_>>().join(" "));
                out.push('\n');
            }
        }
        out
    }

    /// memory.jsonl, replies.txt, turns.jsonl and audit.jsonl, plus an
    /// `.incomplete` marker for aborted runs.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("memory.jsonl"), self.store.to_jsonl())?;
        fs::write(dir.join("replies.txt"), self.replies_text())?;
        fs::write(dir.join("turns.jsonl"), jsonl(&self.turns)?)?;
        fs::write(dir.join("audit.jsonl"), jsonl(&self.audit)?)?;
        let marker = dir.join(".incomplete");
        match &self.error {
            Some(e) => fs::write(marker, format!("{e}\n"))?,
            None if marker.exists() => fs::remove_file(marker)?,
            None => {}
        }
        Ok(())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> io::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Runs the script turn by turn. A gateway error stops the run and is
/// recorded rather than returned, so the partial transcript survives.
pub fn simulate_fixed(
    strategy: Strategy,
    profile: &AgentProfile,
    script: &FixedScript,
    gateway: &Gateway,
    clock: SharedClock,
) -> Result<Simulation> {
    script.validate()?;
    let mut agent = AgentState::new(strategy, profile.clone(), format!("simulate/{strategy}"), clock)?;
    let audit_start = gateway.audit_len();
    let mut turns = Vec::new();
    let mut error = None;
    for input in &script.inputs {
        match agent.take_turn(gateway, input.as_deref()) {
            Ok(record) => turns.push(record),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(Simulation {
        strategy,
        turns,
        store: agent.store,
        audit: gateway.audit_log().split_off(audit_start),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use coe_core::clock::logical;

    #[test]
    fn sample_script_is_valid() {
        let s = FixedScript::sample();
        s.validate().unwrap();
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn script_json() {
        let s = FixedScript::from_json(r#"[null, "hi", "bye"]"#).unwrap();
        assert_eq!(s.inputs[1].as_deref(), Some("hi"));
        assert!(FixedScript::from_json(r#"["hi"]"#).is_err());
        assert!(FixedScript::from_json(r#"[null, ""]"#).is_err());
        assert!(FixedScript::from_json("[]").is_err());
    }

    #[test]
    fn gateway_error_keeps_partial_transcript() {
        let gateway = Gateway::scripted(["one", "two"]).with_clock(logical());
        let sim = simulate_fixed(
            Strategy::Memory,
            &AgentProfile::wunderbar(),
            &FixedScript::sample(),
            &gateway,
            logical(),
        )
        .unwrap();
        assert_eq!(sim.turns.len(), 2);
        assert!(!sim.complete());
        assert_eq!(sim.replies_text(), "one\ntwo\n");
        assert_eq!(sim.audit.len(), 3);
    }
}
