//! Line-oriented local conversation, for smoke-testing a profile and backend.

use std::io::{BufRead, Write};

use anyhow::Result;

use coe_core::{AgentState, Gateway};

pub const QUIT: &str = "/quit";

/// The agent opens, then every non-empty input line is one turn. Stops at
/// EOF, `/quit`, the turn limit or a flagged reply. Returns turns taken.
pub fn chat_loop<R: BufRead, W: Write>(
    agent: &mut AgentState,
    gateway: &Gateway,
    input: R,
    mut out: W,
    turn_limit: Option<u32>,
) -> Result<u32> {
    let name = agent.profile.agent_name.clone();
    let mut turns = 0;
    let mut pending: Option<String> = None;
    let mut lines = input.lines();
    loop {
        let record = agent.take_turn(gateway, pending.as_deref())?;
        turns += 1;
        if record.emotion.is_some() {
            log::info!("{name} feels: {}", record.emotion.as_deref().unwrap_or_default());
        }
        if gateway.moderate(&record.reply).flagged {
            writeln!(out, "[reply withheld by moderation; conversation ended]")?;
            break;
        }
        writeln!(out, "{name}: {}", record.reply)?;
        if turn_limit.is_some_and(|limit| turns >= limit) {
            writeln!(out, "[turn limit reached]")?;
            break;
        }
        pending = loop {
            write!(out, "> ")?;
            out.flush()?;
            match lines.next().transpose()? {
                None => return Ok(turns),
                Some(line) if line.trim() == QUIT => return Ok(turns),
                Some(line) if line.trim().is_empty() => continue,
                Some(line) => break Some(line.trim().to_string()),
            }
        };
    }
    Ok(turns)
}
