//! Five-option situational emotional-understanding benchmark.
//!
//! Items are asked one at a time. Every prompt opens with a worked example;
//! the memory conditions additionally replay every earlier item together with
//! the model's own answer, and the appraisal condition swaps the example
//! answer for a two-step one (appraise the situation, then answer).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::stats;

pub const OPTION_COUNT: usize = 5;
const LETTERS: [char; OPTION_COUNT] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Error)]
pub enum SteuError {
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("duplicate item id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("unknown condition {0:?} (expected no-memory, memory or appraisal)")]
    UnknownCondition(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteuItem {
    pub id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub key: usize,
}

impl SteuItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.stem.trim().is_empty() {
            return Err("stem must not be empty".into());
        }
        if self.options.len() != OPTION_COUNT {
            return Err(format!("expected {OPTION_COUNT} options, got {}", self.options.len()));
        }
        if self.key >= OPTION_COUNT {
            return Err(format!("key {} out of range 0-4", self.key));
        }
        Ok(())
    }

    /// Stem followed by the lettered options on one line.
    pub fn render(&self) -> String {
        let options: Vec<String> = self
            .options
            .iter()
            .zip(LETTERS)
            .map(|(o, l)| format!("[{l}] {o}"))
            .collect();
        format!("{}\n{}", self.stem, options.join(" "))
    }

    pub fn key_letter(&self) -> char {
        LETTERS[self.key]
    }
}

pub fn parse_items(text: &str) -> Result<Vec<SteuItem>, SteuError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: SteuItem = serde_json::from_str(line).map_err(|e| SteuError::Invalid {
            line: line_no,
            message: e.to_string(),
        })?;
        item.validate()
            .map_err(|message| SteuError::Invalid { line: line_no, message })?;
        if !seen.insert(item.id.clone()) {
            return Err(SteuError::DuplicateId { id: item.id, line: line_no });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_items(path: &Path) -> Result<Vec<SteuItem>, SteuError> {
    parse_items(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchVariant {
    NoMemory,
    Memory,
    AppraisalPrompts,
}

impl BenchVariant {
    pub fn slug(self) -> &'static str {
        match self {
            BenchVariant::NoMemory => "no-memory",
            BenchVariant::Memory => "memory",
            BenchVariant::AppraisalPrompts => "appraisal",
        }
    }

    fn replays_history(self) -> bool {
        self != BenchVariant::NoMemory
    }
}

impl fmt::Display for BenchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for BenchVariant {
    type Err = SteuError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "no-memory" => Ok(BenchVariant::NoMemory),
            "memory" => Ok(BenchVariant::Memory),
            "appraisal" | "appraisal-prompts" => Ok(BenchVariant::AppraisalPrompts),
            _ => Err(SteuError::UnknownCondition(s.to_string())),
        }
    }
}

/// Worked example shown at the head of every prompt.
pub fn example_item() -> SteuItem {
    SteuItem {
        id: "example".into(),
        stem: "Clara receives a gift. Clara is most likely to feel?".into(),
        options: ["Happy", "Angry", "Frightened", "Bored", "Hungry"].map(String::from).to_vec(),
        key: 0,
    }
}

pub const PLAIN_EXAMPLE_ANSWER: &str = "[A] Happy";

pub const APPRAISAL_EXAMPLE_ANSWER: &str = "1. First, appraise the situation: Clara is given a gift, an unexpected kindness that shows someone cares about her. Events like this are pleasant and affirming, so the most likely emotion is joy.\n2. Then answer the question: [A] Happy";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCondition {
    pub variant: BenchVariant,
    pub example_item: SteuItem,
    pub example_answer: String,
}

impl BenchCondition {
    pub fn new(variant: BenchVariant) -> Self {
        let example_answer = match variant {
            BenchVariant::AppraisalPrompts => APPRAISAL_EXAMPLE_ANSWER,
            _ => PLAIN_EXAMPLE_ANSWER,
        };
        Self {
            variant,
            example_item: example_item(),
            example_answer: example_answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BenchOptions {
    /// Memory conditions only: omit the worked example once real history exists.
    pub drop_example_after_first: bool,
}

fn qa_block(question: &str, answer: Option<&str>) -> String {
    match answer {
        Some(a) => format!("Q: {question}\nA: {a}"),
        None => format!("Q: {question}\nA:"),
    }
}

/// One user message: example Q/A, replayed history (memory conditions), then
/// the current item.
pub fn build_item_messages(
    condition: &BenchCondition,
    history: &[(SteuItem, String)],
    item: &SteuItem,
    options: BenchOptions,
) -> Vec<ChatMessage> {
    let replay = condition.variant.replays_history();
    let mut blocks = Vec::new();
    if !(replay && options.drop_example_after_first && !history.is_empty()) {
        blocks.push(qa_block(&condition.example_item.render(), Some(&condition.example_answer)));
    }
    if replay {
        for (prior, answer) in history {
            blocks.push(qa_block(&prior.render(), Some(answer)));
        }
    }
    blocks.push(qa_block(&item.render(), None));
    vec![ChatMessage::user(blocks.join("\n\n"))]
}

fn letter_index(c: char) -> Option<usize> {
    LETTERS.iter().position(|l| *l == c.to_ascii_uppercase())
}

/// Extracts the chosen option. Rules, first match wins, case-insensitive:
/// 1. a bracketed letter `[X]`;
/// 2. a standalone letter (after start of line, whitespace or `(`) followed by
///    `)`, `:`, `.` (not an abbreviation like "e.g.") or the end of the line;
/// 3. the whole response equal to one option text.
pub fn parse_choice(raw: &str, options: &[String]) -> Option<usize> {
    let chars: Vec<char> = raw.chars().collect();

    for w in chars.windows(3) {
        if w[0] == '[' && w[2] == ']' {
            if let Some(i) = letter_index(w[1]) {
                return Some(i);
            }
        }
    }

    for (i, &c) in chars.iter().enumerate() {
        let Some(idx) = letter_index(c) else { continue };
        let prev_ok = i == 0 || chars[i - 1].is_whitespace() || chars[i - 1] == '(';
        if !prev_ok {
            continue;
        }
        let next_ok = match chars.get(i + 1) {
            None | Some('\n') | Some('\r') | Some(')') | Some(':') => true,
            Some('.') => chars.get(i + 2).is_none_or(|c| c.is_whitespace()),
            _ => false,
        };
        if next_ok {
            return Some(idx);
        }
    }

    let normalized = raw
        .trim()
        .trim_end_matches(['.', '!'])
        .trim()
        .to_lowercase();
    options.iter().position(|o| o.trim().to_lowercase() == normalized)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub raw_response: String,
    pub chosen: Option<usize>,
    pub correct: u8,
    pub flagged_unparseable: bool,
}

impl ItemResult {
    pub fn score(item: &SteuItem, raw_response: String) -> Self {
        let chosen = parse_choice(&raw_response, &item.options);
        Self {
            item_id: item.id.clone(),
            correct: u8::from(chosen == Some(item.key)),
            flagged_unparseable: chosen.is_none(),
            chosen,
            raw_response,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub item: usize,
    pub running_sum: u32,
}

/// One transcript line: the prompt that was sent and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub index: usize,
    pub item_id: String,
    pub messages: Vec<ChatMessage>,
    pub raw_response: String,
    pub chosen: Option<usize>,
    pub correct: u8,
    pub flagged_unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub condition: BenchVariant,
    pub n: usize,
    pub sum: u32,
    pub mean: f64,
    pub sd: f64,
    pub complete: bool,
    pub results: Vec<ItemResult>,
    pub cumulative: Vec<CurvePoint>,
    #[serde(skip)]
    pub transcript: Vec<TranscriptRecord>,
}

impl RunReport {
    fn from_results(condition: BenchVariant, results: Vec<ItemResult>, transcript: Vec<TranscriptRecord>, complete: bool) -> Self {
        let scores: Vec<f64> = results.iter().map(|r| f64::from(r.correct)).collect();
        let (mean, sd) = match stats::descriptives(&scores) {
            Ok(d) => (d.mean, d.sd),
            Err(_) => (0.0, 0.0),
        };
        let mut report = Self {
            condition,
            n: results.len(),
            sum: results.iter().map(|r| u32::from(r.correct)).sum(),
            mean,
            sd,
            complete,
            results,
            cumulative: Vec::new(),
            transcript,
        };
        report.cumulative = cumulative_curve(&report);
        report
    }
}

/// Running sum after each item, 1-based.
pub fn cumulative_curve(report: &RunReport) -> Vec<CurvePoint> {
    report
        .results
        .iter()
        .scan(0u32, |acc, r| {
            *acc += u32::from(r.correct);
            Some(*acc)
        })
        .enumerate()
        .map(|(i, running_sum)| CurvePoint { item: i + 1, running_sum })
        .collect()
}

#[derive(Debug, Error)]
#[error("benchmark aborted after {} item(s): {source}", partial.n)]
pub struct BenchAbort {
    pub partial: RunReport,
    #[source]
    pub source: GatewayError,
}

/// Asks every item in order. History accumulates, so the run is sequential.
pub fn run_bench(
    condition: &BenchCondition,
    items: &[SteuItem],
    gateway: &Gateway,
    options: BenchOptions,
) -> Result<RunReport, Box<BenchAbort>> {
    let mut history: Vec<(SteuItem, String)> = Vec::new();
    let mut results = Vec::new();
    let mut transcript = Vec::new();
    for (index, item) in items.iter().enumerate() {
        let messages = build_item_messages(condition, &history, item, options);
        let raw = match gateway.chat(messages.clone()) {
            Ok(raw) => raw,
            Err(source) => {
                let partial = RunReport::from_results(condition.variant, results, transcript, false);
                return Err(Box::new(BenchAbort { partial, source }));
            }
        };
        let result = ItemResult::score(item, raw.clone());
        transcript.push(TranscriptRecord {
            index: index + 1,
            item_id: item.id.clone(),
            messages,
            raw_response: raw.clone(),
            chosen: result.chosen,
            correct: result.correct,
            flagged_unparseable: result.flagged_unparseable,
        });
        results.push(result);
        history.push((item.clone(), raw));
    }
    Ok(RunReport::from_results(condition.variant, results, transcript, true))
}

pub fn write_cumulative_csv<W: Write>(mut out: W, curve: &[CurvePoint]) -> io::Result<()> {
    writeln!(out, "item,running_sum")?;
    for p in curve {
        writeln!(out, "{},{}", p.item, p.running_sum)?;
    }
    Ok(())
}

/// Writes report.json, transcript.jsonl and cumulative.csv into `dir`, plus
/// an `.incomplete` marker when the run was aborted.
pub fn write_run(dir: &Path, report: &RunReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let mut lines = String::new();
    for rec in &report.transcript {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    fs::write(dir.join("transcript.jsonl"), lines)?;
    write_cumulative_csv(fs::File::create(dir.join("cumulative.csv"))?, &report.cumulative)?;
    let marker = dir.join(".incomplete");
    if report.complete {
        if marker.exists() {
            fs::remove_file(marker)?;
        }
    } else {
        fs::write(marker, "")?;
    }
    Ok(())
}
