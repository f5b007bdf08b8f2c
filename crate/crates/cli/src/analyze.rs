//! Transcript corpus -> per-sentence lexicon metrics -> group statistics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use walkdir::WalkDir;

use coe_core::lexicon::{aggregate, segment_sentences, CorpusReport, Lexicon, SentenceRecord, Variable};
use coe_core::memory::MemoryStore;
use coe_core::stats::{self, AnovaResult, TTestResult};
use coe_core::{EntryKind, Speaker, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Grouping {
    /// Strategy named in the file name or a parent directory.
    #[default]
    Condition,
    /// Every file is its own group.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Every sentence is an observation.
    #[default]
    Sentence,
    /// Sentence values are averaged per file first.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum InputFormat {
    /// Flat reply text, one reply per line.
    #[default]
    Txt,
    /// Memory JSONL; agent observations only.
    Jsonl,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeOptions {
    pub grouping: Grouping,
    pub level: Level,
    pub format: InputFormat,
}

/// The agent lines of one transcript file.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub group: String,
    pub unit: String,
    pub lines: Vec<String>,
}

/// Finds a strategy name at the end of the file stem, or in a parent directory.
pub fn condition_of(path: &Path) -> Option<Strategy> {
    const SUFFIXES: [(&str, Strategy); 6] = [
        ("chain-of-emotion", Strategy::ChainOfEmotion),
        ("chain_of_emotion", Strategy::ChainOfEmotion),
        ("no-memory", Strategy::NoMemory),
        ("no_memory", Strategy::NoMemory),
        ("memory", Strategy::Memory),
        ("coe", Strategy::ChainOfEmotion),
    ];
    let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
    let names = std::iter::once(stem).chain(
        path.ancestors()
            .skip(1)
            .filter_map(|p| p.file_name()?.to_str().map(str::to_ascii_lowercase)),
    );
    for name in names {
        if let Ok(s) = name.parse() {
            return Some(s);
        }
        if let Some((_, s)) = SUFFIXES.iter().find(|(suffix, _)| name.ends_with(&format!("-{suffix}"))) {
            return Some(*s);
        }
    }
    None
}

fn read_lines(path: &Path, format: InputFormat) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match format {
        InputFormat::Txt => text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        InputFormat::Jsonl => MemoryStore::from_jsonl("analyze", &text, coe_core::clock::logical())
            .with_context(|| format!("parsing {}", path.display()))?
            .entries()
            .iter()
            .filter(|e| e.kind == EntryKind::Observation && e.speaker == Speaker::Agent)
            .map(|e| e.text.clone())
            .collect(),
    })
}

/// Collects every matching file below `dir`, sorted by path. Condition
/// groups come out in strategy order, other groups alphabetically.
pub fn collect_documents(dir: &Path, options: AnalyzeOptions) -> Result<Vec<Document>> {
    let ext = match options.format {
        InputFormat::Txt => "txt",
        InputFormat::Jsonl => "jsonl",
    };
    let mut paths: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|e| e.file_type().is_file() && e.path().extension().and_then(|x| x.to_str()) == Some(ext))
        .map(|e| e.into_path())
        .collect();
    paths.sort();

    let mut docs = Vec::new();
    for path in paths {
        let rel = path.strip_prefix(dir).unwrap_or(&path);
        let unit = rel.to_string_lossy().replace('\\', "/");
        let (group, order) = match options.grouping {
            Grouping::Condition => {
                let s = condition_of(rel).with_context(|| {
                    format!("cannot tell the condition of {unit}; name it after a strategy or use --group file")
                })?;
                (s.to_string(), Strategy::ALL.iter().position(|x| *x == s).unwrap())
            }
            Grouping::File => (unit.clone(), 0),
        };
        docs.push((
            order,
            Document {
                group,
                unit,
                lines: read_lines(&path, options.format)?,
            },
        ));
    }
    docs.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.group.cmp(&b.1.group)).then_with(|| a.1.unit.cmp(&b.1.unit)));
    Ok(docs.into_iter().map(|(_, d)| d).collect())
}

/// Segments every line into sentences and runs the corpus pass.
pub fn analyze_documents(docs: &[Document], lexicon: &Lexicon) -> Result<CorpusReport> {
    let mut records = Vec::new();
    for doc in docs {
        let mut index = 0;
        for line in &doc.lines {
            for sentence in segment_sentences(line) {
                index += 1;
                records.push(SentenceRecord::new(&doc.group, &doc.unit, index, &sentence, lexicon));
            }
        }
    }
    if records.is_empty() {
        bail!("empty corpus: no sentences found");
    }
    Ok(aggregate(records)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub variable: &'static str,
    pub test: &'static str,
    pub group_a: String,
    pub group_b: String,
    pub statistic: Option<f64>,
    pub df1: Option<f64>,
    pub df2: Option<f64>,
    pub p: Option<f64>,
    pub error: Option<String>,
}

impl TestRow {
    fn anova(variable: Variable, r: Result<AnovaResult, stats::StatsError>) -> Self {
        let (statistic, df1, df2, p, error) = match r {
            Ok(a) => (Some(a.f), Some(a.df_between as f64), Some(a.df_within as f64), Some(a.p), None),
            Err(e) => (None, None, None, None, Some(e.to_string())),
        };
        Self {
            variable: variable.name(),
            test: "anova",
            group_a: String::new(),
            group_b: String::new(),
            statistic,
            df1,
            df2,
            p,
            error,
        }
    }

    fn welch(variable: Variable, a: &str, b: &str, r: Result<TTestResult, stats::StatsError>) -> Self {
        let (statistic, df1, p, error) = match r {
            Ok(t) => (Some(t.t), Some(t.df), Some(t.p), None),
            Err(e) => (None, None, None, Some(e.to_string())),
        };
        Self {
            variable: variable.name(),
            test: "welch_t",
            group_a: a.to_string(),
            group_b: b.to_string(),
            statistic,
            df1,
            df2: None,
            p,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableStats {
    pub variable: &'static str,
    pub anova: TestRow,
    /// Linear contrast over the group order, df (1, N - 2).
    pub trend: TestRow,
    pub pairwise: Vec<TestRow>,
}

fn values(report: &CorpusReport, variable: Variable, level: Level) -> Vec<Vec<f64>> {
    match level {
        Level::Sentence => report.sentence_values(variable),
        Level::Unit => report.unit_means(variable),
    }
}

/// One ANOVA, one trend test and every pairwise Welch test per variable.
/// Failures are recorded in the row, not raised.
pub fn variable_stats(report: &CorpusReport, level: Level) -> Vec<VariableStats> {
    let names = report.group_names();
    Variable::ALL
        .iter()
        .map(|&variable| {
            let groups = values(report, variable, level);
            let mut trend = TestRow::anova(variable, stats::linear_trend(&groups));
            trend.test = "linear_trend";
            let mut pairwise = Vec::new();
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    pairwise.push(TestRow::welch(variable, &names[i], &names[j], stats::welch_t(&groups[i], &groups[j])));
                }
            }
            VariableStats {
                variable: variable.name(),
                anova: TestRow::anova(variable, stats::one_way_anova(&groups)),
                trend,
                pairwise,
            }
        })
        .collect()
}

/// ANOVA plus pairwise rows, the shape of stats.csv.
pub fn test_rows(stats: &[VariableStats]) -> Vec<TestRow> {
    stats
        .iter()
        .flat_map(|v| std::iter::once(v.anova.clone()).chain(v.pairwise.iter().cloned()))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// sentences.csv, summary.csv, stats.csv and stats.json.
pub fn write_outputs(dir: &Path, report: &CorpusReport, stats: &[VariableStats], level: Level) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("sentences.csv"))?;
    w.write_record([
        "group", "unit", "index", "word_count", "pct_affect", "pct_pos", "pct_neg", "pct_self", "pct_excl",
        "pct_motion", "tone", "authenticity", "text",
    ])?;
    for s in &report.sentences {
        let m = &s.metrics;
        w.write_record([
            s.group.clone(),
            s.unit.clone(),
            s.index.to_string(),
            m.word_count.to_string(),
            m.pct_affect.to_string(),
            m.pct_pos.to_string(),
            m.pct_neg.to_string(),
            m.pct_self.to_string(),
            m.pct_excl.to_string(),
            m.pct_motion.to_string(),
            m.tone.to_string(),
            m.authenticity.to_string(),
            s.text.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["group", "variable", "n", "mean", "sd"])?;
    for g in &report.groups {
        for v in &g.variables {
            w.write_record([
                g.group.clone(),
                v.variable.name().to_string(),
                v.n.to_string(),
                v.mean.to_string(),
                v.sd.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("stats.csv"))?;
    w.write_record(["variable", "test", "group_a", "group_b", "statistic", "df1", "df2", "p", "error"])?;
    for r in test_rows(stats) {
        w.write_record([
            r.variable.to_string(),
            r.test.to_string(),
            r.group_a,
            r.group_b,
            opt(r.statistic),
            opt(r.df1),
            opt(r.df2),
            opt(r.p),
            r.error.unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let json = serde_json::json!({
        "level": level,
        "groups": report.groups,
        "variables": stats,
    });
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}
