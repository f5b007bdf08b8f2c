//! Argument parsing and subcommand dispatch for the `coe` binary.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use coe_core::clock::{self, SharedClock};
use coe_core::gateway::ScriptedBackend;
use coe_core::lexicon::Lexicon;
use coe_core::steu::{load_items, BenchOptions, BenchVariant};
use coe_core::{AgentProfile, AgentState, Gateway, Strategy};
use coe_server::ServerConfig;

use crate::analyze::{self, AnalyzeOptions, Grouping, InputFormat, Level};
use crate::bench;
use crate::chat;
use crate::simulate::{simulate_fixed, FixedScript};

#[derive(Debug, Parser)]
#[command(name = "coe", version, about = "Affective LLM agents: benchmark, simulate, analyze, serve, chat")]
pub struct Cli {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config (gateway, profile, lexicon, service settings).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a benchmark.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Replay a fixed player script against one or all strategies.
    Simulate(SimulateArgs),
    /// Lexicon metrics and group statistics over a transcript directory.
    Analyze(AnalyzeArgs),
    /// Run the game service.
    Serve,
    /// Talk to an agent on stdin/stdout.
    Chat(ChatArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Five-option emotional-understanding items.
    Steu(SteuArgs),
}

#[derive(Debug, Args)]
pub struct SteuArgs {
    /// Item bank, JSONL.
    #[arg(long)]
    pub items: PathBuf,
    /// no-memory, memory, appraisal, or all.
    #[arg(long, default_value = "all")]
    pub variant: String,
    /// Memory variants: drop the worked example once history exists.
    #[arg(long)]
    pub drop_example_after_first: bool,
    /// Scripted replies (JSON) instead of the configured backend.
    #[arg(long)]
    pub replies: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// no-memory, memory, chain-of-emotion, or all.
    #[arg(long, default_value = "all")]
    pub strategy: String,
    /// JSON array of player inputs starting with null; the shipped default when absent.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Scripted replies: a JSON file, or a directory holding `<strategy>.json` per strategy.
    #[arg(long)]
    pub replies: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Lexicon JSON; the bundled one when absent.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Grouping::Condition)]
    pub group: Grouping,
    #[arg(long, value_enum, default_value_t = Level::Sentence)]
    pub level: Level,
    #[arg(long, value_enum, default_value_t = InputFormat::Txt)]
    pub format: InputFormat,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long, default_value = "chain-of-emotion")]
    pub strategy: String,
    #[arg(long)]
    pub replies: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Stop after this many agent turns.
    #[arg(long)]
    pub turns: Option<u32>,
}

/// How a command finished. Partial runs exit with code 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Complete => 0,
            Outcome::Partial => 2,
        }
    }
}

struct RunContext {
    config: ServerConfig,
    seed: u64,
    out: PathBuf,
}

impl RunContext {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(path) => ServerConfig::load(path)?,
            None => ServerConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        Ok(Self {
            seed: config.seed,
            config,
            out: cli.out.clone().unwrap_or_else(|| PathBuf::from("coe-out")),
        })
    }

    fn profile(&self, override_path: Option<&Path>) -> Result<AgentProfile> {
        match override_path.or(self.config.profile.as_deref()) {
            Some(path) => AgentProfile::load(path).with_context(|| format!("loading profile {}", path.display())),
            None => Ok(AgentProfile::wunderbar()),
        }
    }

    /// Scripted runs get a logical clock so their files are byte-identical.
    fn clock(&self, scripted: bool) -> SharedClock {
        if scripted || self.config.gateway.scripted.is_some() {
            clock::logical()
        } else {
            self.config.clock()
        }
    }

    fn gateway(&self, replies: Option<&Path>, clock: SharedClock) -> Result<Gateway> {
        match replies {
            Some(path) => {
                let backend = ScriptedBackend::load(path).with_context(|| format!("loading replies {}", path.display()))?;
                self.config.gateway.build_with(Arc::new(backend), clock)
            }
            None => self.config.gateway.build(clock),
        }
    }

    fn manifest(&self, command: &str, outcome: Outcome) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let body = json!({
            "command": command,
            "seed": self.seed,
            "complete": outcome == Outcome::Complete,
        });
        fs::write(self.out.join("run.json"), serde_json::to_string_pretty(&body)? + "\n")?;
        mark(&self.out, outcome)?;
        Ok(())
    }
}

fn mark(dir: &Path, outcome: Outcome) -> io::Result<()> {
    let marker = dir.join(".incomplete");
    match outcome {
        Outcome::Partial => fs::write(marker, ""),
        Outcome::Complete if marker.exists() => fs::remove_file(marker),
        Outcome::Complete => Ok(()),
    }
}

fn strategies(arg: &str) -> Result<Vec<Strategy>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    Ok(vec![arg.parse()?])
}

fn variants(arg: &str) -> Result<Vec<BenchVariant>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(bench::ALL_VARIANTS.to_vec());
    }
    Ok(vec![arg.parse()?])
}

/// A replies directory holds one file per strategy or variant slug.
fn replies_for(replies: Option<&Path>, slug: &str, many: bool) -> Result<Option<PathBuf>> {
    let Some(path) = replies else { return Ok(None) };
    if path.is_dir() {
        let file = path.join(format!("{slug}.json"));
        if !file.exists() {
            bail!("no replies file {} for {slug}", file.display());
        }
        Ok(Some(file))
    } else if many {
        bail!("--replies must be a directory with one <name>.json per run when running several");
    } else {
        Ok(Some(path.to_path_buf()))
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let ctx = RunContext::new(&cli)?;
    match cli.command {
        Command::Bench(BenchCommand::Steu(args)) => run_steu(&ctx, args),
        Command::Simulate(args) => run_simulate(&ctx, args),
        Command::Analyze(args) => run_analyze(&ctx, args),
        Command::Serve => run_serve(ctx, cli.out.is_some()),
        Command::Chat(args) => run_chat(&ctx, args),
    }
}

fn run_steu(ctx: &RunContext, args: SteuArgs) -> Result<Outcome> {
    let items = load_items(&args.items)?;
    let variants = variants(&args.variant)?;
    let options = BenchOptions {
        drop_example_after_first: args.drop_example_after_first,
    };
    let mut reports = Vec::new();
    for v in &variants {
        let replies = replies_for(args.replies.as_deref(), v.slug(), variants.len() > 1)?;
        let gateway = ctx.gateway(replies.as_deref(), ctx.clock(replies.is_some()))?;
        let report = bench::run_variant(*v, &items, &gateway, options, &ctx.out)?;
        println!("{:<12} n={:<3} sum={:<3} mean={:.2} sd={:.2}", v.slug(), report.n, report.sum, report.mean, report.sd);
        reports.push(report);
    }
    bench::write_summary(&ctx.out, &reports)?;
    if let Some(ranked) = bench::strict_ranking(&reports) {
        println!("ranking appraisal > memory > no-memory: {}", if ranked { "yes" } else { "no" });
    }
    let outcome = if reports.iter().all(|r| r.complete) { Outcome::Complete } else { Outcome::Partial };
    ctx.manifest("bench steu", outcome)?;
    Ok(outcome)
}

fn run_simulate(ctx: &RunContext, args: SimulateArgs) -> Result<Outcome> {
    let script = match &args.script {
        Some(path) => FixedScript::load(path)?,
        None => FixedScript::sample(),
    };
    let profile = ctx.profile(args.profile.as_deref())?;
    let strategies = strategies(&args.strategy)?;
    let mut outcome = Outcome::Complete;
    for s in &strategies {
        let replies = replies_for(args.replies.as_deref(), s.slug(), strategies.len() > 1)?;
        let clock = ctx.clock(replies.is_some());
        let gateway = ctx.gateway(replies.as_deref(), clock.clone())?;
        let sim = simulate_fixed(*s, &profile, &script, &gateway, clock)?;
        sim.write(&ctx.out.join(s.slug()))?;
        match &sim.error {
            None => println!("{:<17} {} turns, {} calls", s.slug(), sim.turns.len(), sim.audit.len()),
            Some(e) => {
                eprintln!("{}: aborted after {} turns: {e}", s.slug(), sim.turns.len());
                outcome = Outcome::Partial;
            }
        }
    }
    ctx.manifest("simulate", outcome)?;
    Ok(outcome)
}

fn run_analyze(ctx: &RunContext, args: AnalyzeArgs) -> Result<Outcome> {
    let lexicon = match args.lexicon.as_deref().or(ctx.config.lexicon.as_deref()) {
        Some(path) => Lexicon::load(path).with_context(|| format!("loading lexicon {}", path.display()))?,
        None => Lexicon::bundled(),
    };
    let options = AnalyzeOptions {
        grouping: args.group,
        level: args.level,
        format: args.format,
    };
    let docs = analyze::collect_documents(&args.input, options)?;
    let report = analyze::analyze_documents(&docs, &lexicon)?;
    let stats = analyze::variable_stats(&report, args.level);
    analyze::write_outputs(&ctx.out, &report, &stats, args.level)?;
    for v in &stats {
        match (&v.anova.statistic, &v.anova.p, &v.anova.error) {
            (Some(f), Some(p), _) => println!("{:<13} F={f:.2} p={p:.3}", v.variable),
            (_, _, Some(e)) => println!("{:<13} {e}", v.variable),
            _ => {}
        }
    }
    ctx.manifest("analyze", Outcome::Complete)?;
    Ok(Outcome::Complete)
}

fn run_serve(mut ctx: RunContext, out_given: bool) -> Result<Outcome> {
    if out_given {
        ctx.config.state_dir = Some(ctx.out.clone());
    }
    coe_server::serve(&ctx.config)?;
    Ok(Outcome::Complete)
}

fn run_chat(ctx: &RunContext, args: ChatArgs) -> Result<Outcome> {
    let strategy: Strategy = args.strategy.parse()?;
    let clock = ctx.clock(args.replies.is_some());
    let gateway = ctx.gateway(args.replies.as_deref(), clock.clone())?;
    let mut agent = AgentState::new(strategy, ctx.profile(args.profile.as_deref())?, "chat", clock)?;
    let stdin = io::stdin();
    let result = chat::chat_loop(&mut agent, &gateway, stdin.lock(), io::stdout(), args.turns);
    fs::create_dir_all(&ctx.out)?;
    agent.store.save(&ctx.out.join("memory.jsonl"))?;
    let outcome = if result.is_ok() { Outcome::Complete } else { Outcome::Partial };
    ctx.manifest("chat", outcome)?;
    result?;
    Ok(outcome)
}
