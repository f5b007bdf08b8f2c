//! Acceptance criteria, one PASS/FAIL line each. Runs without the test
//! harness so the lines always print; exits non-zero if anything fails.
//!
//! The live-model ranking check runs only when COE_LIVE_STEU_ITEMS points
//! at an item bank and OPENAI_API_KEY is set; otherwise it prints SKIP.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use coe_cli::analyze::{self, AnalyzeOptions, Grouping, InputFormat, Level};
use coe_cli::bench;
use coe_cli::simulate::{simulate_fixed, FixedScript};
use coe_core::clock;
use coe_core::gateway::{Backend, Completion, CompletionRequest, GatewayError, ModerationVerdict, ResponderBackend};
use coe_core::lexicon::{analyze_sentence, Lexicon, Variable, NEGATIVE, POSITIVE};
use coe_core::session::{ServiceConfig, SessionManager, PERMUTATIONS, QUESTIONNAIRE};
use coe_core::stats::{descriptives, f_sf, one_way_anova, t_two_sided_p, welch_t};
use coe_core::steu::{load_items, run_bench, BenchCondition, BenchOptions, BenchVariant, SteuItem};
use coe_core::{AgentProfile, Gateway, Strategy};
use coe_server::{router, GatewayConfig};

type Check = fn() -> Result<Verdict>;

enum Verdict {
    Pass(String),
    Skip(String),
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn within(elapsed: Duration, limit: Duration) -> Result<()> {
    ensure!(elapsed < limit, "took {elapsed:?}, limit {limit:?}");
    Ok(())
}

fn orchestration_determinism() -> Result<Verdict> {
    let start = Instant::now();
    let script = FixedScript::sample();
    let profile = AgentProfile::wunderbar();
    let tmp = tempfile::tempdir()?;
    let mut calls = BTreeMap::new();
    for strategy in Strategy::ALL {
        let per_turn = strategy.calls_per_turn();
        let replies: Vec<String> = (0..script.len() * per_turn).map(|i| format!("{strategy} says {i}.")).collect();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let clock = clock::logical();
            let gateway = Gateway::scripted(replies.clone()).with_clock(clock.clone());
            let sim = simulate_fixed(strategy, &profile, &script, &gateway, clock)?;
            ensure!(sim.complete(), "{strategy}: {:?}", sim.error);
            let dir = tmp.path().join(format!("{}-{run}", strategy.slug()));
            sim.write(&dir)?;
            let mut files = Vec::new();
            for f in ["memory.jsonl", "replies.txt", "turns.jsonl", "audit.jsonl"] {
                files.push(std::fs::read(dir.join(f))?);
            }
            outputs.push(files);
            calls.insert(strategy.slug(), gateway.audit_len());
        }
        ensure!(outputs[0] == outputs[1], "{strategy}: runs differ");
    }
    ensure!(calls["chain-of-emotion"] == 12, "chain-of-emotion made {} calls", calls["chain-of-emotion"]);
    ensure!(calls["memory"] == 6 && calls["no-memory"] == 6, "calls {calls:?}");
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(Verdict::Pass(format!("calls {calls:?}, {:?}", start.elapsed())))
}

fn synthetic_bank() -> Result<Vec<SteuItem>> {
    Ok(load_items(&manifest_dir().join("../core/data/steu/synthetic_42.jsonl"))?)
}

fn answer_key(items: Vec<SteuItem>) -> Gateway {
    Gateway::new(Arc::new(ResponderBackend::new(move |req| {
        let prompt = &req.messages.last().unwrap().content;
        let item = items
            .iter()
            .filter_map(|i| prompt.rfind(&i.stem).map(|pos| (pos, i)))
            .max_by_key(|(pos, _)| *pos)
            .map(|(_, i)| i)
            .ok_or_else(|| GatewayError::Scripted("no item in prompt".into()))?;
        Ok(format!("[{}]", item.key_letter()))
    })))
}

fn steu_oracle() -> Result<Verdict> {
    let start = Instant::now();
    let items = synthetic_bank()?;
    let a_keyed = items.iter().filter(|i| i.key == 0).count() as u32;
    for variant in bench::ALL_VARIANTS {
        let condition = BenchCondition::new(variant);
        let key = run_bench(&condition, &items, &answer_key(items.clone()), BenchOptions::default())
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        ensure!(key.sum == 42 && key.mean == 1.0, "{variant}: answer key scored {}", key.sum);

        let always_a = Gateway::new(Arc::new(ResponderBackend::new(|_| Ok("[A]".to_string()))));
        let report = run_bench(&condition, &items, &always_a, BenchOptions::default()).map_err(|e| anyhow::anyhow!("{e}"))?;
        ensure!(report.sum == a_keyed, "{variant}: always-A scored {} not {a_keyed}", report.sum);
        for r in [&key, &report] {
            ensure!(r.cumulative.windows(2).all(|w| w[1].running_sum >= w[0].running_sum), "{variant}: curve decreases");
            let last = r.cumulative.last().context("empty curve")?;
            ensure!((last.item, last.running_sum) == (42, r.sum), "{variant}: curve ends at {last:?}");
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(Verdict::Pass(format!("42/42, always-A {a_keyed}, {:?}", start.elapsed())))
}

fn binary_score_descriptives() -> Result<Verdict> {
    let v: Vec<f64> = (0..42).map(|i| if i < 35 { 1.0 } else { 0.0 }).collect();
    let d = descriptives(&v).context("empty")?;
    ensure!((d.mean - 0.83).abs() <= 0.005, "mean {}", d.mean);
    ensure!((d.sd - 0.38).abs() <= 0.005, "sd {}", d.sd);
    Ok(Verdict::Pass(format!("mean {:.4}, sd {:.4}", d.mean, d.sd)))
}

fn stats_oracle() -> Result<Verdict> {
    let a = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).context("anova")?;
    ensure!((a.f - 3.0).abs() <= 1e-9, "F {}", a.f);
    ensure!((a.df_between, a.df_within) == (2, 6), "df ({}, {})", a.df_between, a.df_within);
    ensure!((a.p - 0.125).abs() <= 1e-4, "p {}", a.p);

    let t = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).context("welch")?;
    ensure!((t.t + 3.6742).abs() <= 1e-4, "t {}", t.t);
    ensure!((t.df - 4.0).abs() <= 1e-6, "df {}", t.df);

    let table = std::fs::read_to_string(manifest_dir().join("../core/tests/data/p_value_oracle.csv"))?;
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64> { Ok(f[i].parse()?) };
        let got = match f[0] {
            "t" => t_two_sided_p(num(1)?, num(2)?),
            "f" => f_sf(num(1)?, num(2)?, num(3)?),
            other => anyhow::bail!("unknown distribution {other}"),
        };
        worst = worst.max((got - num(4)?).abs());
        rows += 1;
    }
    ensure!(rows == 50, "{rows} oracle rows");
    ensure!(worst <= 1e-9, "max p-value error {worst:e}");
    Ok(Verdict::Pass(format!("50 rows, max error {worst:.1e}")))
}

fn lexicon_analyzer() -> Result<Verdict> {
    let lex = Lexicon::bundled();
    let options = AnalyzeOptions {
        grouping: Grouping::Condition,
        level: Level::Sentence,
        format: InputFormat::Txt,
    };
    let docs = analyze::collect_documents(&manifest_dir().join("data/sample"), options)?;
    let report = analyze::analyze_documents(&docs, &lex)?;
    let violations = report
        .sentences
        .iter()
        .filter(|s| s.metrics.pct_pos + s.metrics.pct_neg > s.metrics.pct_affect + 1e-9)
        .count();
    ensure!(violations == 0, "{violations} of {} sentences break nesting", report.sentences.len());

    let targets = [("no-memory", 18.0), ("memory", 15.2), ("chain-of-emotion", 17.0)];
    let mut means = Vec::new();
    for (group, target) in targets {
        let g = report.groups.iter().find(|g| g.group == group).with_context(|| format!("no group {group}"))?;
        let mean = g.get(Variable::WordCount).mean;
        ensure!((mean - target).abs() <= 0.2 * target, "{group}: mean words {mean:.2}, target {target}");
        means.push(format!("{mean:.2}"));
    }

    let swapped = lex.with_valence_swapped();
    let mut pool: Vec<String> = ["the", "table", "walked", "seven", "coffee", "was", "near", "our"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for category in [POSITIVE, NEGATIVE] {
        pool.extend(
            lex.categories()[category]
                .iter()
                .filter(|w| !w.ends_with('*') && !w.contains('\''))
                .take(200)
                .cloned(),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let len = rng.gen_range(1..20);
        let words: Vec<&str> = (0..len).map(|_| pool.choose(&mut rng).unwrap().as_str()).collect();
        let s = words.join(" ") + ".";
        let (a, b) = (analyze_sentence(&s, &lex), analyze_sentence(&s, &swapped));
        ensure!((a.tone + b.tone - 100.0).abs() < 1e-9, "tone not antisymmetric on {s:?}");
    }
    Ok(Verdict::Pass(format!(
        "{} sentences nested, word means {}, 1000 swaps",
        report.sentences.len(),
        means.join(" / ")
    )))
}

/// Numbered replies; a reply to input ending in "trigger" is flagged.
#[derive(Default)]
struct StudyBackend {
    calls: AtomicUsize,
}

impl Backend for StudyBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let last = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        if last.trim_end().ends_with("trigger") {
            return Ok(Completion::text("FLAGGED reply"));
        }
        Ok(Completion::text(format!("reply {n}")))
    }

    fn moderate(&self, text: &str) -> Result<ModerationVerdict, GatewayError> {
        Ok(if text.starts_with("FLAGGED") {
            ModerationVerdict::flagged_for("harassment", 0.97)
        } else {
            ModerationVerdict::pass()
        })
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, token: bool) -> Result<(StatusCode, String)> {
    let mut req = Request::builder().method(method).uri(uri);
    if token {
        req = req.header("authorization", "Bearer t0ken");
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string()))?,
        None => req.body(Body::empty())?,
    };
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await?;
    Ok((status, String::from_utf8(bytes.to_vec())?))
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Result<Value> {
    let (status, text) = call(app, method, uri, body, false).await?;
    ensure!(status.is_success(), "{method} {uri}: {status} {text}");
    Ok(serde_json::from_str(&text)?)
}

async fn service_flow(app: &Router) -> Result<()> {
    let mut orders = Vec::new();
    let mut ids = Vec::new();
    for _ in 0..7 {
        let body = json_call(app, "POST", "/sessions", None).await?;
        let order: [Strategy; 3] = serde_json::from_value(body["condition_order"].clone())?;
        orders.push(order);
        ids.push(body["session_id"].as_str().context("session id")?.to_string());
    }
    ensure!(orders[..6] == PERMUTATIONS[..], "first six orders {orders:?}");
    ensure!(orders[6] == orders[0], "seventh order {:?}", orders[6]);

    let id = &ids[0];
    for (index, strategy) in orders[0].iter().enumerate() {
        for i in 0..5 {
            let body = json_call(app, "POST", &format!("/sessions/{id}/turns"), Some(json!({"text": format!("line {i}")}))).await?;
            let expected = if i == 4 { "questionnaire" } else { "playing" };
            ensure!(body["stage"] == expected, "turn {}: stage {}", i + 2, body["stage"]);
        }
        let scores: BTreeMap<&str, i64> = QUESTIONNAIRE.iter().map(|q| (q.key, 4)).collect();
        let body = json_call(
            app,
            "POST",
            &format!("/sessions/{id}/questionnaire"),
            Some(json!({"condition": strategy, "scores": scores})),
        )
        .await?;
        let expected = if index == 2 { "finished" } else { "playing" };
        ensure!(body["stage"] == expected, "after questionnaire {index}: {}", body["stage"]);
    }

    let flagged = &ids[1];
    let body = json_call(app, "POST", &format!("/sessions/{flagged}/turns"), Some(json!({"text": "trigger"}))).await?;
    ensure!(body["stage"] == "terminated" && body["reply"].is_null(), "flagged turn gave {body}");
    let transcript = json_call(app, "GET", &format!("/sessions/{flagged}/transcript"), None).await?;
    ensure!(!transcript.to_string().contains("FLAGGED"), "flagged reply visible");

    let (status, text) = call(app, "GET", "/admin/export?filter=finished", None, true).await?;
    ensure!(status == StatusCode::OK, "export {status}");
    let records: Vec<Value> = text.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;
    ensure!(records.len() == 1, "{} finished records", records.len());
    let conditions = records[0]["conditions"].as_array().context("conditions")?;
    ensure!(conditions.len() == 3, "{} conditions", conditions.len());
    for c in conditions {
        ensure!(!c["transcript"].as_array().is_none_or(|t| t.is_empty()), "empty transcript");
        ensure!(c["questionnaire"]["scores"].as_array().map_or(0, |s| s.len()) == 12, "questionnaire missing");
    }
    Ok(())
}

fn service_protocol() -> Result<Verdict> {
    let start = Instant::now();
    let gateway = Gateway::new(Arc::new(StudyBackend::default())).with_clock(clock::logical());
    let config = ServiceConfig {
        admin_token: Some("t0ken".into()),
        ..ServiceConfig::default()
    };
    let manager = Arc::new(SessionManager::open(config, Arc::new(gateway), clock::logical())?);
    let app = router(manager);
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    runtime.block_on(service_flow(&app))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(Verdict::Pass(format!("7 sessions, 1 finished export, {:?}", start.elapsed())))
}

fn live_steu_ranking() -> Result<Verdict> {
    let (Ok(items), Ok(_)) = (std::env::var("COE_LIVE_STEU_ITEMS"), std::env::var("OPENAI_API_KEY")) else {
        return Ok(Verdict::Skip(
            "set COE_LIVE_STEU_ITEMS and OPENAI_API_KEY, or run scripts/live_steu_ranking.sh".into(),
        ));
    };
    let items = load_items(Path::new(&items))?;
    let gateway = GatewayConfig::default().build(clock::system())?;
    let mut reports = Vec::new();
    for variant in [BenchVariant::NoMemory, BenchVariant::Memory, BenchVariant::AppraisalPrompts] {
        let report = run_bench(&BenchCondition::new(variant), &items, &gateway, BenchOptions::default())
            .map_err(|e| anyhow::anyhow!("{variant}: {e}"))?;
        reports.push(report);
    }
    let sums: Vec<String> = reports.iter().map(|r| format!("{} {}", r.condition, r.sum)).collect();
    ensure!(bench::strict_ranking(&reports) == Some(true), "no strict ranking: {}", sums.join(", "));
    Ok(Verdict::Pass(sums.join(", ")))
}

fn main() -> ExitCode {
    // `cargo test -- --list` and similar harness flags
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let checks: [(&str, Check); 7] = [
        ("orchestration determinism", orchestration_determinism),
        ("steu harness oracle", steu_oracle),
        ("binary score descriptives", binary_score_descriptives),
        ("stats oracle", stats_oracle),
        ("lexicon analyzer", lexicon_analyzer),
        ("service protocol", service_protocol),
        ("live steu ranking (non-CI)", live_steu_ranking),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(Verdict::Pass(detail)) => println!("PASS {name}: {detail}"),
            Ok(Verdict::Skip(why)) => println!("SKIP {name}: {why}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
