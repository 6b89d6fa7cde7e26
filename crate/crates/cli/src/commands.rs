use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use realchart::engine::{derive_seed, Engine};
use realchart::stats::{binomial_tail, ExclusionPolicy, StatsError};
use realchart::store::{
    self, load_prices, read_complete_lines, replay, DatasetRecord, DatasetRegistry, EventLog, EventSink, GuessEvent,
    LogViolation, StoreError,
};
use realchart_server::{Clock, ServerOptions, TranscriptLog};
use serde_json::json;

use crate::manifest::{tool_version, InputDigest, RunManifest};
use crate::render::{self, LogContest};
use crate::{config, Failure, Format, IngestArgs, ReportArgs, ServeArgs, SimulateArgs, ValidateArgs};

const REGISTRY: &str = "registry.json";

fn emit(format: Format, text: String, value: &impl serde::Serialize) -> Result<String> {
    Ok(match format {
        Format::Text => text,
        Format::Json => serde_json::to_string_pretty(value)? + "\n",
    })
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let prices = load_prices(&a.input, a.frequency.into()).with_context(|| format!("{}", a.input.display()))?;
    fs::create_dir_all(&a.data_dir)?;
    let path = a.data_dir.join(REGISTRY);
    let mut registry = DatasetRegistry::load(&path)?;
    let record = DatasetRecord::new(a.codename, a.source, a.frequency.into(), prices);
    let record = registry.register(record)?.clone();
    registry.save(&path)?;
    let summary = json!({
        "codename": record.codename,
        "frequency": record.frequency,
        "returns": record.prices.horizon(),
        "practice_returns": record.practice_slice.len(),
        "registry": path.display().to_string(),
    });
    let text = format!(
        "registered {} ({} returns, last {} kept for practice) in {}\n",
        record.codename,
        record.prices.horizon(),
        record.practice_slice.len(),
        path.display()
    );
    print!("{}", emit(a.format, text, &summary)?);
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = config::load_serve(&a.config)?;
    let registry = DatasetRegistry::load(a.data_dir.join(REGISTRY))?;
    let sink: Arc<dyn EventSink> = Arc::new(EventLog::open(&a.log)?);
    let engine = Arc::new(Engine::with_sink(sink));
    for (i, mut contest) in cfg.contests.into_iter().enumerate() {
        if let Some(ms) = a.tick_interval_ms {
            contest.window.tick_interval = Duration::from_millis(ms);
        }
        if let Some(root) = a.seed {
            contest.seed = derive_seed(root, 0, i as u64);
        }
        let data = registry
            .get(&contest.dataset_codename)
            .map_err(|e| Failure::Usage(e.to_string()))?
            .contest_data();
        let id = contest.contest_id.clone();
        engine
            .create_contest(contest, data)
            .map_err(|e| Failure::Usage(format!("contest {id}: {e}")))?;
    }
    let mut opts = ServerOptions::new(Clock::system());
    if let Some(ms) = cfg.handshake_timeout_ms {
        opts.handshake_timeout = Duration::from_millis(ms);
    }
    if let Some(path) = &a.transcript {
        opts.transcript = Some(Arc::new(TranscriptLog::open(path)?));
    }

    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("bind {}", a.bind))?;
        let mut stdout = std::io::stdout();
        writeln!(stdout, "listening on {}", listener.local_addr()?)?;
        stdout.flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        realchart_server::serve(listener, engine, opts, shutdown).await?;
        Ok(())
    })
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = config::load_simulation(&a)?;
    let mut inputs = Vec::new();
    if let Some(path) = &a.config {
        inputs.push(InputDigest::of(path)?);
    }
    let dataset = match &a.data_dir {
        Some(dir) => {
            let path = dir.join(REGISTRY);
            inputs.push(InputDigest::of(&path).with_context(|| format!("{}", path.display()))?);
            let registry = DatasetRegistry::load(&path)?;
            let record = registry
                .get(&cfg.contest.dataset_codename)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            Some(record.contest_data().scoring)
        }
        None => None,
    };
    let sink = match &a.log {
        Some(path) => Some(Arc::new(EventLog::open(path)?) as Arc<dyn EventSink>),
        None => None,
    };
    let report = realchart_server::simulate(&cfg, dataset, sink)?;
    let text = emit(a.format, render::simulation(&report), &report)?;
    match &a.out {
        Some(path) => fs::write(path, &text)?,
        None => print!("{text}"),
    }

    if let Some(path) = &a.manifest {
        let manifest = RunManifest {
            command: "simulate".into(),
            config_path: a.config.as_ref().map(|p| p.display().to_string()),
            seed: cfg.seed,
            inputs,
            outputs: [&a.out, &a.log]
                .into_iter()
                .flatten()
                .map(|p| p.display().to_string())
                .collect(),
            tool_version: tool_version(),
            config: serde_json::to_value(&cfg)?,
        };
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    Ok(())
}

/// Complete lines of a log as events. A trailing partial line, left by a
/// crash mid-write, is skipped; any other bad line is a validation failure.
fn load_events(path: &Path) -> Result<Vec<GuessEvent>> {
    let lines = read_complete_lines(path).with_context(|| format!("{}", path.display()))?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let event = serde_json::from_str(line).map_err(|e| {
            Failure::Invalid(vec![LogViolation {
                line: i + 1,
                message: e.to_string(),
            }])
        })?;
        events.push(event);
    }
    Ok(events)
}

fn contests_from(events: &[GuessEvent], policy: &ExclusionPolicy) -> Result<Vec<LogContest>> {
    let mut out = Vec::new();
    for (_, c) in replay(events) {
        let (result, excluded) = match c.summarize(policy) {
            Ok(s) => (Some(s.result), s.excluded),
            Err(StoreError::Stats(StatsError::NoRecords)) => {
                (None, c.records.iter().map(|r| r.subject_id.clone()).collect())
            }
            Err(e) => return Err(e.into()),
        };
        out.push(LogContest {
            contest_id: c.contest_id,
            charts_per_subject: c.charts_per_subject,
            sessions: c.records.len(),
            incomplete_sessions: c.incomplete.len(),
            excluded,
            result,
        });
    }
    Ok(out)
}

pub fn report(a: ReportArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.min_response_rate) {
        return Err(Failure::Usage("--min-response-rate must be within [0, 1]".into()).into());
    }
    let policy = ExclusionPolicy {
        min_response_rate: a.min_response_rate,
    };
    let contests = contests_from(&load_events(&a.log)?, &policy)?;
    let text = if contests.is_empty() {
        "no events\n".to_string()
    } else {
        render::log_report(&contests)
    };
    print!("{}", emit(a.format, text, &json!({ "contests": contests }))?);
    Ok(())
}

/// Checks that a summary agrees with itself and with the exact test.
fn aggregation_problems(c: &LogContest) -> Vec<String> {
    let Some(r) = &c.result else {
        return Vec::new();
    };
    let mut problems = Vec::new();
    if r.trials != u64::from(r.subjects) * u64::from(r.charts_per_subject) {
        problems.push(format!("{} trials for {} subjects", r.trials, r.subjects));
    }
    let from_hist: u64 = r.histogram.iter().map(|(k, n)| u64::from(*k) * u64::from(*n)).sum();
    if from_hist != r.correct_guesses {
        problems.push(format!("histogram sums to {from_hist}, total is {}", r.correct_guesses));
    }
    if r.histogram.values().map(|n| u64::from(*n)).sum::<u64>() != u64::from(r.subjects) {
        problems.push("histogram does not cover every subject".into());
    }
    match binomial_tail(r.trials, r.correct_guesses) {
        Ok(p) if p == r.p_value => {}
        Ok(p) => problems.push(format!("p-value {} differs from exact tail {p}", r.p_value)),
        Err(e) => problems.push(e.to_string()),
    }
    problems
}

pub fn validate_log(a: ValidateArgs) -> Result<()> {
    let bytes = fs::read(&a.log).with_context(|| format!("{}", a.log.display()))?;
    let mut violations = store::validate_log(&bytes);
    let mut events = 0;
    let mut contests = 0;
    if violations.is_empty() {
        let parsed = load_events(&a.log)?;
        events = parsed.len();
        let summaries = contests_from(&parsed, &ExclusionPolicy::default())?;
        contests = summaries.len();
        // line 0: the problem belongs to the log as a whole
        for c in &summaries {
            violations.extend(aggregation_problems(c).into_iter().map(|m| LogViolation {
                line: 0,
                message: format!("contest {}: {m}", c.contest_id),
            }));
        }
    }

    let text = if violations.is_empty() {
        format!("ok: {events} events in {contests} contest(s)\n")
    } else {
        violations
            .iter()
            .map(|v| format!("line {}: {}\n", v.line, v.message))
            .collect()
    };
    let value = json!({
        "ok": violations.is_empty(),
        "events": events,
        "contests": contests,
        "violations": violations,
    });
    print!("{}", emit(a.format, text, &value)?);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(violations).into())
    }
}
