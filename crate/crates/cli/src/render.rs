use std::fmt::Write;

use realchart::stats::ContestResult;
use realchart_server::SimulationReport;
use serde::Serialize;

/// One contest as rebuilt from an event log.
#[derive(Debug, Serialize)]
pub struct LogContest {
    pub contest_id: String,
    pub charts_per_subject: u32,
    pub sessions: usize,
    pub incomplete_sessions: usize,
    pub excluded: Vec<String>,
    pub result: Option<ContestResult>,
}

fn result_lines(out: &mut String, result: &ContestResult) {
    let _ = writeln!(
        out,
        "  subjects    {} x {} charts",
        result.subjects, result.charts_per_subject
    );
    let _ = writeln!(
        out,
        "  correct     {} of {} ({:.2}%)",
        result.correct_guesses,
        result.trials,
        result.accuracy() * 100.0
    );
    let _ = writeln!(out, "  p-value     {:.5} ({:e})", result.p_value, result.p_value);
    let hist: Vec<String> = result.histogram.iter().map(|(k, n)| format!("{k}:{n}")).collect();
    let _ = writeln!(out, "  histogram   {}", hist.join(" "));
}

fn excluded_line(out: &mut String, excluded: &[String]) {
    if excluded.is_empty() {
        let _ = writeln!(out, "  excluded    none");
    } else {
        let _ = writeln!(out, "  excluded    {} ({})", excluded.len(), excluded.join(", "));
    }
}

pub fn log_report(contests: &[LogContest]) -> String {
    let mut out = String::new();
    for c in contests {
        let _ = writeln!(out, "contest {}", c.contest_id);
        let _ = writeln!(
            out,
            "  sessions    {} complete, {} incomplete",
            c.sessions, c.incomplete_sessions
        );
        excluded_line(&mut out, &c.excluded);
        match &c.result {
            Some(r) => result_lines(&mut out, r),
            None => {
                let _ = writeln!(out, "  no subjects left after exclusions");
            }
        }
    }
    out
}

/// The serialized name of a unit enum variant.
fn name(v: &impl Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::from("?"),
    }
}

pub fn simulation(report: &SimulationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "simulation {} ({})", report.contest_id, report.codename);
    let _ = writeln!(
        out,
        "  bot         {} on {}, seed {}{}",
        name(&report.bot),
        name(&report.feature),
        report.seed,
        if report.control { ", permuted control" } else { "" }
    );
    excluded_line(&mut out, &report.excluded);
    if let Some(r) = &report.result {
        result_lines(&mut out, r);
    }
    let w = &report.post_warmup;
    match w.accuracy {
        Some(a) => {
            let _ = writeln!(
                out,
                "  after {} warm-up trials: {} of {} ({:.2}%)",
                w.warmup,
                w.correct,
                w.trials,
                a * 100.0
            );
        }
        None => {
            let _ = writeln!(out, "  no trials after {} warm-up trials", w.warmup);
        }
    }
    out
}
