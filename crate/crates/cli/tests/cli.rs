use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use realchart::bots::BotKind;
use realchart::engine::{Outcome, Placement, SessionId, TrialId};
use realchart::store::{GuessChoice, GuessEvent};
use realchart_server::{play_session, ClientOptions};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_realchart"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| {
        panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// 26 subjects x 35 trials with `correct` right answers in total.
fn write_log(path: &Path, correct: u32) {
    let (subjects, charts) = (26u32, 35u32);
    let mut out = String::new();
    let mut trial = 0u64;
    for s in 0..subjects {
        let mine = correct / subjects + u32::from(s < correct % subjects);
        for c in 0..charts {
            let right = c < mine;
            let ev = GuessEvent {
                timestamp: 1_000_000 + trial,
                contest_id: "lynx".into(),
                session_id: SessionId(u64::from(s) + 1),
                subject_id: format!("subject-{s}"),
                trial_id: TrialId(trial),
                choice: if right { GuessChoice::Top } else { GuessChoice::Bottom },
                outcome: if right { Outcome::Correct } else { Outcome::Incorrect },
                placement: Placement::RealOnTop,
            };
            out.push_str(&serde_json::to_string(&ev).unwrap());
            out.push('\n');
            trial += 1;
        }
    }
    fs::write(path, out).unwrap();
}

#[test]
fn report_prints_the_contest_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    write_log(&log, 506);

    let text = run(&["report", log.to_str().unwrap()]);
    assert!(text.status.success());
    let text = stdout(&text);
    assert!(text.contains("correct     506 of 910"), "{text}");
    assert!(text.contains("p-value     0.00040 "), "{text}");

    let json = run(&["report", log.to_str().unwrap(), "--format", "json"]);
    let v: Value = serde_json::from_slice(&json.stdout).unwrap();
    let r = &v["contests"][0]["result"];
    assert_eq!(r["trials"], 910);
    assert_eq!(r["correct_guesses"], 506);
    assert_eq!(format!("{:.5}", r["p_value"].as_f64().unwrap()), "0.00040");
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--bot", "coin", "--sessions", "26", "--charts", "35", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);

    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("report{i}.json"));
        let manifest = dir.path().join(format!("manifest{i}.json"));
        let config = repo_file("configs/simulate-null.toml");
        let o = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--format",
            "json",
            "--out",
            out.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
        assert_eq!(m["command"], "simulate");
        assert_eq!(m["seed"], 7);
        assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
        assert_eq!(m["outputs"][0], out.to_str().unwrap());
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn flags_override_the_config_file() {
    let config = repo_file("configs/simulate-null.toml");
    let o = run(&["simulate", "--config", config.to_str().unwrap(), "--sessions", "3", "--charts", "10", "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["sessions"], 3);
    assert_eq!(v["result"]["trials"], 30);
    assert_eq!(v["contest_id"], "null");
}

#[test]
fn validate_log_reports_the_truncated_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    write_log(&log, 506);
    let ok = run(&["validate-log", log.to_str().unwrap()]);
    assert!(ok.status.success());
    assert!(stdout(&ok).starts_with("ok: 910 events in 1 contest"));

    let bytes = fs::read(&log).unwrap();
    let cut = bytes.len() - 40;
    let line = bytes[..cut].iter().filter(|b| **b == b'\n').count() + 1;
    fs::write(&log, &bytes[..cut]).unwrap();

    let o = run(&["validate-log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(&format!("line {line}:")), "{}", stdout(&o));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "validation");
    let lines: Vec<u64> = err["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["line"].as_u64().unwrap())
        .collect();
    assert!(lines.contains(&(line as u64)), "{lines:?}");
}

#[test]
fn validate_log_rejects_inconsistent_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    write_log(&log, 400);
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replace("\"incorrect\"", "\"correct\"").replace("\"outcome\":\"correct\"", "\"outcome\":\"incorrect\"");
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let o = run(&["validate-log", log.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ok"], false);
    assert_eq!(v["violations"][0]["line"], 4);
}

#[test]
fn usage_errors_exit_2_with_json() {
    for args in [
        vec!["simulate", "--bot", "robot"],
        vec!["frobnicate"],
        vec!["report"],
        vec!["simulate", "--config", "/nonexistent/sim.toml"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&o)["error"], "usage", "{args:?}");
    }
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("validate-log"));
}

fn daily_csv(path: &Path, rows: usize) {
    let mut out = String::from("date,price\n");
    let mut price = 1000.0;
    for i in 0..rows {
        let date = format!("{:04}-{:02}-{:02}", 1990 + i / 336, (i / 28) % 12 + 1, i % 28 + 1);
        price += ((i * 7919) % 13) as f64 - 6.0;
        out.push_str(&format!("{date},{price}\n"));
    }
    fs::write(path, out).unwrap();
}

#[test]
fn ingest_then_simulate_on_the_registered_data() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("prices.csv");
    let data = dir.path().join("data");
    daily_csv(&csv, 3000);
    let ingest = |codename: &str| {
        run(&[
            "ingest",
            csv.to_str().unwrap(),
            "--codename",
            codename,
            "--source",
            "synthetic index",
            "--data-dir",
            data.to_str().unwrap(),
            "--format",
            "json",
        ])
    };
    let o = ingest("Lynx");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["returns"], 2999);
    assert_eq!(ingest("Lynx").status.code(), Some(1));

    let config = dir.path().join("sim.toml");
    fs::write(
        &config,
        "[contest]\ncontest_id = \"on-lynx\"\ndataset_codename = \"Lynx\"\nmode = \"daily\"\n",
    )
    .unwrap();
    let manifest = dir.path().join("manifest.json");
    let o = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--sessions",
        "4",
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("simulation on-lynx (Lynx)"));
    let m: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);

    fs::write(&config, fs::read_to_string(&config).unwrap().replace("Lynx", "Puma")).unwrap();
    let o = run(&["simulate", "--config", config.to_str().unwrap(), "--data-dir", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_plays_a_real_session_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("prices.csv");
    let data = dir.path().join("data");
    let log = dir.path().join("events.jsonl");
    daily_csv(&csv, 1000);
    let o = run(&[
        "ingest",
        csv.to_str().unwrap(),
        "--codename",
        "Lynx",
        "--source",
        "synthetic index",
        "--data-dir",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success());

    let config = repo_file("configs/serve.toml");
    let mut child = bin()
        .args([
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--config",
            config.to_str().unwrap(),
            "--data-dir",
            data.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
            "--tick-interval-ms",
            "1",
            "--seed",
            "3",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect(&first).to_string();

    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let report = runtime.block_on(async {
        let stream = tokio::net::TcpStream::connect(&addr).await.unwrap();
        let mut bot = BotKind::Coin.build(Default::default(), 1);
        play_session(stream, &ClientOptions::new("tcp-subject"), bot.as_mut()).await.unwrap()
    });
    child.kill().unwrap();
    child.wait().unwrap();

    assert_eq!(report.contests[0].contest_id, "lynx-daily");
    assert_eq!(report.trials.len(), 35);
    let o = run(&["report", log.to_str().unwrap(), "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["contests"][0]["result"]["correct_guesses"], u64::from(report.score));
    let o = run(&["validate-log", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
}
