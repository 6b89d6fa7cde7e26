//! Dataset ingestion, the codename registry and the guess event log.
//!
//! The event log is JSON Lines: one [`GuessEvent`] object per line, appended
//! by a single writer. It is the source of truth for contest results;
//! [`replay`] rebuilds every contest's subject records from it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{practice_split, ContestData, Mode, Outcome, Placement, SessionId, Slot, TrialId};
use crate::series::{compute_returns, PricePath, SeriesError};
use crate::stats::{summarize_with_policy, ContestSummary, ExclusionPolicy, StatsError, SubjectRecord};
use crate::Millis;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("expected header `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("need at least 2 valid rows, found {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("codename {0} is already registered")]
    DuplicateCodename(String),
    #[error("unknown codename {0}")]
    UnknownCodename(String),
    #[error("codename {0} must not reveal the source description")]
    RevealingCodename(String),
}

/// What the subject did on a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessChoice {
    Top,
    Bottom,
    Timeout,
}

impl From<Slot> for GuessChoice {
    fn from(slot: Slot) -> Self {
        match slot {
            Slot::Top => GuessChoice::Top,
            Slot::Bottom => GuessChoice::Bottom,
        }
    }
}

impl GuessChoice {
    pub fn slot(self) -> Option<Slot> {
        match self {
            GuessChoice::Top => Some(Slot::Top),
            GuessChoice::Bottom => Some(Slot::Bottom),
            GuessChoice::Timeout => None,
        }
    }
}

/// One resolved trial. `placement` is kept for audit and never sent to
/// clients before feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessEvent {
    /// UTC milliseconds since the epoch.
    pub timestamp: Millis,
    pub contest_id: String,
    pub session_id: SessionId,
    pub subject_id: String,
    pub trial_id: TrialId,
    pub choice: GuessChoice,
    pub outcome: Outcome,
    pub placement: Placement,
}

impl GuessEvent {
    /// Outcome implied by choice and placement.
    pub fn expected_outcome(&self) -> Outcome {
        match self.choice.slot() {
            Some(slot) if slot == self.placement.real_slot() => Outcome::Correct,
            _ => Outcome::Incorrect,
        }
    }
}

/// Receiver for resolved trials.
pub trait EventSink: Send + Sync {
    fn append(&self, event: &GuessEvent) -> Result<u64, StoreError>;
}

/// Keeps events in memory; handy for tests and simulations.
#[derive(Debug, Default)]
pub struct MemorySink {
    events: Mutex<Vec<GuessEvent>>,
}

impl MemorySink {
    pub fn events(&self) -> Vec<GuessEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl EventSink for MemorySink {
    fn append(&self, event: &GuessEvent) -> Result<u64, StoreError> {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        events.push(event.clone());
        Ok(events.len() as u64 - 1)
    }
}

/// Append-only JSON Lines file.
///
/// Each record is written with a single `write_all` of the full line,
/// newline included. Opening an existing file drops a trailing partial line
/// left by an interrupted write.
#[derive(Debug)]
pub struct JsonlLog {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl JsonlLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let complete = complete_prefix_len(&mut file)?;
        if complete != file.metadata()?.len() {
            tracing::warn!(path = %path.display(), "dropping partial trailing line");
            file.set_len(complete)?;
        }
        Ok(Self {
            path,
            inner: Mutex::new((file, complete)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and returns the byte offset of its line.
    pub fn append<T: Serialize>(&self, record: &T) -> Result<u64, StoreError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let (file, len) = &mut *guard;
        let offset = *len;
        file.write_all(&line)?;
        file.flush()?;
        *len += line.len() as u64;
        Ok(offset)
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        let guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        guard.0.sync_data()?;
        Ok(())
    }
}

/// Length of the file up to and including its last newline.
fn complete_prefix_len(file: &mut File) -> io::Result<u64> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    Ok(bytes
        .iter()
        .rposition(|&b| b == b'\n')
        .map_or(0, |i| i as u64 + 1))
}

/// The durable guess log.
#[derive(Debug)]
pub struct EventLog {
    log: JsonlLog,
}

impl EventLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self {
            log: JsonlLog::open(path)?,
        })
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }
}

impl EventSink for EventLog {
    fn append(&self, event: &GuessEvent) -> Result<u64, StoreError> {
        self.log.append(event)
    }
}

/// Complete lines of a JSON Lines file; a trailing line without its newline
/// was never fully written and is skipped.
pub fn read_complete_lines(path: impl AsRef<Path>) -> Result<Vec<String>, StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        if let Some(line) = buf.strip_suffix('\n') {
            if !line.trim().is_empty() {
                lines.push(line.to_string());
            }
        }
    }
    Ok(lines)
}

/// Reads every complete event from a log file.
pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<GuessEvent>, StoreError> {
    read_complete_lines(path)?
        .iter()
        .map(|l| serde_json::from_str(l).map_err(StoreError::from))
        .collect()
}

/// Subject records rebuilt from the log for one contest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedContest {
    pub contest_id: String,
    pub charts_per_subject: u32,
    /// Complete sessions, in order of their first event.
    pub records: Vec<SubjectRecord>,
    /// Sessions with fewer events than `charts_per_subject`.
    pub incomplete: Vec<SessionId>,
}

impl ReplayedContest {
    pub fn summarize(&self, policy: &ExclusionPolicy) -> Result<ContestSummary, StoreError> {
        Ok(summarize_with_policy(
            &self.records,
            self.charts_per_subject,
            policy,
        )?)
    }
}

/// Groups events by contest and session. The number of charts per subject
/// is taken from the longest session of each contest.
pub fn replay(events: &[GuessEvent]) -> BTreeMap<String, ReplayedContest> {
    let mut sessions: BTreeMap<&str, Vec<(SessionId, SubjectRecord)>> = BTreeMap::new();
    for ev in events {
        let list = sessions.entry(&ev.contest_id).or_default();
        let pos = match list.iter().position(|(id, _)| *id == ev.session_id) {
            Some(p) => p,
            None => {
                list.push((ev.session_id, SubjectRecord::new(ev.subject_id.clone(), 0, 0, 0)));
                list.len() - 1
            }
        };
        let rec = &mut list[pos].1;
        rec.assigned += 1;
        if ev.choice != GuessChoice::Timeout {
            rec.answered += 1;
        }
        if ev.outcome == Outcome::Correct {
            rec.correct += 1;
        }
    }
    sessions
        .into_iter()
        .map(|(contest, list)| {
            let charts = list.iter().map(|(_, r)| r.assigned).max().unwrap_or(0);
            let (complete, partial): (Vec<_>, Vec<_>) =
                list.into_iter().partition(|(_, r)| r.assigned == charts);
            if !partial.is_empty() {
                tracing::warn!(contest, sessions = partial.len(), "skipping incomplete sessions");
            }
            (
                contest.to_string(),
                ReplayedContest {
                    contest_id: contest.to_string(),
                    charts_per_subject: charts,
                    records: complete.into_iter().map(|(_, r)| r).collect(),
                    incomplete: partial.into_iter().map(|(id, _)| id).collect(),
                },
            )
        })
        .collect()
}

/// A problem found by [`validate_log`], with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogViolation {
    pub line: usize,
    pub message: String,
}

/// Strict audit of a raw event log: every line complete and well-formed,
/// outcomes consistent with choice and placement, per-session timestamps
/// strictly increasing, trial ids unique, and sessions complete.
pub fn validate_log(bytes: &[u8]) -> Vec<LogViolation> {
    let mut out = Vec::new();
    let text = String::from_utf8_lossy(bytes);
    let mut last_ts: BTreeMap<(String, SessionId), (Millis, String)> = BTreeMap::new();
    let mut trials: BTreeMap<(String, TrialId), usize> = BTreeMap::new();
    let mut session_len: BTreeMap<(String, SessionId), (u32, usize)> = BTreeMap::new();
    let ends_with_newline = text.ends_with('\n');
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let Some(line) = raw.strip_suffix('\n') else {
            debug_assert!(!ends_with_newline);
            out.push(LogViolation {
                line: line_no,
                message: "truncated line (no terminating newline)".into(),
            });
            continue;
        };
        if line.trim().is_empty() {
            out.push(LogViolation {
                line: line_no,
                message: "blank line".into(),
            });
            continue;
        }
        let ev: GuessEvent = match serde_json::from_str(line) {
            Ok(ev) => ev,
            Err(e) => {
                out.push(LogViolation {
                    line: line_no,
                    message: format!("malformed event: {e}"),
                });
                continue;
            }
        };
        if ev.outcome != ev.expected_outcome() {
            out.push(LogViolation {
                line: line_no,
                message: format!(
                    "outcome {:?} inconsistent with choice {:?} and placement {:?}",
                    ev.outcome, ev.choice, ev.placement
                ),
            });
        }
        let key = (ev.contest_id.clone(), ev.session_id);
        if let Some((prev, subject)) = last_ts.get(&key) {
            if ev.timestamp <= *prev {
                out.push(LogViolation {
                    line: line_no,
                    message: format!(
                        "timestamp {} not after previous {} in session {}",
                        ev.timestamp, prev, ev.session_id
                    ),
                });
            }
            if *subject != ev.subject_id {
                out.push(LogViolation {
                    line: line_no,
                    message: format!("session {} changed subject", ev.session_id),
                });
            }
        }
        last_ts.insert(key.clone(), (ev.timestamp, ev.subject_id.clone()));
        if let Some(first) = trials.insert((ev.contest_id.clone(), ev.trial_id), line_no) {
            out.push(LogViolation {
                line: line_no,
                message: format!("trial {} already resolved on line {first}", ev.trial_id),
            });
        }
        let entry = session_len.entry(key).or_insert((0, line_no));
        entry.0 += 1;
        entry.1 = line_no;
    }
    let mut longest: BTreeMap<&str, u32> = BTreeMap::new();
    for ((contest, _), (n, _)) in &session_len {
        let m = longest.entry(contest).or_default();
        *m = (*m).max(*n);
    }
    for ((contest, session), (n, last_line)) in &session_len {
        let expected = longest[contest.as_str()];
        if *n < expected {
            out.push(LogViolation {
                line: *last_line,
                message: format!(
                    "session {session} of contest {contest} is incomplete: {n} of {expected} trials"
                ),
            });
        }
    }
    out.sort_by_key(|v| v.line);
    out
}

fn row_error(line: u64, message: impl Into<String>) -> StoreError {
    StoreError::Row {
        line,
        message: message.into(),
    }
}

fn parse_time(field: &str, frequency: Mode, line: u64) -> Result<i64, StoreError> {
    let field = field.trim();
    match frequency {
        Mode::Daily => NaiveDate::parse_from_str(field, "%Y-%m-%d")
            .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis())
            .map_err(|e| row_error(line, format!("bad date `{field}`: {e}"))),
        Mode::Tick => field
            .parse::<i64>()
            .or_else(|_| DateTime::parse_from_rfc3339(field).map(|t| t.timestamp_millis()))
            .map_err(|_| row_error(line, format!("bad timestamp `{field}`"))),
    }
}

/// Parses a price CSV with header `date,price` (daily) or `timestamp,price`
/// (tick). Daily dates are `YYYY-MM-DD`; tick timestamps are epoch
/// milliseconds or RFC 3339. Rows must be strictly ascending in time.
pub fn parse_prices<R: Read>(reader: R, frequency: Mode) -> Result<PricePath, StoreError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected = match frequency {
        Mode::Daily => "date,price",
        Mode::Tick => "timestamp,price",
    };
    let header = csv.headers().map_err(|e| row_error(1, e.to_string()))?;
    let found = header.iter().collect::<Vec<_>>().join(",");
    if found != expected {
        return Err(StoreError::BadHeader {
            expected: expected.into(),
            found,
        });
    }
    let mut prices = Vec::new();
    let mut last: Option<i64> = None;
    for row in csv.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(row_error(line, format!("expected 2 fields, found {}", row.len())));
        }
        let t = parse_time(&row[0], frequency, line)?;
        let price: f64 = row[1]
            .parse()
            .map_err(|_| row_error(line, format!("bad price `{}`", &row[1])))?;
        if !price.is_finite() {
            return Err(row_error(line, format!("non-finite price `{}`", &row[1])));
        }
        if price <= 0.0 {
            return Err(row_error(line, format!("non-positive price {price}")));
        }
        if let Some(prev) = last {
            if t == prev {
                return Err(row_error(line, "duplicate timestamp"));
            }
            if t < prev {
                return Err(row_error(line, "timestamps not ascending"));
            }
        }
        last = Some(t);
        prices.push(price);
    }
    if prices.len() < 2 {
        return Err(StoreError::TooFewRows(prices.len()));
    }
    Ok(PricePath::new(prices)?)
}

pub fn load_prices(path: impl AsRef<Path>, frequency: Mode) -> Result<PricePath, StoreError> {
    parse_prices(File::open(path)?, frequency)
}

/// A blinded dataset: subjects only ever see `codename`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub codename: String,
    pub source_description: String,
    pub frequency: Mode,
    pub prices: PricePath,
    /// Range of return indices reserved for practice.
    pub practice_slice: Range<usize>,
}

impl DatasetRecord {
    pub fn new(
        codename: impl Into<String>,
        source_description: impl Into<String>,
        frequency: Mode,
        prices: PricePath,
    ) -> Self {
        let returns = prices.horizon();
        Self {
            codename: codename.into(),
            source_description: source_description.into(),
            frequency,
            prices,
            practice_slice: practice_split(returns)..returns,
        }
    }

    /// Scoring and practice returns for a contest on this dataset.
    pub fn contest_data(&self) -> ContestData {
        let returns = compute_returns(&self.prices);
        let practice = &self.practice_slice;
        ContestData {
            scoring: returns.slice(0..practice.start),
            practice: (!practice.is_empty()).then(|| returns.slice(practice.clone())),
        }
    }
}

/// What a client may learn about a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicDataset {
    pub codename: String,
    pub frequency: Mode,
    pub returns: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetRegistry {
    datasets: BTreeMap<String, DatasetRecord>,
}

impl DatasetRegistry {
    pub fn register(&mut self, record: DatasetRecord) -> Result<&DatasetRecord, StoreError> {
        if self.datasets.contains_key(&record.codename) {
            return Err(StoreError::DuplicateCodename(record.codename));
        }
        let code = record.codename.to_lowercase();
        let source = record.source_description.to_lowercase();
        if code.trim().is_empty() || code == source {
            return Err(StoreError::RevealingCodename(record.codename));
        }
        let key = record.codename.clone();
        Ok(self.datasets.entry(key).or_insert(record))
    }

    pub fn get(&self, codename: &str) -> Result<&DatasetRecord, StoreError> {
        self.datasets
            .get(codename)
            .ok_or_else(|| StoreError::UnknownCodename(codename.to_string()))
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn list_public(&self) -> Vec<PublicDataset> {
        self.datasets
            .values()
            .map(|d| PublicDataset {
                codename: d.codename.clone(),
                frequency: d.frequency,
                returns: d.prices.horizon(),
            })
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        match File::open(path) {
            Ok(f) => Ok(serde_json::from_reader(BufReader::new(f))?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes the registry atomically (temp file then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(session: u64, trial: u64, ts: Millis, choice: GuessChoice) -> GuessEvent {
        let placement = Placement::RealOnTop;
        let mut ev = GuessEvent {
            timestamp: ts,
            contest_id: "lynx".into(),
            session_id: SessionId(session),
            subject_id: format!("subj{session}"),
            trial_id: TrialId(trial),
            choice,
            outcome: Outcome::Incorrect,
            placement,
        };
        ev.outcome = ev.expected_outcome();
        ev
    }

    #[test]
    fn append_and_read_back_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let log = EventLog::open(&path).unwrap();
        let ev = event(0, 0, 10, GuessChoice::Top);
        assert_eq!(log.append(&ev).unwrap(), 0);
        let second = log.append(&event(0, 1, 11, GuessChoice::Timeout)).unwrap();
        let lines = read_complete_lines(&path).unwrap();
        assert_eq!(lines[0], serde_json::to_string(&ev).unwrap());
        assert_eq!(second, lines[0].len() as u64 + 1);
        assert_eq!(read_events(&path).unwrap()[0], ev);
    }

    #[test]
    fn event_json_shape_is_stable() {
        let json = serde_json::to_string(&event(3, 7, 1_700_000_000_000, GuessChoice::Bottom)).unwrap();
        assert_eq!(
            json,
            r#"{"timestamp":1700000000000,"contest_id":"lynx","session_id":3,"subject_id":"subj3","trial_id":7,"choice":"bottom","outcome":"incorrect","placement":"real_on_top"}"#
        );
    }

    #[test]
    fn partial_line_invisible_and_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        {
            let log = EventLog::open(&path).unwrap();
            log.append(&event(0, 0, 1, GuessChoice::Top)).unwrap();
        }
        // crash mid-write: half a line, no newline
        let full = serde_json::to_string(&event(0, 1, 2, GuessChoice::Top)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&full.as_bytes()[..full.len() / 2]).unwrap();
        drop(f);

        assert_eq!(read_events(&path).unwrap().len(), 1);
        let bytes = std::fs::read(&path).unwrap();
        let violations = validate_log(&bytes);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].line, 2);

        let log = EventLog::open(&path).unwrap();
        log.append(&event(0, 1, 2, GuessChoice::Top)).unwrap();
        let events = read_events(&path).unwrap();
        assert_eq!(events.len(), 2);
        assert!(validate_log(&std::fs::read(&path).unwrap()).is_empty());
    }

    #[test]
    fn replay_rebuilds_records() {
        let mut events = Vec::new();
        let mut trial = 0;
        for s in 0..3u64 {
            for k in 0..4u64 {
                let choice = match (s + k) % 3 {
                    0 => GuessChoice::Top,
                    1 => GuessChoice::Bottom,
                    _ => GuessChoice::Timeout,
                };
                events.push(event(s, trial, 100 * k, choice));
                trial += 1;
            }
        }
        // a session that never finished
        events.push(event(9, 99, 5, GuessChoice::Top));
        let replayed = replay(&events);
        let lynx = &replayed["lynx"];
        assert_eq!(lynx.charts_per_subject, 4);
        assert_eq!(lynx.records.len(), 3);
        assert_eq!(lynx.incomplete, vec![SessionId(9)]);
        let r0 = &lynx.records[0];
        // s=0: k=0 top (correct), k=1 bottom, k=2 timeout, k=3 top
        assert_eq!((r0.correct, r0.answered, r0.assigned), (2, 3, 4));
    }

    #[test]
    fn validate_catches_inconsistencies() {
        let mut a = event(0, 0, 10, GuessChoice::Top);
        let mut b = event(0, 1, 10, GuessChoice::Top);
        b.outcome = Outcome::Incorrect;
        let c = event(1, 1, 10, GuessChoice::Top);
        a.timestamp = 10;
        let mut bytes = Vec::new();
        for ev in [&a, &b, &c] {
            bytes.extend(serde_json::to_vec(ev).unwrap());
            bytes.push(b'\n');
        }
        let v = validate_log(&bytes);
        let lines: Vec<_> = v.iter().map(|v| v.line).collect();
        // line 2: bad outcome + non-increasing timestamp; line 3: reused trial id
        // and session 1 incomplete
        assert_eq!(lines, [2, 2, 3, 3]);
    }

    #[test]
    fn csv_parsing() {
        let p = parse_prices("date,price\n2009-01-02,100\n2009-01-05,101\n2009-01-06,99\n".as_bytes(), Mode::Daily).unwrap();
        assert_eq!(p.prices(), &[100.0, 101.0, 99.0]);

        let err = parse_prices("date,price\n2009-01-02,100\n2009-01-05,NaN\n2009-01-06,99\n".as_bytes(), Mode::Daily).unwrap_err();
        assert!(matches!(err, StoreError::Row { line: 3, .. }), "{err}");

        let err = parse_prices("date,price\n2009-01-02,100\n2009-01-02,101\n".as_bytes(), Mode::Daily).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = parse_prices("date,price\n2009-01-05,100\n2009-01-02,101\n".as_bytes(), Mode::Daily).unwrap_err();
        assert!(err.to_string().contains("ascending"), "{err}");

        let err = parse_prices("date,price\n2009-01-05,100\n2009-01-06,0\n".as_bytes(), Mode::Daily).unwrap_err();
        assert!(matches!(err, StoreError::Row { line: 3, .. }), "{err}");

        assert!(matches!(
            parse_prices("date,price\n2009-01-05,100\n".as_bytes(), Mode::Daily),
            Err(StoreError::TooFewRows(1))
        ));
        assert!(matches!(
            parse_prices("timestamp,price\n1,100\n2,101\n".as_bytes(), Mode::Daily),
            Err(StoreError::BadHeader { .. })
        ));

        let tick = parse_prices(
            "timestamp,price\n1700000000000,10.5\n2023-11-14T22:13:20.500Z,10.25\n".as_bytes(),
            Mode::Tick,
        )
        .unwrap();
        assert_eq!(tick.prices(), &[10.5, 10.25]);
    }

    #[test]
    fn year_of_daily_prices() {
        let mut csv = String::from("date,price\n");
        let start = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap();
        for i in 0..252 {
            let d = start + chrono::Days::new(i);
            csv.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), 100.0 + (i % 7) as f64));
        }
        let p = parse_prices(csv.as_bytes(), Mode::Daily).unwrap();
        assert_eq!(p.prices().len(), 252);
        assert_eq!(compute_returns(&p).len(), 251);
    }

    fn record(code: &str) -> DatasetRecord {
        DatasetRecord::new(
            code,
            "NASDAQ Composite Index",
            Mode::Daily,
            PricePath::new((0..101).map(|i| 100.0 + (i as f64).sin()).collect()).unwrap(),
        )
    }

    #[test]
    fn registry_uniqueness_and_blinding() {
        let mut reg = DatasetRegistry::default();
        reg.register(record("Lynx")).unwrap();
        assert!(matches!(
            reg.register(record("Lynx")),
            Err(StoreError::DuplicateCodename(_))
        ));
        let listing = serde_json::to_string(&reg.list_public()).unwrap();
        assert!(listing.contains("Lynx"));
        assert!(!listing.contains("NASDAQ"));

        let mut revealing = record("x");
        revealing.codename = revealing.source_description.clone();
        assert!(matches!(
            reg.register(revealing),
            Err(StoreError::RevealingCodename(_))
        ));
    }

    #[test]
    fn practice_slice_is_final_tenth() {
        let rec = record("Elk");
        assert_eq!(rec.practice_slice, 90..100);
        let data = rec.contest_data();
        assert_eq!(data.scoring.len(), 90);
        assert_eq!(data.practice.unwrap().index_range(), 90..100);
    }

    #[test]
    fn registry_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let mut reg = DatasetRegistry::load(&path).unwrap();
        assert!(reg.is_empty());
        reg.register(record("Bear")).unwrap();
        reg.save(&path).unwrap();
        assert_eq!(DatasetRegistry::load(&path).unwrap(), reg);
    }
}
