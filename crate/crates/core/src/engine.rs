//! Contests, sessions and trials.
//!
//! A [`Contest`] owns one blinded dataset and hands out [`Session`]s. Each
//! session is a forward-only plan of trials; a trial pairs a real segment
//! with a surrogate cumulated from a fresh permutation of the same returns
//! and hides which of the two is drawn on top.
//!
//! Trial lifecycle:
//!
//! ```text
//! pending -> streaming -> awaiting-guess -> resolved-{correct,incorrect,timeout}
//!                 \________________________/
//!                   guesses accepted in either
//! ```
//!
//! In tick mode every scoring session takes a fresh plan of disjoint segments
//! from a finite pool. In daily mode all sessions replay the same returns,
//! circularly rotated by a per-session random offset. Practice sessions read
//! from a separate slice and never reach the leaderboard or the event log.
//!
//! All methods that depend on time take `now` in UTC milliseconds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{
    build_surrogate, rotate, sample_permutation, ChartWindow, PricePath, ReturnSequence,
    SeriesError, SurrogatePath,
};
use crate::stats::{
    summarize_with_policy, ContestSummary, ExclusionPolicy, Profession, StatsError, SubjectRecord,
};
use crate::store::{EventSink, GuessChoice, GuessEvent, StoreError};
use crate::Millis;

/// Grace period after the last point before an unanswered trial times out.
pub const GUESS_GRACE: Duration = Duration::from_secs(10);

pub const DEFAULT_CHARTS_PER_SUBJECT: u32 = 35;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("event sink failed: {0}")]
    Sink(#[from] StoreError),
    #[error("invalid contest config: {0}")]
    InvalidConfig(String),
    #[error("contest {0} already exists")]
    DuplicateContest(String),
    #[error("unknown contest {0}")]
    UnknownContest(String),
    #[error("dataset cannot supply even one subject: {0}")]
    InsufficientData(String),
    #[error("dataset returns are degenerate (every return identical); trials would be undecidable")]
    DegenerateDataset,
    #[error("contest {0} is full")]
    ContestFull(String),
    #[error("contest {0} is not open")]
    ContestClosed(String),
    #[error("contest {0} has no practice data")]
    PracticeUnavailable(String),
    #[error("subject {subject} already has an active session in contest {contest}")]
    DuplicateSession { subject: String, contest: String },
    #[error("unknown trial {0}")]
    UnknownTrial(TrialId),
    #[error("trial {0} is already resolved")]
    AlreadyResolved(TrialId),
    #[error("trial {got} is out of order; current trial is {expected:?}")]
    OutOfOrder { got: TrialId, expected: Option<TrialId> },
    #[error("trial {0} is not accepting guesses")]
    NotAwaitingGuess(TrialId),
    #[error("guess deadline for trial {0} has passed")]
    DeadlineElapsed(TrialId),
    #[error("deadline for trial {trial} is at {deadline}, now is {now}")]
    DeadlineNotReached {
        trial: TrialId,
        deadline: Millis,
        now: Millis,
    },
    #[error("session still has unresolved trials")]
    SessionIncomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Transaction data; subjects get disjoint segments.
    Tick,
    /// Daily data; subjects share the data, rotated per session.
    Daily,
}

/// One of the two chart panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Top,
    Bottom,
}

impl Slot {
    pub fn other(self) -> Slot {
        match self {
            Slot::Top => Slot::Bottom,
            Slot::Bottom => Slot::Top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    RealOnTop,
    RealOnBottom,
}

impl Placement {
    pub fn real_slot(self) -> Slot {
        match self {
            Placement::RealOnTop => Slot::Top,
            Placement::RealOnBottom => Slot::Bottom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Pending,
    Streaming,
    AwaitingGuess,
    ResolvedCorrect,
    ResolvedIncorrect,
    ResolvedTimeout,
}

impl TrialState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TrialState::ResolvedCorrect | TrialState::ResolvedIncorrect | TrialState::ResolvedTimeout
        )
    }

    fn accepts_guess(self) -> bool {
        matches!(self, TrialState::Streaming | TrialState::AwaitingGuess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialId(pub u64);

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn default_charts() -> u32 {
    DEFAULT_CHARTS_PER_SUBJECT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestConfig {
    pub contest_id: String,
    /// Animal name shown to subjects.
    pub dataset_codename: String,
    pub mode: Mode,
    #[serde(flatten)]
    pub window: ChartWindow,
    #[serde(default = "default_charts")]
    pub charts_per_subject: u32,
    /// Defaults to the stream duration plus [`GUESS_GRACE`].
    #[serde(
        default,
        rename = "guess_deadline_ms",
        with = "crate::duration_ms::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub guess_deadline: Option<Duration>,
    #[serde(default)]
    pub starts_at: Option<Millis>,
    #[serde(default)]
    pub ends_at: Option<Millis>,
    #[serde(default)]
    pub prize_note: String,
    /// Root of every random draw made for this contest.
    #[serde(default)]
    pub seed: u64,
}

impl ContestConfig {
    pub fn new(
        contest_id: impl Into<String>,
        codename: impl Into<String>,
        mode: Mode,
        window: ChartWindow,
    ) -> Self {
        Self {
            contest_id: contest_id.into(),
            dataset_codename: codename.into(),
            mode,
            window,
            charts_per_subject: DEFAULT_CHARTS_PER_SUBJECT,
            guess_deadline: None,
            starts_at: None,
            ends_at: None,
            prize_note: String::new(),
            seed: 0,
        }
    }

    pub fn with_charts(mut self, charts: u32) -> Self {
        self.charts_per_subject = charts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn guess_deadline(&self) -> Duration {
        self.guess_deadline
            .unwrap_or_else(|| self.window.stream_duration() + GUESS_GRACE)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.window
            .validate()
            .map_err(|e| EngineError::InvalidConfig(e.to_string()))?;
        if self.charts_per_subject == 0 {
            return Err(EngineError::InvalidConfig(
                "charts_per_subject must be at least 1".into(),
            ));
        }
        if self.window.tick_interval.is_zero() {
            return Err(EngineError::InvalidConfig("tick interval must be positive".into()));
        }
        if self.guess_deadline() < self.window.stream_duration() {
            return Err(EngineError::InvalidConfig(
                "guess deadline is shorter than the chart stream".into(),
            ));
        }
        if let (Some(s), Some(e)) = (self.starts_at, self.ends_at) {
            if e <= s {
                return Err(EngineError::InvalidConfig("contest ends before it starts".into()));
            }
        }
        Ok(())
    }

    fn is_open(&self, now: Millis) -> bool {
        self.starts_at.is_none_or(|s| now >= s) && self.ends_at.is_none_or(|e| now < e)
    }
}

/// Practice reservation: the final 10% of a dataset's returns.
pub fn practice_split(len: usize) -> usize {
    len - len / 10
}

/// Returns a contest draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContestData {
    pub scoring: ReturnSequence,
    pub practice: Option<ReturnSequence>,
}

impl ContestData {
    /// Splits off the final 10% of `returns` for practice sessions.
    pub fn with_practice_split(returns: &ReturnSequence) -> Self {
        let cut = practice_split(returns.len());
        let practice = (cut < returns.len()).then(|| returns.slice(cut..returns.len()));
        Self {
            scoring: returns.slice(0..cut),
            practice,
        }
    }
}

impl From<ReturnSequence> for ContestData {
    fn from(scoring: ReturnSequence) -> Self {
        Self {
            scoring,
            practice: None,
        }
    }
}

// splitmix64 finalizer; a bijection on u64
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Injective in `counter` for a fixed `(root, stream)`.
pub fn derive_seed(root: u64, stream: u64, counter: u64) -> u64 {
    splitmix(root ^ splitmix(stream.rotate_left(32) ^ counter))
}

const PERMUTATION_STREAM: u64 = 1;
const PLACEMENT_STREAM: u64 = 2;
const SESSION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    id: TrialId,
    real_returns: ReturnSequence,
    real: PricePath,
    surrogate: SurrogatePath,
    placement: Placement,
    state: TrialState,
    started_at: Option<Millis>,
}

impl Trial {
    fn generate(id: TrialId, real_returns: ReturnSequence, root_seed: u64) -> Result<Self, EngineError> {
        let perm_seed = derive_seed(root_seed, PERMUTATION_STREAM, id.0);
        let perm = sample_permutation(real_returns.len(), perm_seed)?;
        let surrogate = build_surrogate(&real_returns, &perm)?;
        let mut coin = ChaCha8Rng::seed_from_u64(derive_seed(root_seed, PLACEMENT_STREAM, id.0));
        let placement = if coin.random::<bool>() {
            Placement::RealOnTop
        } else {
            Placement::RealOnBottom
        };
        Ok(Self {
            id,
            real: real_returns.to_path()?,
            real_returns,
            surrogate,
            placement,
            state: TrialState::Pending,
            started_at: None,
        })
    }

    pub fn id(&self) -> TrialId {
        self.id
    }

    pub fn real(&self) -> &PricePath {
        &self.real
    }

    pub fn real_returns(&self) -> &ReturnSequence {
        &self.real_returns
    }

    pub fn surrogate(&self) -> &SurrogatePath {
        &self.surrogate
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn state(&self) -> TrialState {
        self.state
    }

    pub fn started_at(&self) -> Option<Millis> {
        self.started_at
    }

    /// Prices drawn in `slot`, `p_0..p_T`.
    pub fn prices(&self, slot: Slot) -> &[f64] {
        if slot == self.placement.real_slot() {
            self.real.prices()
        } else {
            self.surrogate.prices()
        }
    }

    pub fn base_price(&self) -> f64 {
        self.real.prices()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub subject_id: String,
    pub session_id: SessionId,
    pub score: u32,
    pub completed_at: Millis,
}

#[derive(Debug)]
struct ContestState {
    next_plan: usize,
    next_session: u64,
    next_trial: u64,
    active: HashSet<String>,
    completed: Vec<(LeaderboardEntry, SubjectRecord)>,
}

/// A running contest. Shared between sessions behind an `Arc`.
pub struct Contest {
    config: ContestConfig,
    data: ContestData,
    /// Tick mode only: per-subject plans of disjoint segments.
    plans: Vec<Vec<ReturnSequence>>,
    state: Mutex<ContestState>,
    sink: Option<Arc<dyn EventSink>>,
}

impl fmt::Debug for Contest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Contest")
            .field("config", &self.config)
            .field("plans", &self.plans.len())
            .finish_non_exhaustive()
    }
}

impl Contest {
    pub fn create(
        config: ContestConfig,
        data: impl Into<ContestData>,
        sink: Option<Arc<dyn EventSink>>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let data = data.into();
        let ppc = config.window.points_per_chart;
        let charts = config.charts_per_subject as usize;
        if data.scoring.is_degenerate() {
            return Err(EngineError::DegenerateDataset);
        }
        let plans = match config.mode {
            Mode::Tick => {
                let max = data.scoring.len() / ppc;
                let segments = crate::series::segment_disjoint(&data.scoring, max, ppc)?;
                let usable: Vec<_> = segments.into_iter().filter(|s| !s.is_degenerate()).collect();
                let plans: Vec<Vec<_>> = usable
                    .chunks_exact(charts)
                    .map(|chunk| chunk.to_vec())
                    .collect();
                if plans.is_empty() {
                    return Err(EngineError::InsufficientData(format!(
                        "tick mode needs {} usable segments of {ppc} returns, dataset has {} returns",
                        charts,
                        data.scoring.len()
                    )));
                }
                plans
            }
            Mode::Daily => {
                if data.scoring.len() < ppc {
                    return Err(EngineError::InsufficientData(format!(
                        "daily mode needs at least {ppc} returns, dataset has {}",
                        data.scoring.len()
                    )));
                }
                Vec::new()
            }
        };
        if let Some(practice) = &data.practice {
            if practice.len() < ppc || practice.is_degenerate() {
                tracing::warn!(
                    contest = %config.contest_id,
                    "practice slice too short or degenerate; practice disabled"
                );
            }
        }
        Ok(Self {
            config,
            data,
            plans,
            state: Mutex::new(ContestState {
                next_plan: 0,
                next_session: 0,
                next_trial: 0,
                active: HashSet::new(),
                completed: Vec::new(),
            }),
            sink,
        })
    }

    pub fn config(&self) -> &ContestConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.contest_id
    }

    pub fn data(&self) -> &ContestData {
        &self.data
    }

    /// Tick mode: total number of subject plans; daily mode: `None`.
    pub fn capacity(&self) -> Option<usize> {
        (self.config.mode == Mode::Tick).then_some(self.plans.len())
    }

    /// Tick mode: plans not yet taken.
    pub fn remaining_capacity(&self) -> Option<usize> {
        let taken = self.lock().next_plan;
        self.capacity().map(|c| c - taken)
    }

    fn lock(&self) -> MutexGuard<'_, ContestState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn practice_data(&self) -> Option<&ReturnSequence> {
        self.data
            .practice
            .as_ref()
            .filter(|p| p.len() >= self.config.window.points_per_chart && !p.is_degenerate())
    }

    /// Opens a session for `subject_id`.
    pub fn start_session(
        self: &Arc<Self>,
        subject_id: impl Into<String>,
        profession: Profession,
        practice: bool,
        now: Millis,
    ) -> Result<Session, EngineError> {
        let subject_id = subject_id.into();
        if !self.config.is_open(now) {
            return Err(EngineError::ContestClosed(self.id().to_string()));
        }
        let practice_data = if practice {
            Some(
                self.practice_data()
                    .ok_or_else(|| EngineError::PracticeUnavailable(self.id().to_string()))?,
            )
        } else {
            None
        };
        let charts = self.config.charts_per_subject as usize;

        let mut state = self.lock();
        if state.active.contains(&subject_id) {
            return Err(EngineError::DuplicateSession {
                subject: subject_id,
                contest: self.id().to_string(),
            });
        }
        let session_seed = derive_seed(self.config.seed, SESSION_STREAM, state.next_session);
        let (segments, rotation) = match (practice_data, self.config.mode) {
            (Some(source), _) => {
                let (segs, rot) = rotated_windows(source, charts, self.config.window.points_per_chart, session_seed);
                (segs, Some(rot))
            }
            (None, Mode::Tick) => {
                if state.next_plan >= self.plans.len() {
                    return Err(EngineError::ContestFull(self.id().to_string()));
                }
                state.next_plan += 1;
                (self.plans[state.next_plan - 1].clone(), None)
            }
            (None, Mode::Daily) => {
                let (segs, rot) = rotated_windows(
                    &self.data.scoring,
                    charts,
                    self.config.window.points_per_chart,
                    session_seed,
                );
                (segs, Some(rot))
            }
        };
        let first_trial = state.next_trial;
        let trials = segments
            .into_iter()
            .enumerate()
            .map(|(i, seg)| Trial::generate(TrialId(first_trial + i as u64), seg, self.config.seed))
            .collect::<Result<Vec<_>, _>>()?;
        state.next_trial += trials.len() as u64;
        let id = SessionId(state.next_session);
        state.next_session += 1;
        state.active.insert(subject_id.clone());
        drop(state);

        Ok(Session {
            id,
            subject_id,
            profession,
            contest: Arc::clone(self),
            practice,
            trials,
            cursor: 0,
            score: 0,
            answered: 0,
            last_event_at: None,
            rotation,
            finished: false,
        })
    }

    /// Completed scoring sessions, best first; ties go to the earlier
    /// finisher, then to the lower session id.
    pub fn leaderboard(&self) -> Vec<LeaderboardEntry> {
        let mut entries: Vec<_> = self.lock().completed.iter().map(|(e, _)| e.clone()).collect();
        entries.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then(a.completed_at.cmp(&b.completed_at))
                .then(a.session_id.cmp(&b.session_id))
        });
        entries
    }

    /// One record per completed scoring session, in completion order.
    pub fn subject_records(&self) -> Vec<SubjectRecord> {
        self.lock().completed.iter().map(|(_, r)| r.clone()).collect()
    }

    pub fn summarize(&self, policy: &ExclusionPolicy) -> Result<ContestSummary, EngineError> {
        Ok(summarize_with_policy(
            &self.subject_records(),
            self.config.charts_per_subject,
            policy,
        )?)
    }
}

/// `count` windows of `points` returns read circularly from `source` after a
/// seeded rotation. Windows are consecutive in the rotated sequence; a
/// degenerate window is slid forward until it is not.
fn rotated_windows(
    source: &ReturnSequence,
    count: usize,
    points: usize,
    seed: u64,
) -> (Vec<ReturnSequence>, usize) {
    let len = source.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = rng.random_range(0..len);
    let rotated = rotate(source, rotation);
    let returns = rotated.returns();
    let mut out = Vec::with_capacity(count);
    let mut start = 0usize;
    for _ in 0..count {
        let mut window = circular_window(&rotated, start, points);
        let mut tries = 0;
        while window.is_degenerate() && tries < len {
            start += 1;
            tries += 1;
            window = circular_window(&rotated, start, points);
        }
        out.push(window);
        start += points;
    }
    debug_assert_eq!(returns.len(), len);
    (out, rotation)
}

fn circular_window(rotated: &ReturnSequence, start: usize, points: usize) -> ReturnSequence {
    let len = rotated.len();
    let start = start % len;
    let returns = rotated.returns();
    let base = rotated.base_price() + returns[..start].iter().sum::<f64>();
    let window: Vec<f64> = (0..points).map(|i| returns[(start + i) % len]).collect();
    ReturnSequence::with_offset(window, base, rotated.offset() + start)
}

/// One subject's pass through a contest. Owned by a single task.
#[derive(Debug)]
pub struct Session {
    id: SessionId,
    subject_id: String,
    profession: Profession,
    contest: Arc<Contest>,
    practice: bool,
    trials: Vec<Trial>,
    cursor: usize,
    score: u32,
    answered: u32,
    last_event_at: Option<Millis>,
    rotation: Option<usize>,
    finished: bool,
}

impl Session {
    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn contest(&self) -> &Arc<Contest> {
        &self.contest
    }

    pub fn is_practice(&self) -> bool {
        self.practice
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn trial_plan(&self) -> Vec<TrialId> {
        self.trials.iter().map(|t| t.id).collect()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn score(&self) -> u32 {
        self.score
    }

    /// Rotation offset applied to the shared data (daily and practice).
    pub fn rotation(&self) -> Option<usize> {
        self.rotation
    }

    pub fn current_trial(&self) -> Option<&Trial> {
        self.trials.get(self.cursor)
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.trials.len()
    }

    /// Deadline of the current trial, once it has started streaming.
    pub fn deadline(&self) -> Option<Millis> {
        let started = self.current_trial()?.started_at?;
        Some(started + self.contest.config.guess_deadline().as_millis() as Millis)
    }

    /// Moves the current trial from pending to streaming.
    pub fn begin_trial(&mut self, now: Millis) -> Result<&Trial, EngineError> {
        let trial = self
            .trials
            .get_mut(self.cursor)
            .ok_or(EngineError::SessionIncomplete)?;
        if trial.state != TrialState::Pending {
            return Err(EngineError::NotAwaitingGuess(trial.id));
        }
        trial.state = TrialState::Streaming;
        trial.started_at = Some(now);
        Ok(&self.trials[self.cursor])
    }

    /// Marks the stream of the current trial as complete.
    pub fn finish_stream(&mut self, trial_id: TrialId) -> Result<(), EngineError> {
        let idx = self.locate(trial_id)?;
        let trial = &mut self.trials[idx];
        match trial.state {
            TrialState::Streaming => {
                trial.state = TrialState::AwaitingGuess;
                Ok(())
            }
            TrialState::AwaitingGuess => Ok(()),
            _ => Err(EngineError::NotAwaitingGuess(trial_id)),
        }
    }

    /// Index of `trial_id` if it is the current trial; otherwise the
    /// matching rejection.
    fn locate(&self, trial_id: TrialId) -> Result<usize, EngineError> {
        let idx = self
            .trials
            .iter()
            .position(|t| t.id == trial_id)
            .ok_or(EngineError::UnknownTrial(trial_id))?;
        if self.trials[idx].state.is_terminal() {
            return Err(EngineError::AlreadyResolved(trial_id));
        }
        if idx != self.cursor {
            return Err(EngineError::OutOfOrder {
                got: trial_id,
                expected: self.current_trial().map(|t| t.id),
            });
        }
        Ok(idx)
    }

    pub fn submit_guess(
        &mut self,
        trial_id: TrialId,
        choice: Slot,
        now: Millis,
    ) -> Result<Outcome, EngineError> {
        let idx = self.locate(trial_id)?;
        if !self.trials[idx].state.accepts_guess() {
            return Err(EngineError::NotAwaitingGuess(trial_id));
        }
        if self.deadline().is_some_and(|d| now > d) {
            return Err(EngineError::DeadlineElapsed(trial_id));
        }
        let outcome = if choice == self.trials[idx].placement.real_slot() {
            Outcome::Correct
        } else {
            Outcome::Incorrect
        };
        self.resolve(idx, GuessChoice::from(choice), outcome, now)?;
        Ok(outcome)
    }

    /// Resolves the current trial as a timeout once its deadline has passed.
    pub fn expire_trial(&mut self, trial_id: TrialId, now: Millis) -> Result<(), EngineError> {
        let idx = self.locate(trial_id)?;
        if !self.trials[idx].state.accepts_guess() {
            return Err(EngineError::NotAwaitingGuess(trial_id));
        }
        let deadline = self.deadline().expect("streaming trial has a start time");
        if now < deadline {
            return Err(EngineError::DeadlineNotReached {
                trial: trial_id,
                deadline,
                now,
            });
        }
        self.resolve(idx, GuessChoice::Timeout, Outcome::Incorrect, now)
    }

    /// Resolves every unresolved trial as a timeout (disconnects, aborted
    /// sessions). Returns how many trials were forfeited.
    pub fn forfeit_remaining(&mut self, now: Millis) -> Result<usize, EngineError> {
        let mut forfeited = 0;
        while self.cursor < self.trials.len() {
            let trial = &mut self.trials[self.cursor];
            if trial.started_at.is_none() {
                trial.started_at = Some(now);
            }
            self.resolve(self.cursor, GuessChoice::Timeout, Outcome::Incorrect, now)?;
            forfeited += 1;
        }
        Ok(forfeited)
    }

    fn resolve(
        &mut self,
        idx: usize,
        choice: GuessChoice,
        outcome: Outcome,
        now: Millis,
    ) -> Result<(), EngineError> {
        let timestamp = self.last_event_at.map_or(now, |last| now.max(last + 1));
        let trial = &self.trials[idx];
        if !self.practice {
            if let Some(sink) = &self.contest.sink {
                sink.append(&GuessEvent {
                    timestamp,
                    contest_id: self.contest.config.contest_id.clone(),
                    session_id: self.id,
                    subject_id: self.subject_id.clone(),
                    trial_id: trial.id,
                    choice,
                    outcome,
                    placement: trial.placement,
                })?;
            }
        }
        self.last_event_at = Some(timestamp);
        let trial = &mut self.trials[idx];
        trial.state = match (choice, outcome) {
            (GuessChoice::Timeout, _) => TrialState::ResolvedTimeout,
            (_, Outcome::Correct) => TrialState::ResolvedCorrect,
            (_, Outcome::Incorrect) => TrialState::ResolvedIncorrect,
        };
        if choice != GuessChoice::Timeout {
            self.answered += 1;
        }
        if outcome == Outcome::Correct {
            self.score += 1;
        }
        self.cursor += 1;
        Ok(())
    }

    pub fn subject_record(&self) -> SubjectRecord {
        SubjectRecord {
            subject_id: self.subject_id.clone(),
            profession: self.profession,
            correct: self.score,
            answered: self.answered,
            assigned: self.trials.len() as u32,
        }
    }

    /// Closes a fully resolved session. Scoring sessions enter the
    /// leaderboard and the contest's live aggregate.
    pub fn finish(mut self, now: Millis) -> Result<SubjectRecord, EngineError> {
        if !self.is_complete() {
            return Err(EngineError::SessionIncomplete);
        }
        let record = self.subject_record();
        let mut state = self.contest.lock();
        state.active.remove(&self.subject_id);
        if !self.practice {
            state.completed.push((
                LeaderboardEntry {
                    subject_id: self.subject_id.clone(),
                    session_id: self.id,
                    score: self.score,
                    completed_at: now,
                },
                record.clone(),
            ));
        }
        drop(state);
        self.finished = true;
        Ok(record)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if !self.finished {
            self.contest.lock().active.remove(&self.subject_id);
        }
    }
}

/// Registry of running contests.
#[derive(Default)]
pub struct Engine {
    contests: RwLock<BTreeMap<String, Arc<Contest>>>,
    sink: Option<Arc<dyn EventSink>>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("contests", &self.contest_ids())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Guess events of every scoring session go to `sink`.
    pub fn with_sink(sink: Arc<dyn EventSink>) -> Self {
        Self {
            contests: RwLock::default(),
            sink: Some(sink),
        }
    }

    pub fn create_contest(
        &self,
        config: ContestConfig,
        data: impl Into<ContestData>,
    ) -> Result<Arc<Contest>, EngineError> {
        let mut contests = self.contests.write().unwrap_or_else(|e| e.into_inner());
        if contests.contains_key(&config.contest_id) {
            return Err(EngineError::DuplicateContest(config.contest_id));
        }
        let contest = Arc::new(Contest::create(config, data, self.sink.clone())?);
        contests.insert(contest.id().to_string(), Arc::clone(&contest));
        Ok(contest)
    }

    pub fn contest(&self, id: &str) -> Result<Arc<Contest>, EngineError> {
        self.contests
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownContest(id.to_string()))
    }

    pub fn contests(&self) -> Vec<Arc<Contest>> {
        self.contests
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect()
    }

    pub fn contest_ids(&self) -> Vec<String> {
        self.contests
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect()
    }
}
