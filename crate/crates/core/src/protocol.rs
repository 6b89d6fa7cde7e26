//! Wire messages exchanged with subjects, and the transcript validator.
//!
//! Every frame is one JSON object:
//!
//! ```json
//! {"seq": 12, "kind": "tick", "payload": {"trial_id": 4, "slot": "top", "point_index": 0, "price": 101.25}}
//! ```
//!
//! `seq` increases strictly per direction. A session runs
//!
//! ```text
//! C hello -> S contest_list -> C session_open -> S session_open
//!   repeat charts_per_subject times:
//!     S trial_start, S tick(top, i), S tick(bottom, i) ..., [C guess], S feedback, S trial_end
//! S session_end
//! ```
//!
//! Only `feedback` names the real chart. Every payload rejects unknown
//! fields, so a frame smuggling extra data fails to parse.

use serde::{Deserialize, Serialize};

use crate::engine::{Mode, Outcome, SessionId, Slot, TrialId};
use crate::stats::Profession;
use crate::store::GuessChoice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    #[serde(rename = "seq")]
    pub sequence_number: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl ProtocolMessage {
    pub fn new(sequence_number: u64, body: Body) -> Self {
        Self {
            sequence_number,
            body,
        }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Body {
    Hello(Hello),
    ContestList(ContestList),
    SessionOpen(SessionOpen),
    TrialStart(TrialStart),
    Tick(Tick),
    Guess(Guess),
    Feedback(Feedback),
    TrialEnd(TrialEnd),
    SessionEnd(SessionEnd),
    Error(ErrorReply),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    ContestList,
    SessionOpen,
    TrialStart,
    Tick,
    Guess,
    Feedback,
    TrialEnd,
    SessionEnd,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::Hello,
        Kind::ContestList,
        Kind::SessionOpen,
        Kind::TrialStart,
        Kind::Tick,
        Kind::Guess,
        Kind::Feedback,
        Kind::TrialEnd,
        Kind::SessionEnd,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::ContestList => "contest_list",
            Kind::SessionOpen => "session_open",
            Kind::TrialStart => "trial_start",
            Kind::Tick => "tick",
            Kind::Guess => "guess",
            Kind::Feedback => "feedback",
            Kind::TrialEnd => "trial_end",
            Kind::SessionEnd => "session_end",
            Kind::Error => "error",
        }
    }

    /// Kinds that may carry the truth label. Everything else is sent before
    /// the subject has committed and must not.
    pub fn reveals_truth(self) -> bool {
        matches!(self, Kind::Feedback)
    }
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Hello(_) => Kind::Hello,
            Body::ContestList(_) => Kind::ContestList,
            Body::SessionOpen(_) => Kind::SessionOpen,
            Body::TrialStart(_) => Kind::TrialStart,
            Body::Tick(_) => Kind::Tick,
            Body::Guess(_) => Kind::Guess,
            Body::Feedback(_) => Kind::Feedback,
            Body::TrialEnd(_) => Kind::TrialEnd,
            Body::SessionEnd(_) => Kind::SessionEnd,
            Body::Error(_) => Kind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub subject_id: String,
    #[serde(default)]
    pub profession: Profession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContestInfo {
    pub contest_id: String,
    pub codename: String,
    pub mode: Mode,
    pub points_per_chart: usize,
    pub points_per_screen: usize,
    pub charts_per_subject: u32,
    pub tick_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContestList {
    pub contests: Vec<ContestInfo>,
}

/// Sent by the client to request a session and echoed back by the server
/// with `session_id` and `charts` filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOpen {
    pub contest_id: String,
    #[serde(default)]
    pub practice: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialStart {
    pub trial_id: TrialId,
    /// 0-based position in the session.
    pub index: u32,
    pub points_per_chart: usize,
    pub points_per_screen: usize,
    pub tick_interval_ms: u64,
    pub guess_deadline_ms: u64,
    /// Shared starting price of both charts.
    pub base_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tick {
    pub trial_id: TrialId,
    pub slot: Slot,
    pub point_index: usize,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guess {
    pub trial_id: TrialId,
    pub choice: Slot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub trial_id: TrialId,
    pub choice: GuessChoice,
    pub outcome: Outcome,
    pub real_slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEnd {
    pub trial_id: TrialId,
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEnd {
    pub score: u32,
    pub assigned: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnexpectedMessage,
    UnknownContest,
    ContestFull,
    ContestClosed,
    DuplicateSession,
    PracticeUnavailable,
    UnknownTrial,
    AlreadyResolved,
    OutOfOrder,
    NotAcceptingGuesses,
    DeadlineElapsed,
    Internal,
}

impl ErrorCode {
    /// Fatal errors end the session; the others only reject one request.
    pub fn is_fatal(self) -> bool {
        !matches!(
            self,
            ErrorCode::UnknownTrial
                | ErrorCode::AlreadyResolved
                | ErrorCode::OutOfOrder
                | ErrorCode::NotAcceptingGuesses
                | ErrorCode::DeadlineElapsed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Body {
    pub fn direction(&self) -> Direction {
        match self.kind() {
            Kind::Hello | Kind::Guess => Direction::ClientToServer,
            // session_open travels both ways
            Kind::SessionOpen => match self {
                Body::SessionOpen(open) if open.session_id.is_some() => Direction::ServerToClient,
                _ => Direction::ClientToServer,
            },
            _ => Direction::ServerToClient,
        }
    }
}

/// One frame as observed by the server, in arrival/emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub message: ProtocolMessage,
}

impl TranscriptEntry {
    pub fn inbound(message: ProtocolMessage) -> Self {
        Self {
            direction: Direction::ClientToServer,
            message,
        }
    }

    pub fn outbound(message: ProtocolMessage) -> Self {
        Self {
            direction: Direction::ServerToClient,
            message,
        }
    }
}

/// A whole session's transcript, as written to the transcript log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: Option<SessionId>,
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    SequenceNotIncreasing,
    WrongDirection,
    UnexpectedMessage,
    TickOutsideTrial,
    TickWrongTrial,
    TickOutOfOrder,
    UnpairedTick,
    TickAfterGuess,
    FeedbackWithoutGuess,
    InconsistentFeedback,
    GuessNotAnswered,
    IncompleteStream,
    MissingTrialEnd,
    TrialEndWithoutFeedback,
    SessionEndEarly,
    MessageAfterClose,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Index into the transcript; equal to its length for truncation.
    pub index: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptReport {
    pub violations: Vec<Violation>,
}

impl TranscriptReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct TrialProgress {
    id: TrialId,
    points: usize,
    next_point: usize,
    awaiting_bottom: bool,
    guess: Option<Slot>,
    feedback: bool,
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Start,
    Greeted,
    Listed,
    Opening,
    Idle { charts: u32, done: u32 },
    InTrial { charts: u32, done: u32, trial: TrialProgress },
    Closed,
}

/// What the server owes the client after its last request.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Owed {
    Nothing,
    Feedback,
    Error,
}

/// Checks one session transcript: per-direction sequence monotonicity plus
/// the session state machine (ordering, tick pairing, feedback rules).
///
/// Sequence problems are all reported. State-machine checking stops at the
/// first illegal transition, since later frames cannot be interpreted.
pub fn validate_transcript(entries: &[TranscriptEntry]) -> TranscriptReport {
    let mut violations = Vec::new();
    let mut last_seq = [None::<u64>; 2];
    for (i, e) in entries.iter().enumerate() {
        let slot = e.direction as usize;
        let seq = e.message.sequence_number;
        if let Some(prev) = last_seq[slot] {
            if seq <= prev {
                violations.push(Violation {
                    index: i,
                    kind: ViolationKind::SequenceNotIncreasing,
                    detail: format!("seq {seq} after {prev}"),
                });
            }
        }
        last_seq[slot] = Some(seq);
    }
    if let Some(v) = check_state_machine(entries) {
        violations.push(v);
    }
    violations.sort_by_key(|v| v.index);
    TranscriptReport { violations }
}

fn check_state_machine(entries: &[TranscriptEntry]) -> Option<Violation> {
    use ViolationKind as V;
    let fail = |index: usize, kind: ViolationKind, detail: String| Some(Violation { index, kind, detail });
    let mut phase = Phase::Start;
    let mut owed = Owed::Nothing;

    for (i, entry) in entries.iter().enumerate() {
        let body = &entry.message.body;
        let from_client = entry.direction == Direction::ClientToServer;
        if body.direction() != entry.direction {
            return fail(i, V::WrongDirection, format!("{} sent the wrong way", body.kind().as_str()));
        }
        if matches!(phase, Phase::Closed) {
            return fail(i, V::MessageAfterClose, body.kind().as_str().into());
        }
        if let Phase::InTrial { trial, .. } = phase {
            if trial.awaiting_bottom {
                let paired = matches!(body, Body::Tick(t) if t.slot == Slot::Bottom
                    && t.trial_id == trial.id && t.point_index + 1 == trial.next_point);
                if !paired {
                    return fail(i, V::UnpairedTick, format!("expected bottom tick {}", trial.next_point - 1));
                }
            }
        }
        if !from_client {
            match owed {
                Owed::Feedback if !matches!(body, Body::Feedback(_)) => {
                    return fail(i, V::GuessNotAnswered, format!("{} before feedback", body.kind().as_str()));
                }
                Owed::Error if !matches!(body, Body::Error(_)) => {
                    return fail(i, V::GuessNotAnswered, format!("{} instead of error", body.kind().as_str()));
                }
                _ => {}
            }
            owed = Owed::Nothing;
        }

        phase = match (phase, body) {
            (_, Body::Error(err)) if !from_client => {
                if err.code.is_fatal() {
                    Phase::Closed
                } else {
                    phase
                }
            }
            (Phase::Start, Body::Hello(_)) => Phase::Greeted,
            (Phase::Greeted, Body::ContestList(_)) => Phase::Listed,
            (Phase::Listed, Body::SessionOpen(_)) if from_client => Phase::Opening,
            (Phase::Opening, Body::SessionOpen(ack)) if !from_client => Phase::Idle {
                charts: ack.charts.unwrap_or(0),
                done: 0,
            },
            (Phase::Idle { charts, done }, Body::TrialStart(ts)) => {
                if done >= charts {
                    return fail(i, V::UnexpectedMessage, "trial_start after the last trial".into());
                }
                Phase::InTrial {
                    charts,
                    done,
                    trial: TrialProgress {
                        id: ts.trial_id,
                        points: ts.points_per_chart,
                        next_point: 0,
                        awaiting_bottom: false,
                        guess: None,
                        feedback: false,
                    },
                }
            }
            (Phase::Idle { charts, done }, Body::SessionEnd(end)) => {
                if done < charts {
                    return fail(i, V::SessionEndEarly, format!("{done} of {charts} trials played"));
                }
                if end.assigned != charts {
                    return fail(i, V::SessionEndEarly, format!("assigned {} != {charts}", end.assigned));
                }
                Phase::Closed
            }
            (Phase::Idle { .. } | Phase::Opening | Phase::Listed, Body::Tick(_)) => {
                return fail(i, V::TickOutsideTrial, "tick with no trial in progress".into());
            }
            (Phase::InTrial { charts, done, mut trial }, Body::Tick(t)) => {
                if trial.guess.is_some() || trial.feedback {
                    return fail(i, V::TickAfterGuess, format!("tick {} after guess", t.point_index));
                }
                if t.trial_id != trial.id {
                    return fail(i, V::TickWrongTrial, format!("tick for trial {} during {}", t.trial_id, trial.id));
                }
                if trial.awaiting_bottom {
                    trial.awaiting_bottom = false;
                } else if t.slot != Slot::Top || t.point_index != trial.next_point || t.point_index >= trial.points {
                    return fail(
                        i,
                        V::TickOutOfOrder,
                        format!("got {:?} tick {}, expected top tick {}", t.slot, t.point_index, trial.next_point),
                    );
                } else {
                    trial.next_point += 1;
                    trial.awaiting_bottom = true;
                }
                Phase::InTrial { charts, done, trial }
            }
            (Phase::InTrial { charts, done, mut trial }, Body::Guess(g)) => {
                if g.trial_id == trial.id && trial.guess.is_none() && !trial.feedback {
                    trial.guess = Some(g.choice);
                    owed = Owed::Feedback;
                } else {
                    owed = Owed::Error;
                }
                Phase::InTrial { charts, done, trial }
            }
            (_, Body::Guess(_)) => {
                // no trial to guess on: must be rejected
                owed = Owed::Error;
                phase
            }
            (Phase::InTrial { charts, done, mut trial }, Body::Feedback(fb)) => {
                if trial.feedback {
                    return fail(i, V::UnexpectedMessage, "second feedback".into());
                }
                match (trial.guess, fb.choice.slot()) {
                    (None, Some(_)) => {
                        return fail(i, V::FeedbackWithoutGuess, format!("feedback for trial {}", fb.trial_id));
                    }
                    (Some(g), Some(c)) if g != c => {
                        return fail(i, V::InconsistentFeedback, "choice differs from guess".into());
                    }
                    (Some(_), None) => {
                        return fail(i, V::InconsistentFeedback, "timeout feedback after a guess".into());
                    }
                    (None, None) if trial.next_point < trial.points => {
                        return fail(
                            i,
                            V::IncompleteStream,
                            format!("timeout after {} of {} points", trial.next_point, trial.points),
                        );
                    }
                    _ => {}
                }
                let expected = if fb.choice.slot() == Some(fb.real_slot) {
                    Outcome::Correct
                } else {
                    Outcome::Incorrect
                };
                if fb.trial_id != trial.id || fb.outcome != expected {
                    return fail(i, V::InconsistentFeedback, format!("outcome {:?}", fb.outcome));
                }
                trial.feedback = true;
                Phase::InTrial { charts, done, trial }
            }
            (Phase::Idle { .. }, Body::Feedback(_)) => {
                return fail(i, V::FeedbackWithoutGuess, "feedback with no trial in progress".into());
            }
            (Phase::InTrial { charts, done, trial }, Body::TrialEnd(end)) => {
                if !trial.feedback {
                    return fail(i, V::TrialEndWithoutFeedback, format!("trial {}", trial.id));
                }
                if end.trial_id != trial.id {
                    return fail(i, V::UnexpectedMessage, format!("trial_end for {}", end.trial_id));
                }
                Phase::Idle { charts, done: done + 1 }
            }
            (Phase::InTrial { trial, .. }, Body::TrialStart(_) | Body::SessionEnd(_)) if trial.feedback => {
                return fail(i, V::MissingTrialEnd, format!("trial {} never ended", trial.id));
            }
            (_, other) => {
                return fail(i, V::UnexpectedMessage, format!("{} in phase {phase:?}", other.kind().as_str()));
            }
        };
    }
    if !matches!(phase, Phase::Closed) {
        return fail(entries.len(), V::Truncated, format!("transcript ends in phase {phase:?}"));
    }
    None
}

/// Machine-readable JSON Schema for one frame.
pub const SCHEMA: &str = include_str!("../protocol.schema.json");

/// Payload fields that would disclose which chart is real.
pub const TRUTH_FIELDS: &[&str] = &["placement", "real_slot", "outcome", "is_real", "real"];

/// `(kind, field)` pairs where the schema lets a kind sent before feedback
/// carry a truth field. Empty for a sound schema.
pub fn schema_truth_leaks(schema: &serde_json::Value) -> Vec<(Kind, String)> {
    let mut leaks = Vec::new();
    for kind in Kind::ALL.into_iter().filter(|k| !k.reveals_truth()) {
        if let Some(def) = schema.pointer(&format!("/$defs/{}", kind.as_str())) {
            collect_truth_keys(def, "properties", &mut |f| leaks.push((kind, f)));
        }
    }
    leaks
}

/// Truth fields present anywhere in a serialized frame's payload, unless the
/// frame is feedback.
pub fn frame_truth_leaks(message: &ProtocolMessage) -> Vec<String> {
    if message.kind().reveals_truth() {
        return Vec::new();
    }
    let value = serde_json::to_value(message).expect("frames serialize");
    let mut leaks = Vec::new();
    collect_truth_keys(&value["payload"], "", &mut |f| leaks.push(f));
    leaks
}

/// Walks `value` and reports keys named in [`TRUTH_FIELDS`]. With a non-empty
/// `container`, only keys of objects found under that key are considered
/// (schema `properties` maps).
fn collect_truth_keys(value: &serde_json::Value, container: &str, found: &mut dyn FnMut(String)) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if container.is_empty() {
                    if TRUTH_FIELDS.contains(&k.as_str()) {
                        found(k.clone());
                    }
                } else if k == container {
                    if let Some(props) = v.as_object() {
                        for name in props.keys().filter(|n| TRUTH_FIELDS.contains(&n.as_str())) {
                            found(name.clone());
                        }
                    }
                }
                collect_truth_keys(v, container, found);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                collect_truth_keys(v, container, found);
            }
        }
        _ => {}
    }
}
