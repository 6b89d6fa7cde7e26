//! Protocol client that lets a [`Subject`] play one session.

use realchart::bots::{Subject, TrialView};
use realchart::engine::{Outcome, SessionId, Slot, TrialId};
use realchart::protocol::{Body, ContestInfo, ErrorReply, Guess, Hello, ProtocolMessage, SessionOpen};
use realchart::stats::Profession;
use realchart::store::GuessChoice;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};

use crate::codec::{Connection, FrameError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server rejected the session: {code:?}: {message}", code = .0.code, message = .0.message)]
    Rejected(ErrorReply),
    #[error("server closed the connection before session_end")]
    Closed,
    #[error("no contest is open")]
    NoContest,
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub subject_id: String,
    pub profession: Profession,
    /// `None` joins the first listed contest.
    pub contest_id: Option<String>,
    pub practice: bool,
    /// Keep every received frame in the report.
    pub record_frames: bool,
}

impl ClientOptions {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            profession: Profession::Undeclared,
            contest_id: None,
            practice: false,
            record_frames: false,
        }
    }

    pub fn contest(mut self, contest_id: impl Into<String>) -> Self {
        self.contest_id = Some(contest_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: TrialId,
    pub choice: GuessChoice,
    pub outcome: Outcome,
    pub real_slot: Slot,
    /// Tick pairs seen before feedback.
    pub points_seen: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ClientReport {
    pub contests: Vec<ContestInfo>,
    pub session_id: Option<SessionId>,
    pub score: u32,
    pub assigned: u32,
    pub trials: Vec<TrialResult>,
    /// Non-fatal error replies received.
    pub errors: Vec<ErrorReply>,
    pub received: Vec<ProtocolMessage>,
}

struct Play<'a, T> {
    conn: Connection<T>,
    report: ClientReport,
    record: bool,
    subject: &'a mut dyn Subject,
}

impl<T: AsyncRead + AsyncWrite + Unpin> Play<'_, T> {
    async fn recv(&mut self) -> Result<Body, ClientError> {
        let message = self.conn.recv().await.ok_or(ClientError::Closed)??;
        if self.record {
            self.report.received.push(message.clone());
        }
        match message.body {
            Body::Error(e) if e.code.is_fatal() => Err(ClientError::Rejected(e)),
            body => Ok(body),
        }
    }
}

/// Plays one whole session and returns what the client observed.
pub async fn play_session<T>(io: T, opts: &ClientOptions, subject: &mut dyn Subject) -> Result<ClientReport, ClientError>
where
    T: AsyncRead + AsyncWrite + Unpin,
{
    let mut play = Play {
        conn: Connection::new(io),
        report: ClientReport::default(),
        record: opts.record_frames,
        subject,
    };
    play.conn
        .send(Body::Hello(Hello {
            subject_id: opts.subject_id.clone(),
            profession: opts.profession,
        }))
        .await?;
    let contests = match play.recv().await? {
        Body::ContestList(list) => list.contests,
        other => return Err(ClientError::Protocol(format!("expected contest_list, got {}", other.kind().as_str()))),
    };
    let contest_id = match &opts.contest_id {
        Some(id) => id.clone(),
        None => contests.first().ok_or(ClientError::NoContest)?.contest_id.clone(),
    };
    play.report.contests = contests;
    play.conn
        .send(Body::SessionOpen(SessionOpen {
            contest_id,
            practice: opts.practice,
            session_id: None,
            charts: None,
        }))
        .await?;

    let mut view: Option<TrialView> = None;
    let mut guessed = false;
    loop {
        match play.recv().await? {
            Body::SessionOpen(ack) => play.report.session_id = ack.session_id,
            Body::TrialStart(ts) => {
                view = Some(TrialView::new(ts.trial_id, ts.points_per_chart, ts.base_price));
                guessed = false;
            }
            Body::Tick(tick) => {
                let Some(v) = view.as_mut().filter(|v| v.trial_id == tick.trial_id) else {
                    continue;
                };
                match tick.slot {
                    Slot::Top => v.top.push(tick.price),
                    Slot::Bottom => v.bottom.push(tick.price),
                }
                if tick.slot != Slot::Bottom || guessed {
                    continue;
                }
                let mut choice = play.subject.on_tick(v);
                if choice.is_none() && v.points_seen() >= v.points_per_chart {
                    choice = play.subject.on_stream_complete(v);
                }
                if let Some(choice) = choice {
                    guessed = true;
                    let trial_id = v.trial_id;
                    play.conn.send(Body::Guess(Guess { trial_id, choice })).await?;
                }
            }
            Body::Feedback(fb) => {
                play.subject.on_feedback(&fb);
                let points_seen = view.as_ref().map_or(0, |v| v.points_seen());
                play.report.trials.push(TrialResult {
                    trial_id: fb.trial_id,
                    choice: fb.choice,
                    outcome: fb.outcome,
                    real_slot: fb.real_slot,
                    points_seen,
                });
            }
            Body::TrialEnd(end) => {
                play.report.score = end.score;
                view = None;
            }
            Body::SessionEnd(end) => {
                play.report.score = end.score;
                play.report.assigned = end.assigned;
                return Ok(play.report);
            }
            Body::Error(e) => play.report.errors.push(e),
            other => return Err(ClientError::Protocol(format!("unexpected {}", other.kind().as_str()))),
        }
    }
}
