//! One session, start to finish, over any byte stream.

use std::sync::Arc;
use std::time::Duration;

use realchart::engine::{Contest, Engine, EngineError, Session, SessionId, TrialId};
use realchart::protocol::{
    Body, ContestInfo, ContestList, Direction, ErrorCode, ErrorReply, Feedback, ProtocolMessage, SessionEnd,
    SessionOpen, Tick, TranscriptEntry, TrialEnd, TrialStart,
};
use realchart::stats::SubjectRecord;
use realchart::store::GuessChoice;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::time::{sleep_until, timeout};

use crate::clock::Clock;
use crate::codec::{Connection, FrameError};
use crate::transcript::TranscriptLog;

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub clock: Clock,
    /// How long a client may take to send `hello` and `session_open`.
    pub handshake_timeout: Duration,
    pub transcript: Option<Arc<TranscriptLog>>,
    /// Tag for transcript lines.
    pub connection_id: u64,
    /// Keep the transcript in the returned summary.
    pub keep_transcript: bool,
}

impl SessionOptions {
    pub fn new(clock: Clock) -> Self {
        Self {
            clock,
            handshake_timeout: Duration::from_secs(60),
            transcript: None,
            connection_id: 0,
            keep_transcript: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEndReason {
    Completed,
    /// The peer closed the stream; unplayed trials were forfeited.
    Disconnected,
    /// A fatal error reply was sent and the session closed.
    Rejected(ErrorCode),
    HandshakeTimeout,
}

#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub session_id: Option<SessionId>,
    /// Present whenever a session was opened.
    pub record: Option<SubjectRecord>,
    pub reason: SessionEndReason,
    pub transcript: Vec<TranscriptEntry>,
}

/// Maps an engine rejection to its wire code.
pub fn error_code(err: &EngineError) -> ErrorCode {
    match err {
        EngineError::UnknownContest(_) => ErrorCode::UnknownContest,
        EngineError::ContestFull(_) => ErrorCode::ContestFull,
        EngineError::ContestClosed(_) => ErrorCode::ContestClosed,
        EngineError::DuplicateSession { .. } => ErrorCode::DuplicateSession,
        EngineError::PracticeUnavailable(_) => ErrorCode::PracticeUnavailable,
        EngineError::UnknownTrial(_) => ErrorCode::UnknownTrial,
        EngineError::AlreadyResolved(_) => ErrorCode::AlreadyResolved,
        EngineError::OutOfOrder { .. } => ErrorCode::OutOfOrder,
        EngineError::NotAwaitingGuess(_) => ErrorCode::NotAcceptingGuesses,
        EngineError::DeadlineElapsed(_) => ErrorCode::DeadlineElapsed,
        _ => ErrorCode::Internal,
    }
}

pub fn contest_info(contest: &Contest) -> ContestInfo {
    let config = contest.config();
    ContestInfo {
        contest_id: config.contest_id.clone(),
        codename: config.dataset_codename.clone(),
        mode: config.mode,
        points_per_chart: config.window.points_per_chart,
        points_per_screen: config.window.points_per_screen,
        charts_per_subject: config.charts_per_subject,
        tick_interval_ms: config.window.tick_interval.as_millis() as u64,
    }
}

enum Inbound {
    Message(ProtocolMessage),
    Malformed(String),
    Closed,
}

/// Why a session stopped early.
enum Stop {
    Closed,
    Fatal(ErrorCode),
}

struct Runner<T> {
    conn: Connection<T>,
    opts: SessionOptions,
    transcript: Vec<TranscriptEntry>,
    last_inbound_seq: Option<u64>,
}

/// Runs one session: handshake, every assigned trial, `session_end`.
///
/// Disconnects and fatal errors after the session is open forfeit the
/// remaining trials as timeouts, and the session still counts.
pub async fn run_session<T>(io: T, engine: Arc<Engine>, opts: SessionOptions) -> SessionSummary
where
    T: AsyncRead + AsyncWrite + Unpin,
{
    let mut runner = Runner {
        conn: Connection::new(io),
        opts,
        transcript: Vec::new(),
        last_inbound_seq: None,
    };
    let handshake = timeout(runner.opts.handshake_timeout, runner.handshake(&engine)).await;
    let mut session = match handshake {
        Err(_) => return runner.summary(None, None, SessionEndReason::HandshakeTimeout),
        Ok(Err(Stop::Closed)) => return runner.summary(None, None, SessionEndReason::Disconnected),
        Ok(Err(Stop::Fatal(code))) => return runner.summary(None, None, SessionEndReason::Rejected(code)),
        Ok(Ok(session)) => session,
    };

    let mut reason = SessionEndReason::Completed;
    while !session.is_complete() {
        match runner.play_trial(&mut session).await {
            Ok(()) => {}
            Err(stop) => {
                reason = match stop {
                    Stop::Closed => SessionEndReason::Disconnected,
                    Stop::Fatal(code) => SessionEndReason::Rejected(code),
                };
                break;
            }
        }
    }
    let now = runner.opts.clock.now();
    if reason == SessionEndReason::Completed {
        let end = SessionEnd {
            score: session.score(),
            assigned: session.trials().len() as u32,
        };
        if runner.send(Body::SessionEnd(end)).await.is_err() {
            reason = SessionEndReason::Disconnected;
        }
    }
    if let Err(e) = session.forfeit_remaining(now) {
        tracing::error!(error = %e, "could not forfeit remaining trials");
    }
    let id = session.id();
    let record = match session.finish(now) {
        Ok(record) => Some(record),
        Err(e) => {
            tracing::error!(error = %e, "could not close session");
            None
        }
    };
    runner.summary(Some(id), record, reason)
}

impl<T: AsyncRead + AsyncWrite + Unpin> Runner<T> {
    fn summary(self, session_id: Option<SessionId>, record: Option<SubjectRecord>, reason: SessionEndReason) -> SessionSummary {
        SessionSummary {
            session_id,
            record,
            reason,
            transcript: self.transcript,
        }
    }

    fn record(&mut self, entry: TranscriptEntry) {
        if let Some(log) = &self.opts.transcript {
            if let Err(e) = log.append(self.opts.connection_id, &entry) {
                tracing::error!(error = %e, "transcript write failed");
            }
        }
        if self.opts.keep_transcript {
            self.transcript.push(entry);
        }
    }

    async fn send(&mut self, body: Body) -> Result<(), Stop> {
        let message = self.conn.send(body).await.map_err(|_| Stop::Closed)?;
        self.record(TranscriptEntry::outbound(message));
        Ok(())
    }

    async fn fail(&mut self, code: ErrorCode, message: impl Into<String>) -> Stop {
        let reply = ErrorReply {
            code,
            message: message.into(),
        };
        match self.send(Body::Error(reply)).await {
            Ok(()) => Stop::Fatal(code),
            Err(stop) => stop,
        }
    }

    async fn next_inbound(&mut self) -> Inbound {
        let message = match self.conn.recv().await {
            None | Some(Err(FrameError::Io(_))) => return Inbound::Closed,
            Some(Err(FrameError::Malformed(e))) => return Inbound::Malformed(e),
            Some(Ok(m)) => m,
        };
        if message.body.direction() != Direction::ClientToServer {
            return Inbound::Malformed(format!("{} is a server message", message.kind().as_str()));
        }
        if self.last_inbound_seq.is_some_and(|prev| message.sequence_number <= prev) {
            return Inbound::Malformed(format!("seq {} does not increase", message.sequence_number));
        }
        self.last_inbound_seq = Some(message.sequence_number);
        self.record(TranscriptEntry::inbound(message.clone()));
        Inbound::Message(message)
    }

    /// Reads the next request, turning anything unusable into a fatal stop.
    async fn expect_request(&mut self) -> Result<Body, Stop> {
        match self.next_inbound().await {
            Inbound::Message(m) => Ok(m.body),
            Inbound::Malformed(e) => Err(self.fail(ErrorCode::Malformed, e).await),
            Inbound::Closed => Err(Stop::Closed),
        }
    }

    async fn handshake(&mut self, engine: &Engine) -> Result<Session, Stop> {
        let hello = match self.expect_request().await? {
            Body::Hello(h) => h,
            other => return Err(self.fail(ErrorCode::UnexpectedMessage, format!("expected hello, got {}", other.kind().as_str())).await),
        };
        let contests = engine.contests().iter().map(|c| contest_info(c)).collect();
        self.send(Body::ContestList(ContestList { contests })).await?;

        let open = match self.expect_request().await? {
            Body::SessionOpen(o) if o.session_id.is_none() => o,
            other => {
                return Err(self
                    .fail(ErrorCode::UnexpectedMessage, format!("expected session_open, got {}", other.kind().as_str()))
                    .await)
            }
        };
        let now = self.opts.clock.now();
        let session = engine
            .contest(&open.contest_id)
            .and_then(|c| c.start_session(hello.subject_id, hello.profession, open.practice, now));
        let session = match session {
            Ok(s) => s,
            Err(e) => return Err(self.fail(error_code(&e), e.to_string()).await),
        };
        self.send(Body::SessionOpen(SessionOpen {
            contest_id: open.contest_id,
            practice: open.practice,
            session_id: Some(session.id()),
            charts: Some(session.trials().len() as u32),
        }))
        .await?;
        Ok(session)
    }

    /// Streams the current trial until a guess or the deadline resolves it.
    async fn play_trial(&mut self, session: &mut Session) -> Result<(), Stop> {
        let clock = self.opts.clock;
        let config = session.contest().config().clone();
        let window = config.window;
        let index = session.cursor() as u32;
        let started = clock.now();
        let trial = match session.begin_trial(started) {
            Ok(t) => t,
            Err(e) => return Err(self.fail(ErrorCode::Internal, e.to_string()).await),
        };
        let trial_id = trial.id();
        let real_slot = trial.placement().real_slot();
        let top = trial.prices(realchart::engine::Slot::Top).to_vec();
        let bottom = trial.prices(realchart::engine::Slot::Bottom).to_vec();
        let base_price = trial.base_price();
        let points = window.points_per_chart;

        let start = clock.instant_at(started);
        let deadline = start + config.guess_deadline();
        self.send(Body::TrialStart(TrialStart {
            trial_id,
            index,
            points_per_chart: points,
            points_per_screen: window.points_per_screen,
            tick_interval_ms: window.tick_interval.as_millis() as u64,
            guess_deadline_ms: config.guess_deadline().as_millis() as u64,
            base_price,
        }))
        .await?;

        let mut sent = 0usize;
        let feedback = loop {
            let next_tick = start + window.tick_interval * (sent as u32 + 1);
            tokio::select! {
                biased;
                inbound = self.next_inbound() => {
                    match inbound {
                        Inbound::Closed => return Err(Stop::Closed),
                        Inbound::Malformed(e) => return Err(self.fail(ErrorCode::Malformed, e).await),
                        Inbound::Message(ProtocolMessage { body: Body::Guess(g), .. }) => {
                            match session.submit_guess(g.trial_id, g.choice, clock.now()) {
                                Ok(outcome) => {
                                    break Feedback {
                                        trial_id,
                                        choice: GuessChoice::from(g.choice),
                                        outcome,
                                        real_slot,
                                    }
                                }
                                Err(e) => {
                                    let code = error_code(&e);
                                    if code.is_fatal() {
                                        return Err(self.fail(code, e.to_string()).await);
                                    }
                                    let reply = ErrorReply { code, message: e.to_string() };
                                    self.send(Body::Error(reply)).await?;
                                }
                            }
                        }
                        Inbound::Message(other) => {
                            let msg = format!("{} during a trial", other.kind().as_str());
                            return Err(self.fail(ErrorCode::UnexpectedMessage, msg).await);
                        }
                    }
                }
                _ = sleep_until(next_tick), if sent < points => {
                    self.send_pair(trial_id, sent, top[sent + 1], bottom[sent + 1]).await?;
                    sent += 1;
                    if sent == points {
                        if let Err(e) = session.finish_stream(trial_id) {
                            return Err(self.fail(ErrorCode::Internal, e.to_string()).await);
                        }
                    }
                }
                _ = sleep_until(deadline) => {
                    if let Err(e) = session.expire_trial(trial_id, clock.now()) {
                        return Err(self.fail(ErrorCode::Internal, e.to_string()).await);
                    }
                    break Feedback {
                        trial_id,
                        choice: GuessChoice::Timeout,
                        outcome: realchart::engine::Outcome::Incorrect,
                        real_slot,
                    };
                }
            }
        };
        self.send(Body::Feedback(feedback)).await?;
        self.send(Body::TrialEnd(TrialEnd {
            trial_id,
            score: session.score(),
        }))
        .await
    }

    async fn send_pair(&mut self, trial_id: TrialId, point_index: usize, top: f64, bottom: f64) -> Result<(), Stop> {
        use realchart::engine::Slot;
        for (slot, price) in [(Slot::Top, top), (Slot::Bottom, bottom)] {
            self.send(Body::Tick(Tick {
                trial_id,
                slot,
                point_index,
                price,
            }))
            .await?;
        }
        Ok(())
    }
}
