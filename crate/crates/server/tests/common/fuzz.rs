//! Transcript generator and single-fault injector.
//!
//! Valid transcripts are built from a direct description of the protocol,
//! then exactly one fault is planted. Each fault knows the violation it must
//! produce and where, so the validator can be checked against it.

use rand::{Rng, RngCore};
use realchart::engine::{Outcome, SessionId, Slot, TrialId};
use realchart::protocol::*;
use realchart::stats::Profession;
use realchart::store::GuessChoice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SeqRegression,
    DropBottomTick,
    DropGuess,
    FlipOutcome,
    TickAfterGuess,
    DropTrialEnd,
    EarlySessionEnd,
    MessageAfterClose,
    Truncate,
    DuplicateHello,
    DropFeedback,
    SwapTickSlots,
}

pub const FAULTS: [Fault; 12] = [
    Fault::SeqRegression,
    Fault::DropBottomTick,
    Fault::DropGuess,
    Fault::FlipOutcome,
    Fault::TickAfterGuess,
    Fault::DropTrialEnd,
    Fault::EarlySessionEnd,
    Fault::MessageAfterClose,
    Fault::Truncate,
    Fault::DuplicateHello,
    Fault::DropFeedback,
    Fault::SwapTickSlots,
];

/// Where a fault must be reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub index: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone)]
pub struct TrialShape {
    pub points: usize,
    /// Tick pairs before the guess; `None` times out after a full stream.
    pub guess_after: Option<usize>,
    pub real: Slot,
    pub choice: Slot,
}

pub fn random_shapes(rng: &mut impl Rng) -> Vec<TrialShape> {
    let charts = rng.random_range(1..=5);
    (0..charts)
        .map(|_| {
            let points = rng.random_range(1..=6);
            let guess_after = rng.random_bool(0.8).then(|| rng.random_range(1..=points));
            TrialShape {
                points,
                guess_after,
                real: if rng.random::<bool>() { Slot::Top } else { Slot::Bottom },
                choice: if rng.random::<bool>() { Slot::Top } else { Slot::Bottom },
            }
        })
        .collect()
}

fn body_direction(body: &Body) -> Direction {
    match body {
        Body::Hello(_) | Body::Guess(_) => Direction::ClientToServer,
        Body::SessionOpen(o) if o.session_id.is_none() => Direction::ClientToServer,
        _ => Direction::ServerToClient,
    }
}

/// Assigns 0, 1, 2, ... per direction.
pub fn number(bodies: Vec<Body>) -> Vec<TranscriptEntry> {
    let mut seq = [0u64; 2];
    bodies
        .into_iter()
        .map(|body| {
            let d = body_direction(&body);
            let n = &mut seq[d as usize];
            let entry = TranscriptEntry {
                direction: d,
                message: ProtocolMessage::new(*n, body),
            };
            *n += 1;
            entry
        })
        .collect()
}

pub fn build(shapes: &[TrialShape]) -> Vec<Body> {
    let mut out = vec![
        Body::Hello(Hello {
            subject_id: "s".into(),
            profession: Profession::Other,
        }),
        Body::ContestList(ContestList { contests: vec![] }),
        Body::SessionOpen(SessionOpen {
            contest_id: "c".into(),
            practice: false,
            session_id: None,
            charts: None,
        }),
        Body::SessionOpen(SessionOpen {
            contest_id: "c".into(),
            practice: false,
            session_id: Some(SessionId(1)),
            charts: Some(shapes.len() as u32),
        }),
    ];
    let mut score = 0;
    for (i, shape) in shapes.iter().enumerate() {
        let trial_id = TrialId(100 + i as u64);
        out.push(Body::TrialStart(TrialStart {
            trial_id,
            index: i as u32,
            points_per_chart: shape.points,
            points_per_screen: shape.points,
            tick_interval_ms: 1000,
            guess_deadline_ms: 1000 * shape.points as u64 + 10_000,
            base_price: 50.0,
        }));
        for p in 0..shape.guess_after.unwrap_or(shape.points) {
            for slot in [Slot::Top, Slot::Bottom] {
                out.push(Body::Tick(Tick {
                    trial_id,
                    slot,
                    point_index: p,
                    price: 50.0 + p as f64,
                }));
            }
        }
        let choice = match shape.guess_after {
            Some(_) => {
                out.push(Body::Guess(Guess {
                    trial_id,
                    choice: shape.choice,
                }));
                GuessChoice::from(shape.choice)
            }
            None => GuessChoice::Timeout,
        };
        let outcome = if choice.slot() == Some(shape.real) {
            score += 1;
            Outcome::Correct
        } else {
            Outcome::Incorrect
        };
        out.push(Body::Feedback(Feedback {
            trial_id,
            choice,
            outcome,
            real_slot: shape.real,
        }));
        out.push(Body::TrialEnd(TrialEnd { trial_id, score }));
    }
    out.push(Body::SessionEnd(SessionEnd {
        score,
        assigned: shapes.len() as u32,
    }));
    out
}

fn positions(bodies: &[Body], pred: impl Fn(&Body) -> bool) -> Vec<usize> {
    bodies.iter().enumerate().filter(|(_, b)| pred(b)).map(|(i, _)| i).collect()
}

fn pick(rng: &mut impl RngCore, v: &[usize]) -> Option<usize> {
    (!v.is_empty()).then(|| v[(rng.next_u64() % v.len() as u64) as usize])
}

/// Plants `fault` into a valid transcript. Returns `None` when the shape
/// offers no place for it.
pub fn inject(
    rng: &mut impl RngCore,
    shapes: &[TrialShape],
    fault: Fault,
) -> Option<(Vec<TranscriptEntry>, Expected)> {
    use ViolationKind as V;
    let mut bodies = build(shapes);
    let expect = |index, kind| Expected { index, kind };
    match fault {
        Fault::SeqRegression => {
            let mut entries = number(bodies);
            // any entry after the first of its direction
            let candidates: Vec<usize> = (0..entries.len())
                .filter(|&i| entries[..i].iter().any(|e| e.direction == entries[i].direction))
                .collect();
            let i = pick(rng, &candidates)?;
            entries[i].message.sequence_number -= 1;
            return Some((entries, expect(i, V::SequenceNotIncreasing)));
        }
        Fault::DropBottomTick => {
            let i = pick(rng, &positions(&bodies, |b| matches!(b, Body::Tick(t) if t.slot == Slot::Bottom)))?;
            bodies.remove(i);
            Some(expect(i, V::UnpairedTick))
        }
        Fault::DropGuess => {
            let i = pick(rng, &positions(&bodies, |b| matches!(b, Body::Guess(_))))?;
            bodies.remove(i);
            // the feedback that follows now answers nothing
            Some(expect(i, V::FeedbackWithoutGuess))
        }
        Fault::FlipOutcome => {
            let i = pick(rng, &positions(&bodies, |b| matches!(b, Body::Feedback(_))))?;
            if let Body::Feedback(fb) = &mut bodies[i] {
                fb.outcome = match fb.outcome {
                    Outcome::Correct => Outcome::Incorrect,
                    Outcome::Incorrect => Outcome::Correct,
                };
            }
            Some(expect(i, V::InconsistentFeedback))
        }
        Fault::TickAfterGuess => {
            let i = pick(rng, &positions(&bodies, |b| matches!(b, Body::Guess(_))))?;
            let Body::Guess(g) = &bodies[i] else { unreachable!() };
            let tick = Body::Tick(Tick {
                trial_id: g.trial_id,
                slot: Slot::Top,
                point_index: 0,
                price: 1.0,
            });
            // between the guess and its feedback: the feedback is owed first
            bodies.insert(i + 1, tick);
            Some(expect(i + 1, V::GuessNotAnswered))
        }
        Fault::DropTrialEnd => {
            let ends = positions(&bodies, |b| matches!(b, Body::TrialEnd(_)));
            let i = pick(rng, &ends)?;
            bodies.remove(i);
            Some(expect(i, V::MissingTrialEnd))
        }
        Fault::EarlySessionEnd => {
            let ends = positions(&bodies, |b| matches!(b, Body::TrialEnd(_)));
            if ends.len() < 2 {
                return None;
            }
            let cut = ends[(rng.next_u64() % (ends.len() as u64 - 1)) as usize] + 1;
            let last = bodies.pop().unwrap();
            bodies.truncate(cut);
            bodies.push(last);
            Some(expect(cut, V::SessionEndEarly))
        }
        Fault::MessageAfterClose => {
            let i = bodies.len();
            bodies.push(Body::Error(ErrorReply {
                code: ErrorCode::Internal,
                message: "late".into(),
            }));
            Some(expect(i, V::MessageAfterClose))
        }
        Fault::Truncate => {
            let cut = 1 + (rng.next_u64() % (bodies.len() as u64 - 1)) as usize;
            bodies.truncate(cut);
            Some(expect(cut, V::Truncated))
        }
        Fault::DuplicateHello => {
            let starts = positions(&bodies, |b| matches!(b, Body::TrialStart(_)));
            let i = pick(rng, &starts)?;
            bodies.insert(
                i,
                Body::Hello(Hello {
                    subject_id: "again".into(),
                    profession: Profession::Other,
                }),
            );
            Some(expect(i, V::UnexpectedMessage))
        }
        Fault::DropFeedback => {
            let i = pick(rng, &positions(&bodies, |b| matches!(b, Body::Feedback(_))))?;
            let answered = i > 0 && matches!(bodies[i - 1], Body::Guess(_));
            bodies.remove(i);
            // after a guess the trial_end arrives while feedback is owed
            Some(expect(
                i,
                if answered {
                    V::GuessNotAnswered
                } else {
                    V::TrialEndWithoutFeedback
                },
            ))
        }
        Fault::SwapTickSlots => {
            let tops = positions(&bodies, |b| matches!(b, Body::Tick(t) if t.slot == Slot::Top));
            let i = pick(rng, &tops)?;
            bodies.swap(i, i + 1);
            // a bottom tick first is out of order
            Some(expect(i, V::TickOutOfOrder))
        }
    }
    .map(|e| (number(bodies), e))
}
