//! Algorithmic subjects.
//!
//! [`CoinBot`] guesses uniformly at random and is the null model: its
//! correct-guess count is exactly `Binomial(n, 1/2)`.
//!
//! [`LearningBot`] summarises each chart's revealed returns with a scalar
//! feature and picks the chart whose feature is higher or lower, depending on
//! an orientation it learns purely from feedback. A signed evidence tally
//! moves by one per resolved trial (towards "higher is real" when the real
//! chart had the larger feature); the orientation is set once the tally
//! reaches +2 or -2. Until then, and on exact ties, it flips a seeded coin.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Outcome, Slot, TrialId};
use crate::protocol::Feedback;

/// Tally magnitude at which the orientation is (re)set.
pub const ORIENTATION_THRESHOLD: i32 = 2;

/// Feature values closer than this count as a tie.
pub const TIE_EPSILON: f64 = 1e-12;

/// Sample lag-1 autocorrelation; 0 for series with fewer than 3 points or
/// zero variance.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    num / denom
}

/// Maps a chart's revealed returns to one number.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, returns: &[f64]) -> f64;
}

/// Lag-1 autocorrelation of returns: momentum versus mean reversion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReturnAutocorrelation;

impl FeatureExtractor for ReturnAutocorrelation {
    fn name(&self) -> &str {
        "lag1"
    }

    fn extract(&self, returns: &[f64]) -> f64 {
        lag1_autocorrelation(returns)
    }
}

/// Lag-1 autocorrelation of absolute returns: volatility clustering, i.e.
/// calm stretches and bursty stretches.
#[derive(Debug, Clone, Copy, Default)]
pub struct VolatilityClustering;

impl FeatureExtractor for VolatilityClustering {
    fn name(&self) -> &str {
        "abs-lag1"
    }

    fn extract(&self, returns: &[f64]) -> f64 {
        let abs: Vec<f64> = returns.iter().map(|r| r.abs()).collect();
        lag1_autocorrelation(&abs)
    }
}

/// Built-in features by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    #[default]
    Lag1,
    AbsLag1,
}

impl FeatureKind {
    pub fn extractor(self) -> Arc<dyn FeatureExtractor> {
        match self {
            FeatureKind::Lag1 => Arc::new(ReturnAutocorrelation),
            FeatureKind::AbsLag1 => Arc::new(VolatilityClustering),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lag1" => Ok(FeatureKind::Lag1),
            "abs-lag1" => Ok(FeatureKind::AbsLag1),
            other => Err(format!("unknown feature `{other}` (expected lag1 or abs-lag1)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Unknown,
    HigherIsReal,
    LowerIsReal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LastGuess {
    top: f64,
    bottom: f64,
    choice: Slot,
}

/// State of a feedback-learning discriminator.
pub struct BotPolicy {
    name: String,
    feature: Arc<dyn FeatureExtractor>,
    orientation: Orientation,
    tally: i32,
    rng: ChaCha8Rng,
    last: Option<LastGuess>,
}

impl fmt::Debug for BotPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BotPolicy")
            .field("name", &self.name)
            .field("feature", &self.feature.name())
            .field("orientation", &self.orientation)
            .field("tally", &self.tally)
            .finish()
    }
}

impl BotPolicy {
    pub fn new(name: impl Into<String>, feature: Arc<dyn FeatureExtractor>, seed: u64) -> Self {
        Self {
            name: name.into(),
            feature,
            orientation: Orientation::Unknown,
            tally: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_name(&self) -> &str {
        self.feature.name()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn tally(&self) -> i32 {
        self.tally
    }

    /// Picks the chart believed to be real from both charts' returns.
    pub fn guess(&mut self, top_returns: &[f64], bottom_returns: &[f64]) -> Slot {
        let top = self.feature.extract(top_returns);
        let bottom = self.feature.extract(bottom_returns);
        let tie = (top - bottom).abs() <= TIE_EPSILON;
        let choice = match self.orientation {
            _ if tie => self.coin(),
            Orientation::Unknown => self.coin(),
            Orientation::HigherIsReal => {
                if top > bottom {
                    Slot::Top
                } else {
                    Slot::Bottom
                }
            }
            Orientation::LowerIsReal => {
                if top < bottom {
                    Slot::Top
                } else {
                    Slot::Bottom
                }
            }
        };
        self.last = Some(LastGuess { top, bottom, choice });
        choice
    }

    fn coin(&mut self) -> Slot {
        if self.rng.random::<bool>() {
            Slot::Top
        } else {
            Slot::Bottom
        }
    }

    /// Learns from the outcome of the most recent [`guess`](Self::guess).
    /// Ties carry no evidence.
    pub fn update(&mut self, outcome: Outcome) {
        let Some(last) = self.last.take() else {
            return;
        };
        let real = match outcome {
            Outcome::Correct => last.choice,
            Outcome::Incorrect => last.choice.other(),
        };
        let (real_stat, fake_stat) = match real {
            Slot::Top => (last.top, last.bottom),
            Slot::Bottom => (last.bottom, last.top),
        };
        if (real_stat - fake_stat).abs() <= TIE_EPSILON {
            return;
        }
        self.tally += if real_stat > fake_stat { 1 } else { -1 };
        if self.tally >= ORIENTATION_THRESHOLD {
            self.orientation = Orientation::HigherIsReal;
        } else if self.tally <= -ORIENTATION_THRESHOLD {
            self.orientation = Orientation::LowerIsReal;
        }
    }
}

/// Price series revealed so far for the current trial, base price first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialView {
    pub trial_id: TrialId,
    pub points_per_chart: usize,
    pub top: Vec<f64>,
    pub bottom: Vec<f64>,
}

impl TrialView {
    pub fn new(trial_id: TrialId, points_per_chart: usize, base_price: f64) -> Self {
        Self {
            trial_id,
            points_per_chart,
            top: vec![base_price],
            bottom: vec![base_price],
        }
    }

    pub fn points_seen(&self) -> usize {
        self.top.len().min(self.bottom.len()) - 1
    }

    pub fn returns(&self, slot: Slot) -> Vec<f64> {
        let prices = match slot {
            Slot::Top => &self.top,
            Slot::Bottom => &self.bottom,
        };
        prices.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// A protocol participant's decision logic.
pub trait Subject: Send {
    /// Called after every complete tick pair. Returning a slot guesses now.
    fn on_tick(&mut self, view: &TrialView) -> Option<Slot>;
    /// Called once the stream is complete if no guess was made.
    fn on_stream_complete(&mut self, view: &TrialView) -> Option<Slot>;
    fn on_feedback(&mut self, feedback: &Feedback);
}

/// Fair-coin guesser; answers on the first tick pair.
#[derive(Debug, Clone)]
pub struct CoinBot {
    rng: ChaCha8Rng,
}

impl CoinBot {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn guess(&mut self) -> Slot {
        if self.rng.random::<bool>() {
            Slot::Top
        } else {
            Slot::Bottom
        }
    }
}

impl Subject for CoinBot {
    fn on_tick(&mut self, _view: &TrialView) -> Option<Slot> {
        Some(self.guess())
    }

    fn on_stream_complete(&mut self, _view: &TrialView) -> Option<Slot> {
        Some(self.guess())
    }

    fn on_feedback(&mut self, _feedback: &Feedback) {}
}

/// Waits for the full chart, then guesses with a [`BotPolicy`].
#[derive(Debug)]
pub struct LearningBot {
    policy: BotPolicy,
    learns: bool,
}

impl LearningBot {
    pub fn new(feature: FeatureKind, seed: u64) -> Self {
        Self {
            policy: BotPolicy::new("learning", feature.extractor(), seed),
            learns: true,
        }
    }

    /// The same bot with feedback withheld: it never updates.
    pub fn without_feedback(mut self) -> Self {
        self.learns = false;
        self
    }

    pub fn policy(&self) -> &BotPolicy {
        &self.policy
    }
}

impl Subject for LearningBot {
    fn on_tick(&mut self, _view: &TrialView) -> Option<Slot> {
        None
    }

    fn on_stream_complete(&mut self, view: &TrialView) -> Option<Slot> {
        Some(self.policy.guess(&view.returns(Slot::Top), &view.returns(Slot::Bottom)))
    }

    fn on_feedback(&mut self, feedback: &Feedback) {
        if self.learns && feedback.choice.slot().is_some() {
            self.policy.update(feedback.outcome);
        }
    }
}

/// Never answers; every trial times out.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbsentBot;

impl Subject for AbsentBot {
    fn on_tick(&mut self, _view: &TrialView) -> Option<Slot> {
        None
    }

    fn on_stream_complete(&mut self, _view: &TrialView) -> Option<Slot> {
        None
    }

    fn on_feedback(&mut self, _feedback: &Feedback) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotKind {
    Coin,
    Learning,
    /// Learning bot that never sees feedback.
    Blind,
    Absent,
}

impl std::str::FromStr for BotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coin" => Ok(BotKind::Coin),
            "learning" => Ok(BotKind::Learning),
            "blind" => Ok(BotKind::Blind),
            "absent" => Ok(BotKind::Absent),
            other => Err(format!("unknown bot `{other}` (expected coin, learning, blind or absent)")),
        }
    }
}

impl BotKind {
    pub fn build(self, feature: FeatureKind, seed: u64) -> Box<dyn Subject> {
        match self {
            BotKind::Coin => Box::new(CoinBot::new(seed)),
            BotKind::Learning => Box::new(LearningBot::new(feature, seed)),
            BotKind::Blind => Box::new(LearningBot::new(feature, seed).without_feedback()),
            BotKind::Absent => Box::new(AbsentBot),
        }
    }
}
