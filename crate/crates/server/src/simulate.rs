//! Whole contests played by bots through the wire protocol, on paused time.
//!
//! Sessions run one after another, so a run is a pure function of the
//! config, the seed and the data.

use std::sync::Arc;
use std::time::Duration;

use realchart::bots::{BotKind, FeatureKind};
use realchart::engine::{derive_seed, ContestConfig, Engine, EngineError, Mode, Outcome};
use realchart::series::{sample_permutation, ChartWindow, ReturnSequence, SeriesError};
use realchart::stats::{ContestResult, ExclusionPolicy, StatsError};
use realchart::store::EventSink;
use realchart::synth::SyntheticSpec;
use realchart::Millis;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{play_session, ClientError, ClientOptions};
use crate::clock::Clock;
use crate::runner::{run_session, SessionOptions};

const CONTEST_STREAM: u64 = 0x10;
const BOT_STREAM: u64 = 0x11;
const DATA_STREAM: u64 = 0x12;
const CONTROL_STREAM: u64 = 0x13;

/// Simulated wall clock at the first session: 2024-01-01T00:00:00Z.
pub const SIMULATION_EPOCH_MS: Millis = 1_704_067_200_000;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("session {index}: {source}")]
    Client { index: usize, source: ClientError },
    #[error("no data: set `data` in the config or pass a dataset")]
    NoData,
    #[error("runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

fn default_warmup() -> usize {
    5
}

fn default_min_response() -> f64 {
    ExclusionPolicy::default().min_response_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub sessions: usize,
    pub bot: BotKind,
    #[serde(default)]
    pub feature: FeatureKind,
    /// Trials per session left out of the post-warm-up accuracy.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Shuffle the whole dataset before the contest starts, so the "real"
    /// chart is itself a permutation.
    #[serde(default)]
    pub control: bool,
    #[serde(default = "default_min_response")]
    pub min_response_rate: f64,
    pub contest: ContestConfig,
    /// Synthetic data; ignored when a dataset is passed in.
    #[serde(default)]
    pub data: Option<SyntheticSpec>,
}

impl SimulationConfig {
    /// Daily-mode contest on a Gaussian random walk.
    pub fn new(bot: BotKind, sessions: usize, charts: u32, seed: u64) -> Self {
        let window = ChartWindow::new(60, 60)
            .expect("static window is valid")
            .with_tick_interval(Duration::from_secs(1));
        Self {
            seed,
            sessions,
            bot,
            feature: FeatureKind::default(),
            warmup: default_warmup(),
            control: false,
            min_response_rate: default_min_response(),
            contest: ContestConfig::new("sim", "Heron", Mode::Daily, window).with_charts(charts),
            data: Some(SyntheticSpec::RandomWalk {
                len: 10_000,
                sigma: 1.0,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupAccuracy {
    pub warmup: usize,
    pub correct: u64,
    pub trials: u64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub contest_id: String,
    pub codename: String,
    pub bot: BotKind,
    pub feature: FeatureKind,
    pub seed: u64,
    pub sessions: usize,
    pub control: bool,
    /// `None` when every subject was excluded.
    pub result: Option<ContestResult>,
    pub excluded: Vec<String>,
    pub post_warmup: WarmupAccuracy,
}

/// Runs a simulation on a fresh paused-time runtime.
pub fn simulate(
    config: &SimulationConfig,
    dataset: Option<ReturnSequence>,
    sink: Option<Arc<dyn EventSink>>,
) -> Result<SimulationReport, SimulationError> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()?;
    runtime.block_on(simulate_async(config, dataset, sink))
}

/// Runs a simulation on the current runtime. Wall-clock time is only saved
/// when that runtime's clock is paused.
pub async fn simulate_async(
    config: &SimulationConfig,
    dataset: Option<ReturnSequence>,
    sink: Option<Arc<dyn EventSink>>,
) -> Result<SimulationReport, SimulationError> {
    let returns = match (dataset, &config.data) {
        (Some(d), _) => d,
        (None, Some(spec)) => spec.generate(100.0, derive_seed(config.seed, DATA_STREAM, 0)),
        (None, None) => return Err(SimulationError::NoData),
    };
    let returns = if config.control {
        let perm = sample_permutation(returns.len(), derive_seed(config.seed, CONTROL_STREAM, 0))?;
        let shuffled = perm.mapping().iter().map(|&k| returns.returns()[k]).collect();
        ReturnSequence::new(shuffled, returns.base_price())
    } else {
        returns
    };

    let mut contest_config = config.contest.clone();
    contest_config.seed = derive_seed(config.seed, CONTEST_STREAM, 0);
    let engine = Arc::new(match sink {
        Some(sink) => Engine::with_sink(sink),
        None => Engine::new(),
    });
    let contest = engine.create_contest(contest_config, returns)?;
    let contest_id = contest.id().to_string();
    let clock = Clock::starting_at(config.contest.starts_at.unwrap_or(SIMULATION_EPOCH_MS));

    let mut warm = WarmupAccuracy {
        warmup: config.warmup,
        correct: 0,
        trials: 0,
        accuracy: None,
    };
    for index in 0..config.sessions {
        let (client_io, server_io) = tokio::io::duplex(64 * 1024);
        let mut session_opts = SessionOptions::new(clock);
        session_opts.connection_id = index as u64;
        let server = tokio::spawn(run_session(server_io, Arc::clone(&engine), session_opts));

        let mut bot = config.bot.build(config.feature, derive_seed(config.seed, BOT_STREAM, index as u64));
        let opts = ClientOptions::new(format!("bot-{index:05}")).contest(contest_id.clone());
        let report = play_session(client_io, &opts, bot.as_mut())
            .await
            .map_err(|source| SimulationError::Client { index, source })?;
        let _ = server.await;
        for t in report.trials.iter().skip(config.warmup) {
            warm.trials += 1;
            warm.correct += u64::from(t.outcome == Outcome::Correct);
        }
    }
    warm.accuracy = (warm.trials > 0).then(|| warm.correct as f64 / warm.trials as f64);

    let policy = ExclusionPolicy {
        min_response_rate: config.min_response_rate,
    };
    let (result, excluded) = match contest.summarize(&policy) {
        Ok(summary) => (Some(summary.result), summary.excluded),
        Err(EngineError::Stats(StatsError::NoRecords)) => {
            let all = contest.subject_records().into_iter().map(|r| r.subject_id).collect();
            (None, all)
        }
        Err(e) => return Err(e.into()),
    };
    Ok(SimulationReport {
        contest_id,
        codename: config.contest.dataset_codename.clone(),
        bot: config.bot,
        feature: config.feature,
        seed: config.seed,
        sessions: config.sessions,
        control: config.control,
        result,
        excluded,
        post_warmup: warm,
    })
}
