#![allow(dead_code)]

pub mod fuzz;

use std::sync::Arc;
use std::time::Duration;

use realchart::engine::{ContestConfig, Engine, Mode};
use realchart::series::ChartWindow;
use realchart::store::MemorySink;
use realchart::synth::gaussian_returns;
use realchart_server::{run_session, Clock, SessionOptions, SessionSummary};
use tokio::io::DuplexStream;
use tokio::task::JoinHandle;

pub const EPOCH: u64 = 1_700_000_000_000;

pub fn window(points: usize, tick_ms: u64) -> ChartWindow {
    ChartWindow::new(points, points)
        .unwrap()
        .with_tick_interval(Duration::from_millis(tick_ms))
}

/// Engine with one daily contest `c` over a random walk, logging to memory.
pub fn engine(points: usize, charts: u32, tick_ms: u64) -> (Arc<Engine>, Arc<MemorySink>) {
    let sink = Arc::new(MemorySink::default());
    let engine = Engine::with_sink(sink.clone());
    let config = ContestConfig::new("c", "Lynx", Mode::Daily, window(points, tick_ms))
        .with_charts(charts)
        .with_seed(5);
    engine
        .create_contest(config, gaussian_returns(5_000, 1.0, 100.0, 1))
        .unwrap();
    (Arc::new(engine), sink)
}

/// Starts a server-side session on one end of an in-memory pipe.
pub fn connect(engine: &Arc<Engine>) -> (DuplexStream, JoinHandle<SessionSummary>) {
    let (client, server) = tokio::io::duplex(1 << 16);
    let mut opts = SessionOptions::new(Clock::starting_at(EPOCH));
    opts.keep_transcript = true;
    let task = tokio::spawn(run_session(server, Arc::clone(engine), opts));
    (client, task)
}
