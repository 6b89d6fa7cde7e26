//! Session server for realchart contests.
//!
//! Each connection carries 4-byte big-endian length-prefixed JSON frames
//! (see [`realchart::protocol`]). [`run_session`] drives one session over any
//! byte stream, so the same code serves TCP clients and in-process bots
//! connected through [`tokio::io::duplex`]. Time comes from tokio's clock,
//! which tests and simulations pause to run whole contests instantly.

pub mod client;
pub mod clock;
pub mod codec;
pub mod runner;
pub mod server;
pub mod simulate;
pub mod transcript;

pub use client::{play_session, ClientError, ClientOptions, ClientReport, TrialResult};
pub use clock::Clock;
pub use codec::{Connection, FrameError, MAX_FRAME_BYTES};
pub use runner::{run_session, SessionEndReason, SessionOptions, SessionSummary};
pub use server::{serve, spawn, ServerHandle, ServerOptions};
pub use simulate::{simulate, simulate_async, SimulationConfig, SimulationError, SimulationReport};
pub use transcript::{demultiplex, TranscriptLine, TranscriptLog};
