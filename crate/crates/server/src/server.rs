use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use realchart::engine::Engine;
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::runner::{run_session, SessionOptions};
use crate::transcript::TranscriptLog;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub clock: Clock,
    pub handshake_timeout: Duration,
    pub transcript: Option<Arc<TranscriptLog>>,
}

impl ServerOptions {
    pub fn new(clock: Clock) -> Self {
        Self {
            clock,
            handshake_timeout: Duration::from_secs(60),
            transcript: None,
        }
    }
}

/// Accepts connections until `shutdown` resolves, one task per session.
/// Sessions already running are left to finish on their own.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    opts: ServerOptions,
    shutdown: impl Future<Output = ()>,
) -> io::Result<()> {
    tokio::pin!(shutdown);
    let mut next_connection = 0u64;
    loop {
        let (stream, peer) = tokio::select! {
            _ = &mut shutdown => return Ok(()),
            accepted = listener.accept() => accepted?,
        };
        stream.set_nodelay(true)?;
        let connection_id = next_connection;
        next_connection += 1;
        let session_opts = SessionOptions {
            clock: opts.clock,
            handshake_timeout: opts.handshake_timeout,
            transcript: opts.transcript.clone(),
            connection_id,
            keep_transcript: false,
        };
        let engine = Arc::clone(&engine);
        tokio::spawn(async move {
            let summary = run_session(stream, engine, session_opts).await;
            tracing::info!(
                %peer,
                connection = connection_id,
                session = ?summary.session_id,
                reason = ?summary.reason,
                score = summary.record.as_ref().map(|r| r.correct),
                "session closed"
            );
        });
    }
}

/// A server running in the background.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.map_err(io::Error::other)?
    }
}

/// Binds `addr` and serves in a background task.
pub async fn spawn(addr: impl ToSocketAddrs, engine: Arc<Engine>, opts: ServerOptions) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel();
    let task = tokio::spawn(serve(listener, engine, opts, async {
        let _ = stopped.await;
    }));
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        task,
    })
}
