use std::io;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use realchart::protocol::{Body, ProtocolMessage};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio_util::codec::{Framed, LengthDelimitedCodec};

/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
}

/// One end of a framed JSON channel. Outgoing frames are numbered from 0.
#[derive(Debug)]
pub struct Connection<T> {
    framed: Framed<T, LengthDelimitedCodec>,
    next_seq: u64,
}

impl<T: AsyncRead + AsyncWrite + Unpin> Connection<T> {
    pub fn new(io: T) -> Self {
        let codec = LengthDelimitedCodec::builder()
            .max_frame_length(MAX_FRAME_BYTES)
            .new_codec();
        Self {
            framed: Framed::new(io, codec),
            next_seq: 0,
        }
    }

    /// Numbers, encodes and sends `body`; returns the frame as sent.
    pub async fn send(&mut self, body: Body) -> io::Result<ProtocolMessage> {
        let message = ProtocolMessage::new(self.next_seq, body);
        self.next_seq += 1;
        let bytes = serde_json::to_vec(&message).map_err(io::Error::other)?;
        self.framed.send(Bytes::from(bytes)).await?;
        Ok(message)
    }

    /// Sends arbitrary bytes as one frame. For testing peers.
    pub async fn send_raw(&mut self, bytes: impl Into<Bytes>) -> io::Result<()> {
        self.framed.send(bytes.into()).await
    }

    /// Next frame, or `None` once the peer has closed the stream.
    pub async fn recv(&mut self) -> Option<Result<ProtocolMessage, FrameError>> {
        match self.framed.next().await? {
            Ok(bytes) => Some(
                serde_json::from_slice(&bytes).map_err(|e| FrameError::Malformed(e.to_string())),
            ),
            // the codec reports oversized frames as invalid data
            Err(e) if e.kind() == io::ErrorKind::InvalidData => Some(Err(FrameError::Malformed(e.to_string()))),
            Err(e) => Some(Err(FrameError::Io(e))),
        }
    }

    pub fn into_inner(self) -> T {
        self.framed.into_inner()
    }
}
