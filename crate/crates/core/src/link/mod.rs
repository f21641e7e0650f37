//! Framed classical channel between Alice and Bob.
//!
//! The channel is assumed reliable and authenticated; authentication is a
//! stub ([`authenticate`]) and frames carry no MAC.

mod frame;
mod transport;

pub use frame::{
    decode_frame, decode_frame_with_limit, encode_frame, encode_frame_with_limit, Frame, FrameError, MsgType,
    DEFAULT_MAX_PAYLOAD, HEADER_LEN, MAGIC, MIN_FRAME_LEN,
};
pub use transport::{memory_pair, MemoryTransport, ReplayTransport, TcpTransport, Transport};

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("receive timed out")]
    Timeout,
    #[error("peer disconnected")]
    Disconnected,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("sequence error: expected {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("frame for session {got:#x}, expected {expected:#x}")]
    SessionMismatch { expected: u64, got: u64 },
}

impl From<std::io::Error> for LinkError {
    fn from(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            WouldBlock | TimedOut => LinkError::Timeout,
            UnexpectedEof | ConnectionReset | ConnectionAborted | BrokenPipe => LinkError::Disconnected,
            _ => LinkError::Io(e.to_string()),
        }
    }
}

/// Always succeeds: the classical channel is taken as authenticated.
pub fn authenticate<T: Transport + ?Sized>(_transport: &mut T) -> Result<(), LinkError> {
    Ok(())
}

/// Per-type frame and payload-byte totals for one direction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    pub frames: BTreeMap<MsgType, u64>,
    pub payload_bytes: BTreeMap<MsgType, u64>,
}

impl Audit {
    fn record(&mut self, f: &Frame) {
        *self.frames.entry(f.msg_type).or_default() += 1;
        *self.payload_bytes.entry(f.msg_type).or_default() += f.payload.len() as u64;
    }

    pub fn merge(&mut self, other: &Audit) {
        for (k, v) in &other.frames {
            *self.frames.entry(*k).or_default() += v;
        }
        for (k, v) in &other.payload_bytes {
            *self.payload_bytes.entry(*k).or_default() += v;
        }
    }
}

/// Which way a transcript entry travelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// One party's end of a session: numbers outgoing frames and enforces
/// strictly consecutive sequence numbers on incoming ones.
pub struct Endpoint {
    transport: Box<dyn Transport>,
    session_id: u64,
    next_send: u64,
    next_recv: u64,
    pub sent: Audit,
    pub received: Audit,
    transcript: Option<Vec<(Direction, Frame)>>,
}

impl Endpoint {
    pub fn new(transport: Box<dyn Transport>, session_id: u64) -> Self {
        Self { transport, session_id, next_send: 0, next_recv: 0, sent: Audit::default(), received: Audit::default(), transcript: None }
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn take_transcript(&mut self) -> Vec<(Direction, Frame)> {
        self.transcript.take().unwrap_or_default()
    }

    pub fn send(&mut self, msg_type: MsgType, payload: Vec<u8>) -> Result<(), LinkError> {
        let frame = Frame { msg_type, session_id: self.session_id, sequence: self.next_send, payload };
        self.transport.send(&frame)?;
        self.next_send += 1;
        self.sent.record(&frame);
        if let Some(t) = self.transcript.as_mut() {
            t.push((Direction::Sent, frame));
        }
        Ok(())
    }

    pub fn receive(&mut self) -> Result<Frame, LinkError> {
        let frame = self.transport.receive()?;
        if frame.session_id != self.session_id {
            return Err(LinkError::SessionMismatch { expected: self.session_id, got: frame.session_id });
        }
        if frame.sequence != self.next_recv {
            return Err(LinkError::Sequence { expected: self.next_recv, got: frame.sequence });
        }
        self.next_recv += 1;
        self.received.record(&frame);
        if let Some(t) = self.transcript.as_mut() {
            t.push((Direction::Received, frame.clone()));
        }
        Ok(frame)
    }
}
