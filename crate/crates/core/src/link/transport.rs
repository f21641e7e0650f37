use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::frame::{decode_frame_with_limit, encode_frame_with_limit, payload_len, FrameError, HEADER_LEN};
use super::{Direction, Frame, LinkError, DEFAULT_MAX_PAYLOAD};

/// Reliable, ordered, bidirectional frame delivery.
pub trait Transport: Send {
    fn send(&mut self, frame: &Frame) -> Result<(), LinkError>;
    /// Blocks until a frame arrives, the timeout elapses or the peer goes away.
    fn receive(&mut self) -> Result<Frame, LinkError>;
}

/// In-process endpoint; frames cross as encoded bytes so the codec is always
/// exercised.
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

pub fn memory_pair(timeout: Duration) -> (MemoryTransport, MemoryTransport) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (MemoryTransport { tx: tx_a, rx: rx_a, timeout }, MemoryTransport { tx: tx_b, rx: rx_b, timeout })
}

impl Transport for MemoryTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), LinkError> {
        let bytes = encode_frame_with_limit(frame, DEFAULT_MAX_PAYLOAD)?;
        self.tx.send(bytes).map_err(|_| LinkError::Disconnected)
    }

    fn receive(&mut self) -> Result<Frame, LinkError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(bytes) => Ok(decode_frame_with_limit(&bytes, DEFAULT_MAX_PAYLOAD)?),
            Err(RecvTimeoutError::Timeout) => Err(LinkError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(LinkError::Disconnected),
        }
    }
}

/// Stream-socket endpoint for two-process runs.
pub struct TcpTransport {
    stream: TcpStream,
    max_payload: usize,
}

impl TcpTransport {
    pub fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self, LinkError> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, max_payload: DEFAULT_MAX_PAYLOAD })
    }

    /// Accepts exactly one peer on `addr`.
    pub fn listen<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, LinkError> {
        let listener = TcpListener::bind(addr)?;
        Self::accept(&listener, timeout)
    }

    pub fn accept(listener: &TcpListener, timeout: Duration) -> Result<Self, LinkError> {
        let (stream, _) = listener.accept()?;
        Self::from_stream(stream, timeout)
    }

    /// Connects, retrying until `timeout` so the peers may start in any order.
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, LinkError> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(&addr) {
                Ok(s) => return Self::from_stream(s, timeout),
                Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), LinkError> {
        let bytes = encode_frame_with_limit(frame, self.max_payload)?;
        self.stream.write_all(&bytes)?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Frame, LinkError> {
        let mut header = [0u8; HEADER_LEN];
        self.stream.read_exact(&mut header)?;
        let len = payload_len(&header);
        if len > self.max_payload {
            return Err(FrameError::Oversize { len, max: self.max_payload }.into());
        }
        let mut bytes = header.to_vec();
        bytes.resize(HEADER_LEN + len + 4, 0);
        self.stream.read_exact(&mut bytes[HEADER_LEN..])?;
        Ok(decode_frame_with_limit(&bytes, self.max_payload)?)
    }
}

/// Re-feeds a recorded transcript to a fresh state machine: receives come
/// from the recorded incoming frames, and every send must equal the recorded
/// outgoing frame at the same position.
pub struct ReplayTransport {
    incoming: VecDeque<Frame>,
    outgoing: VecDeque<Frame>,
}

impl ReplayTransport {
    pub fn new(transcript: Vec<(Direction, Frame)>) -> Self {
        let mut incoming = VecDeque::new();
        let mut outgoing = VecDeque::new();
        for (d, f) in transcript {
            match d {
                Direction::Received => incoming.push_back(f),
                Direction::Sent => outgoing.push_back(f),
            }
        }
        Self { incoming, outgoing }
    }

    /// Outgoing frames the replayed party has not produced yet.
    pub fn remaining_sends(&self) -> usize {
        self.outgoing.len()
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), LinkError> {
        match self.outgoing.pop_front() {
            Some(expected) if expected == *frame => Ok(()),
            Some(expected) => Err(LinkError::Io(format!(
                "replay diverged at {} #{}: recorded {} #{}",
                frame.msg_type.name(),
                frame.sequence,
                expected.msg_type.name(),
                expected.sequence
            ))),
            None => Err(LinkError::Io("replay has no more recorded sends".into())),
        }
    }

    fn receive(&mut self) -> Result<Frame, LinkError> {
        self.incoming.pop_front().ok_or(LinkError::Disconnected)
    }
}
