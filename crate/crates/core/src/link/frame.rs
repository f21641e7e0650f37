//! Wire format, all integers little-endian:
//!
//! ```text
//! magic "QKD1" (4) | msg_type (1) | session_id (8) | sequence (8)
//! | payload length (4) | payload | CRC32 of everything before it (4)
//! ```

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"QKD1";
pub const HEADER_LEN: usize = 4 + 1 + 8 + 8 + 4;
pub const TRAILER_LEN: usize = 4;
/// Size of a frame with an empty payload.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + TRAILER_LEN;
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    BasisAnnounce = 1,
    SiftIndices = 2,
    QberSample = 3,
    QberValue = 4,
    Syndrome = 5,
    Retry = 6,
    ToeplitzSeed = 7,
    VerifyHash = 8,
    Confirm = 9,
    Abort = 10,
    /// Simulated optical channel: Alice's emitted pulse states.
    PhotonBlock = 11,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::BasisAnnounce,
        MsgType::SiftIndices,
        MsgType::QberSample,
        MsgType::QberValue,
        MsgType::Syndrome,
        MsgType::Retry,
        MsgType::ToeplitzSeed,
        MsgType::VerifyHash,
        MsgType::Confirm,
        MsgType::Abort,
        MsgType::PhotonBlock,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::BasisAnnounce => "BASIS_ANNOUNCE",
            MsgType::SiftIndices => "SIFT_INDICES",
            MsgType::QberSample => "QBER_SAMPLE",
            MsgType::QberValue => "QBER_VALUE",
            MsgType::Syndrome => "SYNDROME",
            MsgType::Retry => "RETRY",
            MsgType::ToeplitzSeed => "TOEPLITZ_SEED",
            MsgType::VerifyHash => "VERIFY_HASH",
            MsgType::Confirm => "CONFIRM",
            MsgType::Abort => "ABORT",
            MsgType::PhotonBlock => "PHOTON_BLOCK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session_id: u64,
    pub sequence: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("crc mismatch: frame says {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload of {len} bytes exceeds limit {max}")]
    Oversize { len: usize, max: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
}

pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, FrameError> {
    encode_frame_with_limit(f, DEFAULT_MAX_PAYLOAD)
}

pub fn encode_frame_with_limit(f: &Frame, max_payload: usize) -> Result<Vec<u8>, FrameError> {
    if f.payload.len() > max_payload || f.payload.len() > u32::MAX as usize {
        return Err(FrameError::Oversize { len: f.payload.len(), max: max_payload });
    }
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + f.payload.len());
    out.extend_from_slice(MAGIC);
    out.push(f.msg_type as u8);
    out.extend_from_slice(&f.session_id.to_le_bytes());
    out.extend_from_slice(&f.sequence.to_le_bytes());
    out.extend_from_slice(&(f.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&f.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Payload length announced by a complete header.
pub fn payload_len(header: &[u8; HEADER_LEN]) -> usize {
    u32::from_le_bytes(header[21..25].try_into().expect("4 bytes")) as usize
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    decode_frame_with_limit(bytes, DEFAULT_MAX_PAYLOAD)
}

pub fn decode_frame_with_limit(bytes: &[u8], max_payload: usize) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { needed: MIN_FRAME_LEN, have: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let len = payload_len(bytes[..HEADER_LEN].try_into().expect("header"));
    if len > max_payload {
        return Err(FrameError::Oversize { len, max: max_payload });
    }
    let total = MIN_FRAME_LEN + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated { needed: total, have: bytes.len() });
    }
    if bytes.len() > total {
        return Err(FrameError::TrailingBytes(bytes.len() - total));
    }
    let body = &bytes[..total - TRAILER_LEN];
    let stored = u32::from_le_bytes(bytes[total - TRAILER_LEN..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FrameError::BadCrc { stored, computed });
    }
    let msg_type = MsgType::from_u8(bytes[4]).ok_or(FrameError::UnknownType(bytes[4]))?;
    Ok(Frame {
        msg_type,
        session_id: u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")),
        sequence: u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")),
        payload: bytes[HEADER_LEN..total - TRAILER_LEN].to_vec(),
    })
}
