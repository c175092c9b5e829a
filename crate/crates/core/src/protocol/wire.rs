//! Length-prefixed framing of the classical channel.
//!
//! Frame: `u32` length, `u8` type, `u64` sequence number, payload. The length
//! counts the type byte, the sequence number and the payload. All integers are
//! big-endian; `f64` values travel as their IEEE-754 bit patterns.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Largest accepted payload.
pub const MAX_PAYLOAD: usize = 16 << 20;
const HEADER: usize = 1 + 8;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed")]
    Closed,
    #[error("frame length {0} out of bounds")]
    BadLength(u64),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed {kind} payload: {reason}")]
    Malformed { kind: &'static str, reason: String },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    TagAnnounce = 2,
    BasisReveal = 3,
    SampleRequest = 4,
    SampleReveal = 5,
    Report = 6,
    Abort = 7,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Hello,
            2 => Self::TagAnnounce,
            3 => Self::BasisReveal,
            4 => Self::SampleRequest,
            5 => Self::SampleReveal,
            6 => Self::Report,
            7 => Self::Abort,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hello => "hello",
            Self::TagAnnounce => "tag_announce",
            Self::BasisReveal => "basis_reveal",
            Self::SampleRequest => "sample_request",
            Self::SampleReveal => "sample_reveal",
            Self::Report => "report",
            Self::Abort => "abort",
        }
    }
}

/// Session parameters both endpoints must agree on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hello {
    pub version: u16,
    /// 0 Alice, 1 Bob
    pub role: u8,
    pub duration_ps: u64,
    pub block_ps: u64,
    pub window_ps: u64,
    /// 0 sample, 1 all
    pub qber_mode: u8,
    pub sample_fraction: f64,
    pub abort_sigma: f64,
}

/// Report fields exchanged for cross-checking. Counts travel with the rates
/// so the aggregate can be recomputed by either side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportPayload {
    /// `u32::MAX` for the session aggregate.
    pub block: u32,
    pub s: f64,
    pub s_err: f64,
    pub qber: f64,
    pub raw_bits: u64,
    pub raw_bps: f64,
    pub i_ab: f64,
    pub i_eve: f64,
    pub secure_fraction: f64,
    pub secure_bps: f64,
    /// 0 accept, 1 abort
    pub verdict: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    /// Bob's tag times and the basis (setting code) of each, in time order.
    TagAnnounce {
        block: u32,
        last: bool,
        tags: Vec<(u64, u8)>,
    },
    /// For every matched pair: Bob's tag index within the block and Alice's
    /// setting code.
    BasisReveal {
        block: u32,
        delay_ps: i64,
        entries: Vec<(u32, u8)>,
    },
    /// Key positions to disclose, strictly increasing.
    SampleRequest { block: u32, positions: Vec<u32> },
    /// Key bits at the requested positions and physical outcome bits of
    /// every test pair.
    SampleReveal {
        block: u32,
        key_bits: Vec<u8>,
        test_outcomes: Vec<u8>,
    },
    Report(ReportPayload),
    Abort { reason: String },
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello(_) => MessageType::Hello,
            Message::TagAnnounce { .. } => MessageType::TagAnnounce,
            Message::BasisReveal { .. } => MessageType::BasisReveal,
            Message::SampleRequest { .. } => MessageType::SampleRequest,
            Message::SampleReveal { .. } => MessageType::SampleReveal,
            Message::Report(_) => MessageType::Report,
            Message::Abort { .. } => MessageType::Abort,
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::Hello(h) => {
                out.extend_from_slice(&h.version.to_be_bytes());
                out.push(h.role);
                put_u64(out, h.duration_ps);
                put_u64(out, h.block_ps);
                put_u64(out, h.window_ps);
                out.push(h.qber_mode);
                put_f64(out, h.sample_fraction);
                put_f64(out, h.abort_sigma);
            }
            Message::TagAnnounce { block, last, tags } => {
                put_u32(out, *block);
                out.push(u8::from(*last));
                put_u32(out, tags.len() as u32);
                for &(t, basis) in tags {
                    put_u64(out, t);
                    out.push(basis);
                }
            }
            Message::BasisReveal {
                block,
                delay_ps,
                entries,
            } => {
                put_u32(out, *block);
                out.extend_from_slice(&delay_ps.to_be_bytes());
                put_u32(out, entries.len() as u32);
                for &(j, setting) in entries {
                    put_u32(out, j);
                    out.push(setting);
                }
            }
            Message::SampleRequest { block, positions } => {
                put_u32(out, *block);
                put_u32(out, positions.len() as u32);
                for &p in positions {
                    put_u32(out, p);
                }
            }
            Message::SampleReveal {
                block,
                key_bits,
                test_outcomes,
            } => {
                put_u32(out, *block);
                put_u32(out, key_bits.len() as u32);
                out.extend_from_slice(key_bits);
                put_u32(out, test_outcomes.len() as u32);
                out.extend_from_slice(test_outcomes);
            }
            Message::Report(r) => {
                put_u32(out, r.block);
                put_f64(out, r.s);
                put_f64(out, r.s_err);
                put_f64(out, r.qber);
                put_u64(out, r.raw_bits);
                put_f64(out, r.raw_bps);
                put_f64(out, r.i_ab);
                put_f64(out, r.i_eve);
                put_f64(out, r.secure_fraction);
                put_f64(out, r.secure_bps);
                out.push(r.verdict);
            }
            Message::Abort { reason } => {
                put_u32(out, reason.len() as u32);
                out.extend_from_slice(reason.as_bytes());
            }
        }
    }

    fn parse_payload(kind: MessageType, payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader {
            buf: payload,
            kind: kind.name(),
        };
        let msg = match kind {
            MessageType::Hello => Message::Hello(Hello {
                version: u16::from_be_bytes(r.array()?),
                role: r.u8()?,
                duration_ps: r.u64()?,
                block_ps: r.u64()?,
                window_ps: r.u64()?,
                qber_mode: r.u8()?,
                sample_fraction: r.f64()?,
                abort_sigma: r.f64()?,
            }),
            MessageType::TagAnnounce => {
                let block = r.u32()?;
                let last = r.bool()?;
                let n = r.count(9)?;
                let mut tags = Vec::with_capacity(n);
                for _ in 0..n {
                    tags.push((r.u64()?, r.u8()?));
                }
                Message::TagAnnounce { block, last, tags }
            }
            MessageType::BasisReveal => {
                let block = r.u32()?;
                let delay_ps = i64::from_be_bytes(r.array()?);
                let n = r.count(5)?;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    entries.push((r.u32()?, r.u8()?));
                }
                Message::BasisReveal {
                    block,
                    delay_ps,
                    entries,
                }
            }
            MessageType::SampleRequest => {
                let block = r.u32()?;
                let n = r.count(4)?;
                let mut positions = Vec::with_capacity(n);
                for _ in 0..n {
                    positions.push(r.u32()?);
                }
                Message::SampleRequest { block, positions }
            }
            MessageType::SampleReveal => {
                let block = r.u32()?;
                let n = r.count(1)?;
                let key_bits = r.bytes(n)?.to_vec();
                let m = r.count(1)?;
                let test_outcomes = r.bytes(m)?.to_vec();
                Message::SampleReveal {
                    block,
                    key_bits,
                    test_outcomes,
                }
            }
            MessageType::Report => Message::Report(ReportPayload {
                block: r.u32()?,
                s: r.f64()?,
                s_err: r.f64()?,
                qber: r.f64()?,
                raw_bits: r.u64()?,
                raw_bps: r.f64()?,
                i_ab: r.f64()?,
                i_eve: r.f64()?,
                secure_fraction: r.f64()?,
                secure_bps: r.f64()?,
                verdict: r.u8()?,
            }),
            MessageType::Abort => {
                let n = r.count(1)?;
                let reason = String::from_utf8(r.bytes(n)?.to_vec())
                    .map_err(|_| r.malformed("reason is not UTF-8"))?;
                Message::Abort { reason }
            }
        };
        if !r.buf.is_empty() {
            return Err(r.malformed(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(msg)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    put_u64(out, v.to_bits());
}

struct Reader<'a> {
    buf: &'a [u8],
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: impl Into<String>) -> WireError {
        WireError::Malformed {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(self.malformed("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.bytes(1)?[0])
    }

    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.malformed(format!("flag byte {v}"))),
        }
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Element count that must fit in the remaining bytes.
    fn count(&mut self, elem_size: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() {
            return Err(self.malformed(format!("count {n} exceeds payload")));
        }
        Ok(n)
    }
}

/// Serializes one frame.
pub fn encode_frame(seq: u64, msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut out = vec![0u8; 4];
    out.push(msg.kind() as u8);
    put_u64(&mut out, seq);
    msg.write_payload(&mut out);
    let payload = out.len() - 4 - HEADER;
    if payload > MAX_PAYLOAD {
        return Err(WireError::TooLarge(payload));
    }
    let len = (out.len() - 4) as u32;
    out[..4].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

/// Parses exactly one frame from `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<(u64, Message), WireError> {
    let mut cursor = bytes;
    let frame = read_frame(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(WireError::BadLength(bytes.len() as u64));
    }
    Ok(frame)
}

pub fn write_frame<W: Write>(mut w: W, seq: u64, msg: &Message) -> Result<(), WireError> {
    let frame = encode_frame(seq, msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. The length is checked against the limit before the
/// payload buffer is allocated. A clean end of stream before the first byte
/// is [`WireError::Closed`]; anything shorter than the declared length is an
/// I/O error.
pub fn read_frame<R: Read>(mut r: R) -> Result<(u64, Message), WireError> {
    let mut len = [0u8; 4];
    match r.read(&mut len[..1]) {
        Ok(0) => return Err(WireError::Closed),
        Ok(_) => {}
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut len[1..])?;
    let len = u32::from_be_bytes(len) as usize;
    if len < HEADER || len - HEADER > MAX_PAYLOAD {
        return Err(WireError::BadLength(len as u64));
    }
    let mut head = [0u8; HEADER];
    r.read_exact(&mut head)?;
    let kind = MessageType::from_u8(head[0]).ok_or(WireError::UnknownType(head[0]))?;
    let seq = u64::from_be_bytes(head[1..].try_into().expect("8 bytes"));
    let mut payload = vec![0u8; len - HEADER];
    r.read_exact(&mut payload)?;
    Ok((seq, Message::parse_payload(kind, &payload)?))
}
