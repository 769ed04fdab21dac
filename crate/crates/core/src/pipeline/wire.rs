//! Binary verdict message: `QWD1`, version byte, frame index (u64 LE), ROI
//! bitmask (u16 LE), latched bitmask (u16 LE), label count (u8), then per
//! label roi (u8), class (u8), confidence (f32 LE).

use std::io::Read;

use thiserror::Error;

use super::{FrameVerdict, Label, Occupancy};
use crate::roi::ROI_COUNT;

pub const MAGIC: &[u8; 4] = b"QWD1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const LABEL_LEN: usize = 6;
const USED_BITS: u16 = (1 << ROI_COUNT) - 1;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown version {0}")]
    UnknownVersion(u8),
    #[error("short read: need {needed} bytes, have {got}")]
    ShortRead { needed: usize, got: usize },
    #[error("reserved bits set in {field}: {bits:#06x}")]
    ReservedBits { field: &'static str, bits: u16 },
    #[error("label count {0} exceeds {ROI_COUNT}")]
    TooManyLabels(usize),
    #[error("latched rois {0:#05x} are not occupied")]
    LatchedNotOccupied(u16),
    #[error("label for roi {0} out of range")]
    LabelRoi(usize),
    #[error("duplicate label for roi {0}")]
    DuplicateLabel(usize),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f32),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("occupied roi {0} out of range")]
    OccupiedRoi(usize),
    #[error("stream: {0}")]
    Io(String),
}

fn check_confidence(c: f32) -> Result<(), WireError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(WireError::Confidence(c))
    }
}

/// Serialises a verdict. Fails only for verdicts that have no encoding.
pub fn encode_message(v: &FrameVerdict) -> Result<Vec<u8>, WireError> {
    let (mut roi, mut latched) = (0u16, 0u16);
    for (&i, &o) in &v.occupied {
        if i >= ROI_COUNT {
            return Err(WireError::OccupiedRoi(i));
        }
        roi |= 1 << i;
        if o == Occupancy::Latched {
            latched |= 1 << i;
        }
    }
    if v.labels.len() > ROI_COUNT {
        return Err(WireError::TooManyLabels(v.labels.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + LABEL_LEN * v.labels.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&v.frame_index.to_le_bytes());
    out.extend_from_slice(&roi.to_le_bytes());
    out.extend_from_slice(&latched.to_le_bytes());
    out.push(v.labels.len() as u8);
    for (&i, l) in &v.labels {
        if i >= ROI_COUNT {
            return Err(WireError::LabelRoi(i));
        }
        check_confidence(l.confidence)?;
        out.push(i as u8);
        out.push(l.class_id);
        out.extend_from_slice(&l.confidence.to_le_bytes());
    }
    Ok(out)
}

/// Validates a header and returns the number of label bytes that follow.
pub fn parse_header(h: &[u8]) -> Result<usize, WireError> {
    if h.len() < HEADER_LEN {
        return Err(WireError::ShortRead {
            needed: HEADER_LEN,
            got: h.len(),
        });
    }
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::UnknownVersion(h[4]));
    }
    let roi = u16::from_le_bytes([h[13], h[14]]);
    let latched = u16::from_le_bytes([h[15], h[16]]);
    for (field, bits) in [("roi_bitmask", roi), ("latched_bitmask", latched)] {
        if bits & !USED_BITS != 0 {
            return Err(WireError::ReservedBits {
                field,
                bits: bits & !USED_BITS,
            });
        }
    }
    if latched & !roi != 0 {
        return Err(WireError::LatchedNotOccupied(latched & !roi));
    }
    let n = h[17] as usize;
    if n > ROI_COUNT {
        return Err(WireError::TooManyLabels(n));
    }
    Ok(n * LABEL_LEN)
}

/// Parses exactly one message occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<FrameVerdict, WireError> {
    let body = parse_header(bytes)?;
    let total = HEADER_LEN + body;
    if bytes.len() < total {
        return Err(WireError::ShortRead {
            needed: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes(bytes.len() - total));
    }
    let frame_index = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let roi = u16::from_le_bytes([bytes[13], bytes[14]]);
    let latched = u16::from_le_bytes([bytes[15], bytes[16]]);
    let mut v = FrameVerdict::empty(frame_index);
    for i in 0..ROI_COUNT {
        if roi & (1 << i) != 0 {
            let o = if latched & (1 << i) != 0 {
                Occupancy::Latched
            } else {
                Occupancy::Moving
            };
            v.occupied.insert(i, o);
        }
    }
    for rec in bytes[HEADER_LEN..].chunks_exact(LABEL_LEN) {
        let i = rec[0] as usize;
        if i >= ROI_COUNT {
            return Err(WireError::LabelRoi(i));
        }
        let confidence = f32::from_le_bytes(rec[2..6].try_into().unwrap());
        check_confidence(confidence)?;
        let label = Label {
            class_id: rec[1],
            confidence,
        };
        if v.labels.insert(i, label).is_some() {
            return Err(WireError::DuplicateLabel(i));
        }
    }
    Ok(v)
}

/// Reads one message from a byte stream: the header first, then the label
/// records it announces. Returns `None` on a clean end of stream.
pub fn read_message(r: &mut impl Read) -> Result<Option<FrameVerdict>, WireError> {
    let mut buf = vec![0u8; HEADER_LEN];
    let got = read_full(r, &mut buf)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        return Err(WireError::ShortRead {
            needed: HEADER_LEN,
            got,
        });
    }
    let body = parse_header(&buf)?;
    buf.resize(HEADER_LEN + body, 0);
    let got = read_full(r, &mut buf[HEADER_LEN..])?;
    if got < body {
        return Err(WireError::ShortRead {
            needed: HEADER_LEN + body,
            got: HEADER_LEN + got,
        });
    }
    decode_message(&buf).map(Some)
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, WireError> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(WireError::Io(e.to_string())),
        }
    }
    Ok(n)
}
