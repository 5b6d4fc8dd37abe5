//! Byte-exact container formats for flattened messages.
//!
//! BBC1 wraps a scalar message, BBC2 a vectorized one. Payload words are
//! r_t bits wide and stored little-endian in `ceil(r_t / 8)` bytes each,
//! head words first, then tail words top-first.

use crate::error::CoderError;
use crate::rans::{Message, Precisions};
use crate::vrans::{FlattenMode, VMessage};

pub const BBC1_MAGIC: &[u8; 4] = b"BBC1";
pub const BBC2_MAGIC: &[u8; 4] = b"BBC2";

fn word_byte_width(r_t: u32) -> usize {
    ((r_t + 7) / 8) as usize
}

fn write_words(out: &mut Vec<u8>, words: &[u64], r_t: u32) {
    let w = word_byte_width(r_t);
    out.extend_from_slice(&(words.len() as u64).to_le_bytes());
    for &word in words {
        out.extend_from_slice(&word.to_le_bytes()[..w]);
    }
}

fn read_words(bytes: &[u8], r_t: u32) -> Result<(Vec<u64>, usize), CoderError> {
    if bytes.len() < 8 {
        return Err(CoderError::Format("truncated word count".into()));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let w = word_byte_width(r_t);
    let need = 8 + count * w;
    if bytes.len() < need {
        return Err(CoderError::Format(format!(
            "payload truncated: need {need} bytes, have {}",
            bytes.len()
        )));
    }
    let mut words = Vec::with_capacity(count);
    for i in 0..count {
        let mut buf = [0u8; 8];
        buf[..w].copy_from_slice(&bytes[8 + i * w..8 + (i + 1) * w]);
        words.push(u64::from_le_bytes(buf));
    }
    Ok((words, need))
}

/// Serialize a scalar message as a BBC1 container.
pub fn write_bbc1(m: &Message) -> Vec<u8> {
    let prec = m.precisions();
    let mut out = Vec::new();
    out.extend_from_slice(BBC1_MAGIC);
    out.push(0x01);
    out.push(prec.r_s as u8);
    out.push(prec.r_t as u8);
    out.push(0x00); // reserved
    write_words(&mut out, &m.flatten(), prec.r_t);
    out
}

/// Parse a BBC1 container. The distribution precision `r` is not part of
/// the wire format; the caller supplies it.
pub fn read_bbc1(bytes: &[u8], r: u32) -> Result<Message, CoderError> {
    let (prec, rest) = read_bbc_header(bytes, BBC1_MAGIC, 0x01, r)?;
    let (words, used) = read_words(rest, prec.r_t)?;
    if used != rest.len() {
        return Err(CoderError::Format("trailing bytes after payload".into()));
    }
    Message::unflatten(&words, prec)
}

fn read_bbc_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    version: u8,
    r: u32,
) -> Result<(Precisions, &'a [u8]), CoderError> {
    if bytes.len() < 8 {
        return Err(CoderError::Format("truncated header".into()));
    }
    if &bytes[..4] != magic {
        return Err(CoderError::Format(format!(
            "bad magic {:02x?}, expected {:?}",
            &bytes[..4],
            std::str::from_utf8(magic).unwrap()
        )));
    }
    if bytes[4] != version {
        return Err(CoderError::Format(format!("unsupported version {}", bytes[4])));
    }
    let prec = Precisions::new(bytes[5] as u32, bytes[6] as u32, r)?;
    Ok((prec, &bytes[8..]))
}

/// Serialize a vectorized message as a BBC2 container.
pub fn write_bbc2(m: &VMessage, mode: FlattenMode) -> Vec<u8> {
    let prec = m.precisions();
    let mut out = Vec::new();
    out.extend_from_slice(BBC2_MAGIC);
    out.push(0x02);
    out.push(prec.r_s as u8);
    out.push(prec.r_t as u8);
    out.push(0x00); // reserved
    out.extend_from_slice(&(m.lanes() as u32).to_le_bytes());
    out.push(mode as u8);
    let words = match mode {
        FlattenMode::Naive => m.flatten_naive(),
        FlattenMode::Benford => m.flatten_benford(),
    };
    write_words(&mut out, &words, prec.r_t);
    out
}

/// Parse a BBC2 container.
pub fn read_bbc2(bytes: &[u8], r: u32) -> Result<VMessage, CoderError> {
    let (prec, rest) = read_bbc_header(bytes, BBC2_MAGIC, 0x02, r)?;
    if rest.len() < 5 {
        return Err(CoderError::Format("truncated BBC2 header".into()));
    }
    let k = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let mode = match rest[4] {
        0 => FlattenMode::Naive,
        1 => FlattenMode::Benford,
        other => {
            return Err(CoderError::Format(format!("unknown flatten mode {other}")))
        }
    };
    let (words, used) = read_words(&rest[5..], prec.r_t)?;
    if used != rest.len() - 5 {
        return Err(CoderError::Format("trailing bytes after payload".into()));
    }
    match mode {
        FlattenMode::Naive => VMessage::unflatten_naive(&words, k, prec),
        FlattenMode::Benford => VMessage::unflatten_benford(&words, k, prec),
    }
}
