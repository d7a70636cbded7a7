//! Binary PGM (P5): 8-bit masks (0 / 255) and 16-bit big-endian label maps.

use crate::error::{Error, Result};
use crate::geometry::{InstanceMask, LabelMap};

const KIND: &str = "PGM";

fn header(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn encode_mask(mask: &InstanceMask) -> Vec<u8> {
    let (w, h) = mask.dims();
    let mut out = header(w, h, 255);
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Any nonzero sample counts as set.
pub fn decode_mask(bytes: &[u8]) -> Result<InstanceMask> {
    let (w, h, maxval, data) = parse(bytes)?;
    if maxval > 255 {
        return Err(Error::format(KIND, format!("mask maxval {maxval} is not 8-bit")));
    }
    InstanceMask::from_bits(w, h, data.iter().map(|&v| v != 0).collect())
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = header(labels.width(), labels.height(), 65535);
    for &id in labels.ids() {
        out.extend_from_slice(&id.to_be_bytes());
    }
    out
}

/// Reads 16-bit maps, and 8-bit ones when `maxval < 256`.
pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let (w, h, maxval, data) = parse(bytes)?;
    let ids = if maxval < 256 {
        data.iter().map(|&v| v as u16).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    LabelMap::from_ids(w, h, ids)
}

/// `(width, height, maxval, samples)`, with the sample slice checked to
/// be exactly as long as the header requires.
fn parse(bytes: &[u8]) -> Result<(usize, usize, u32, &[u8])> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(KIND, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(KIND, "bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(KIND, "header not terminated by whitespace"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(KIND, format!("invalid header {w}x{h} maxval {maxval}")));
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = (w * h) as usize * sample;
    let data = &bytes[pos..];
    if data.len() != need {
        return Err(Error::format(KIND, format!("expected {need} sample bytes, found {}", data.len())));
    }
    Ok((w as usize, h as usize, maxval as u32, data))
}
