//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::io::Write;

use mirror_core::frame::{Frame, FrameError};

#[derive(Debug, thiserror::Error)]
pub enum PnmError {
    #[error("not a binary PGM/PPM image (magic {0:?})")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("only 8-bit images are supported (maxval {0})")]
    MaxVal(u32),
    #[error("pixel data truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Parses one image from the start of `bytes` and returns it together with
/// the number of bytes consumed, so concatenated images can be walked.
pub fn decode(bytes: &[u8], timestamp_ms: u64) -> Result<(Frame, usize), PnmError> {
    if bytes.len() < 2 {
        return Err(PnmError::BadMagic(String::from_utf8_lossy(bytes).into_owned()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1u8,
        b"P6" => 3u8,
        other => return Err(PnmError::BadMagic(String::from_utf8_lossy(other).into_owned())),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        *field = header_number(bytes, &mut pos)?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::Header("missing separator after maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PnmError::MaxVal(maxval));
    }
    let needed = width as usize * height as usize * channels as usize;
    let available = bytes.len() - pos;
    if available < needed {
        return Err(PnmError::Truncated { needed, available });
    }
    let pixels = bytes[pos..pos + needed].to_vec();
    let frame = Frame::new(pixels, width, height, channels, timestamp_ms)?;
    Ok((frame, pos + needed))
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<u32, PnmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            Some(_) => return Err(PnmError::Header("unexpected byte")),
            None => return Err(PnmError::Header("ends early")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PnmError::Header("number out of range"))
}

/// Encodes a frame as P5 (one channel) or P6 (three channels).
pub fn encode(frame: &Frame) -> Vec<u8> {
    let magic = if frame.channels() == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(frame.pixels().len() + 20);
    write!(out, "{magic}\n{} {}\n255\n", frame.width(), frame.height()).expect("writing to a Vec");
    out.extend_from_slice(frame.pixels());
    out
}
