//! Frames and the two pixel operations every later stage relies on:
//! BT.601 grayscale conversion and half-pixel-centred bilinear resizing.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("frame must have 1 or 3 channels, got {0}")]
    WrongChannelCount(u8),
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
}

/// A single image, row-major, interleaved when it has three channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pixels: Vec<u8>,
    width: u32,
    height: u32,
    channels: u8,
    timestamp_ms: u64,
}

impl Frame {
    pub fn new(
        pixels: Vec<u8>,
        width: u32,
        height: u32,
        channels: u8,
        timestamp_ms: u64,
    ) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::ZeroDimension { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(FrameError::WrongChannelCount(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(FrameError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            pixels,
            width,
            height,
            channels,
            timestamp_ms,
        })
    }

    /// Grayscale frame filled with one value.
    pub fn uniform(width: u32, height: u32, value: u8, timestamp_ms: u64) -> Result<Self, FrameError> {
        Self::new(
            vec![value; width as usize * height as usize],
            width,
            height,
            1,
            timestamp_ms,
        )
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn with_timestamp(mut self, timestamp_ms: u64) -> Self {
        self.timestamp_ms = timestamp_ms;
        self
    }

    /// Intensity at (x, y) of a grayscale frame.
    #[inline]
    pub fn gray_at(&self, x: u32, y: u32) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Converts a 3-channel frame to intensity with the BT.601 luma weights.
    ///
    /// Computed in integer thousandths so `round(0.299R + 0.587G + 0.114B)`
    /// is exact (halves round up).
    pub fn to_grayscale(&self) -> Result<Frame, FrameError> {
        if self.channels != 3 {
            return Err(FrameError::WrongChannelCount(self.channels));
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|rgb| {
                let y = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
                ((y + 500) / 1000).min(255) as u8
            })
            .collect();
        Ok(Frame {
            pixels,
            width: self.width,
            height: self.height,
            channels: 1,
            timestamp_ms: self.timestamp_ms,
        })
    }

    /// Returns the frame itself when already grayscale, otherwise converts.
    pub fn into_grayscale(self) -> Frame {
        if self.channels == 1 {
            self
        } else {
            // channels is 1 or 3 by construction
            self.to_grayscale().expect("3-channel frame")
        }
    }

    /// Bilinear resize with half-pixel centre alignment; edge samples clamp.
    pub fn resize_bilinear(&self, out_w: u32, out_h: u32) -> Result<Frame, FrameError> {
        if out_w == 0 || out_h == 0 {
            return Err(FrameError::ZeroDimension {
                width: out_w,
                height: out_h,
            });
        }
        if out_w == self.width && out_h == self.height {
            return Ok(self.clone());
        }
        let ch = self.channels as usize;
        let xs = sample_axis(self.width, out_w);
        let ys = sample_axis(self.height, out_h);
        let stride = self.width as usize * ch;
        let mut pixels = Vec::with_capacity(out_w as usize * out_h as usize * ch);
        for &(y0, y1, fy) in &ys {
            let row0 = &self.pixels[y0 * stride..(y0 + 1) * stride];
            let row1 = &self.pixels[y1 * stride..(y1 + 1) * stride];
            for &(x0, x1, fx) in &xs {
                for c in 0..ch {
                    let a = row0[x0 * ch + c] as f32;
                    let b = row0[x1 * ch + c] as f32;
                    let d = row1[x0 * ch + c] as f32;
                    let e = row1[x1 * ch + c] as f32;
                    let top = a + (b - a) * fx;
                    let bottom = d + (e - d) * fx;
                    let v = top + (bottom - top) * fy;
                    pixels.push(libm::roundf(v).clamp(0.0, 255.0) as u8);
                }
            }
        }
        Ok(Frame {
            pixels,
            width: out_w,
            height: out_h,
            channels: self.channels,
            timestamp_ms: self.timestamp_ms,
        })
    }

    /// Copies out the rectangle `(x, y, w, h)`; caller guarantees bounds.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Option<Frame> {
        if w == 0 || h == 0 || x.checked_add(w)? > self.width || y.checked_add(h)? > self.height {
            return None;
        }
        let ch = self.channels as usize;
        let stride = self.width as usize * ch;
        let mut pixels = Vec::with_capacity(w as usize * h as usize * ch);
        for row in y as usize..(y + h) as usize {
            let start = row * stride + x as usize * ch;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize * ch]);
        }
        Some(Frame {
            pixels,
            width: w,
            height: h,
            channels: self.channels,
            timestamp_ms: self.timestamp_ms,
        })
    }
}

/// Source sample positions for each output coordinate along one axis:
/// (left index, right index, right weight).
fn sample_axis(in_len: u32, out_len: u32) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    let last = in_len as usize - 1;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, last as f32);
            let i0 = libm::floorf(src) as usize;
            let i1 = (i0 + 1).min(last);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}
