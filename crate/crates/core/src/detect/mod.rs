//! Haar-cascade face detection: integral images, stage-wise window
//! evaluation, multi-scale scanning and rectangle grouping.

mod cascade;
mod group;
mod integral;
mod scan;

pub use cascade::{CascadeError, CascadeModel, HaarRect, Stage, WeakClassifier, WindowResult};
pub use group::{group_boxes, iou};
pub use integral::IntegralImage;
pub use scan::{detect_multiscale, largest_face, scale_schedule, DetectParams};

use serde::{Deserialize, Serialize};

/// Axis-aligned detection rectangle in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub neighbors: u32,
    pub score: f64,
}

impl FaceBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }
}
