use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::cascade::{scale_rect, scaled_weights, variance_norm, CascadeModel};
use super::group::group_boxes;
use super::integral::IntegralImage;
use super::FaceBox;
use crate::frame::Frame;

/// Multi-scale scanning parameters.
///
/// Window scales are `min_size / window_w * scale_factor^k` for
/// `k = 0, 1, ...` while the scaled window fits the frame. At each scale
/// windows are placed on a grid with stride
/// `max(1, round(step * scale / first_scale))`, so the stride grows in
/// proportion to the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: u32,
    pub min_size: u32,
    pub step: u32,
    /// Relative edge tolerance used when grouping raw hits.
    pub group_eps: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_size: 48,
            step: 2,
            group_eps: 0.2,
        }
    }
}

impl DetectParams {
    pub fn validate(&self, model: &CascadeModel) -> Result<(), &'static str> {
        if !(self.scale_factor > 1.0 && self.scale_factor <= 2.0) {
            return Err("scale_factor must lie in (1, 2]");
        }
        if self.min_size < model.window_w().max(model.window_h()) {
            return Err("min_size must be at least the cascade window size");
        }
        if self.step == 0 {
            return Err("step must be positive");
        }
        if self.group_eps.is_nan() || self.group_eps < 0.0 {
            return Err("group_eps must be non-negative");
        }
        Ok(())
    }

    fn first_scale(&self, model: &CascadeModel) -> f64 {
        self.min_size.max(model.window_w()) as f64 / model.window_w() as f64
    }

    fn stride(&self, model: &CascadeModel, scale: f64) -> u32 {
        (libm::round(self.step as f64 * scale / self.first_scale(model)) as u32).max(1)
    }
}

/// `(scale, stride)` pairs scanned on a `width x height` frame.
pub fn scale_schedule(model: &CascadeModel, width: u32, height: u32, params: &DetectParams) -> Vec<(f64, u32)> {
    let mut out = Vec::new();
    if params.validate(model).is_err() {
        return out;
    }
    let first = params.first_scale(model);
    for k in 0.. {
        let scale = first * libm::pow(params.scale_factor, k as f64);
        let (w, h) = model.scaled_window(scale);
        if w > width || h > height {
            break;
        }
        out.push((scale, params.stride(model, scale)));
    }
    out
}

/// Flat-offset form of one weak classifier at a fixed scale.
struct ScaledWeak {
    rects: Vec<([usize; 4], f64)>,
    node_threshold: f64,
    pass_value: f64,
    fail_value: f64,
}

struct ScaledStage {
    threshold: f64,
    weak: Vec<ScaledWeak>,
}

/// The cascade with every rectangle pre-scaled and turned into offsets into
/// the integral tables, so each window costs only table reads.
struct ScaledCascade {
    w: u32,
    h: u32,
    corners: [usize; 4],
    stages: Vec<ScaledStage>,
}

impl ScaledCascade {
    fn new(model: &CascadeModel, scale: f64, table_stride: usize) -> Self {
        let (w, h) = model.scaled_window(scale);
        let offsets = |x1: u32, y1: u32, x2: u32, y2: u32| {
            [
                y2 as usize * table_stride + x2 as usize,
                y1 as usize * table_stride + x1 as usize,
                y1 as usize * table_stride + x2 as usize,
                y2 as usize * table_stride + x1 as usize,
            ]
        };
        let stages = model
            .stages()
            .iter()
            .map(|s| ScaledStage {
                threshold: s.threshold,
                weak: s
                    .weak_classifiers
                    .iter()
                    .map(|wc| ScaledWeak {
                        rects: wc
                            .rects
                            .iter()
                            .zip(scaled_weights(&wc.rects, scale))
                            .map(|(r, weight)| {
                                let (x1, y1, x2, y2) = scale_rect(r, scale);
                                (offsets(x1, y1, x2, y2), weight)
                            })
                            .collect(),
                        node_threshold: wc.node_threshold,
                        pass_value: wc.pass_value,
                        fail_value: wc.fail_value,
                    })
                    .collect(),
            })
            .collect();
        Self {
            w,
            h,
            corners: offsets(0, 0, w, h),
            stages,
        }
    }

    #[inline]
    fn lookup(table: &[u64], base: usize, o: &[usize; 4]) -> u64 {
        table[base + o[0]] + table[base + o[1]] - table[base + o[2]] - table[base + o[3]]
    }

    /// Stage margin of the final stage when the window passes.
    fn run(&self, sums: &[u64], squares: &[u64], base: usize) -> Option<f64> {
        let sum = Self::lookup(sums, base, &self.corners);
        let sq = Self::lookup(squares, base, &self.corners);
        let norm = variance_norm(self.w as u64 * self.h as u64, sum, sq)?;
        let mut margin = 0.0;
        for stage in &self.stages {
            let mut acc = 0.0;
            for wk in &stage.weak {
                let mut value = 0.0;
                for (o, weight) in &wk.rects {
                    value += weight * Self::lookup(sums, base, o) as f64;
                }
                acc += if value / norm < wk.node_threshold {
                    wk.fail_value
                } else {
                    wk.pass_value
                };
            }
            if acc < stage.threshold {
                return None;
            }
            margin = acc - stage.threshold;
        }
        Some(margin)
    }
}

/// Scans all scales, groups the raw hits and returns boxes sorted by
/// descending neighbour count, then descending score.
pub fn detect_multiscale(model: &CascadeModel, frame: &Frame, params: &DetectParams) -> Vec<FaceBox> {
    let ii = IntegralImage::new(frame);
    let (width, height) = (ii.width(), ii.height());
    let table_stride = width as usize + 1;
    let mut raw = Vec::new();
    for (scale, stride) in scale_schedule(model, width, height, params) {
        let sc = ScaledCascade::new(model, scale, table_stride);
        let mut y = 0;
        while y + sc.h <= height {
            let mut x = 0;
            while x + sc.w <= width {
                let base = y as usize * table_stride + x as usize;
                if let Some(score) = sc.run(ii.sums(), ii.squares(), base) {
                    raw.push(FaceBox {
                        x,
                        y,
                        w: sc.w,
                        h: sc.h,
                        neighbors: 0,
                        score,
                    });
                }
                x += stride;
            }
            y += stride;
        }
    }
    let mut boxes = group_boxes(&raw, params.min_neighbors, params.group_eps);
    boxes.sort_by(|a, b| {
        b.neighbors
            .cmp(&a.neighbors)
            .then(b.score.partial_cmp(&a.score).unwrap_or(core::cmp::Ordering::Equal))
    });
    boxes
}

/// The box forwarded downstream when several faces pass: largest area,
/// earliest in ranking order on ties.
pub fn largest_face(boxes: &[FaceBox]) -> Option<FaceBox> {
    boxes
        .iter()
        .copied()
        .reduce(|best, b| if b.area() > best.area() { b } else { best })
}
