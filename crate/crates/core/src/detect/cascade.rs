use alloc::string::String;
use alloc::vec::Vec;

use super::integral::IntegralImage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CascadeError {
    #[error("cascade markup could not be parsed: {0}")]
    Parse(String),
    #[error("cascade structure invalid: {0}")]
    Schema(String),
    #[error("rectangle ({x},{y},{w},{h}) lies outside the {window_w}x{window_h} window")]
    Bounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        window_w: u32,
        window_h: u32,
    },
    #[error("window at ({x},{y}) of size {w}x{h} extends past the {image_w}x{image_h} image")]
    WindowOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        image_w: u32,
        image_h: u32,
    },
}

/// One weighted rectangle of a Haar feature, in base-window coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

/// Decision stump over one Haar feature: a normalised feature value below
/// `node_threshold` contributes `fail_value`, otherwise `pass_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub rects: Vec<HaarRect>,
    pub node_threshold: f64,
    pub pass_value: f64,
    pub fail_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub threshold: f64,
    pub weak_classifiers: Vec<WeakClassifier>,
}

/// A validated boosted cascade. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    window_w: u32,
    window_h: u32,
    stages: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowResult {
    pub pass: bool,
    /// Margin of the last stage evaluated (`stage sum - stage threshold`).
    /// Zero-variance windows are rejected before any stage and score
    /// negative infinity.
    pub score: f64,
}

impl CascadeModel {
    pub fn new(window_w: u32, window_h: u32, stages: Vec<Stage>) -> Result<Self, CascadeError> {
        if window_w == 0 || window_h == 0 {
            return Err(CascadeError::Schema("base window must be non-empty".into()));
        }
        if stages.is_empty() {
            return Err(CascadeError::Schema("cascade has no stages".into()));
        }
        for (si, stage) in stages.iter().enumerate() {
            if stage.weak_classifiers.is_empty() {
                return Err(CascadeError::Schema(alloc::format!(
                    "stage {si} has no weak classifiers"
                )));
            }
            for weak in &stage.weak_classifiers {
                if weak.rects.is_empty() {
                    return Err(CascadeError::Schema(alloc::format!(
                        "stage {si} has a feature without rectangles"
                    )));
                }
                for r in &weak.rects {
                    let inside = r.w > 0
                        && r.h > 0
                        && r.x as u64 + r.w as u64 <= window_w as u64
                        && r.y as u64 + r.h as u64 <= window_h as u64;
                    if !inside {
                        return Err(CascadeError::Bounds {
                            x: r.x,
                            y: r.y,
                            w: r.w,
                            h: r.h,
                            window_w,
                            window_h,
                        });
                    }
                }
            }
        }
        Ok(Self {
            window_w,
            window_h,
            stages,
        })
    }

    pub fn window_w(&self) -> u32 {
        self.window_w
    }

    pub fn window_h(&self) -> u32 {
        self.window_h
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Window size in pixels at `scale`.
    pub fn scaled_window(&self, scale: f64) -> (u32, u32) {
        (
            (libm::round(self.window_w as f64 * scale) as u32).max(1),
            (libm::round(self.window_h as f64 * scale) as u32).max(1),
        )
    }

    /// Runs the cascade on the window whose top-left corner is `(x, y)`.
    ///
    /// Feature values are `sum(weight * rect_sum) / (area * stddev)` over the
    /// scaled window, so they are invariant to brightness offset and contrast.
    pub fn evaluate_window(
        &self,
        ii: &IntegralImage,
        x: u32,
        y: u32,
        scale: f64,
    ) -> Result<WindowResult, CascadeError> {
        let (w, h) = self.scaled_window(scale);
        if x as u64 + w as u64 > ii.width() as u64 || y as u64 + h as u64 > ii.height() as u64 {
            return Err(CascadeError::WindowOutOfBounds {
                x,
                y,
                w,
                h,
                image_w: ii.width(),
                image_h: ii.height(),
            });
        }
        let sum = ii.rect_sum(x, y, x + w, y + h);
        let sq = ii.rect_square_sum(x, y, x + w, y + h);
        let Some(norm) = variance_norm(w as u64 * h as u64, sum, sq) else {
            return Ok(WindowResult {
                pass: false,
                score: f64::NEG_INFINITY,
            });
        };

        let mut margin = 0.0;
        for stage in &self.stages {
            let mut acc = 0.0;
            for weak in &stage.weak_classifiers {
                let mut value = 0.0;
                for (r, weight) in weak.rects.iter().zip(scaled_weights(&weak.rects, scale)) {
                    let (x1, y1, x2, y2) = scale_rect(r, scale);
                    value += weight * ii.rect_sum(x + x1, y + y1, x + x2, y + y2) as f64;
                }
                acc += weak.output(value / norm);
            }
            margin = acc - stage.threshold;
            if acc < stage.threshold {
                return Ok(WindowResult {
                    pass: false,
                    score: margin,
                });
            }
        }
        Ok(WindowResult {
            pass: true,
            score: margin,
        })
    }
}

impl WeakClassifier {
    #[inline]
    pub(crate) fn output(&self, normalized_value: f64) -> f64 {
        if normalized_value < self.node_threshold {
            self.fail_value
        } else {
            self.pass_value
        }
    }
}

/// `sqrt(area * sum_sq - sum^2)`, i.e. `area * stddev`; `None` for a flat window.
#[inline]
pub(crate) fn variance_norm(area: u64, sum: u64, sum_sq: u64) -> Option<f64> {
    let nf = area as u128 * sum_sq as u128 - sum as u128 * sum as u128;
    if nf == 0 {
        None
    } else {
        Some(libm::sqrt(nf as f64))
    }
}

/// Rectangle weights at `scale`. Rounding changes the rectangle areas, so the
/// first weight is recomputed to keep the feature's response to a constant
/// patch at zero (`sum(weight * area) = 0`), as zero-sum Haar features have
/// at the base scale.
pub(crate) fn scaled_weights(rects: &[HaarRect], scale: f64) -> Vec<f64> {
    let mut weights: Vec<f64> = rects.iter().map(|r| r.weight).collect();
    if rects.len() > 1 {
        let area = |r: &HaarRect| {
            let (x1, y1, x2, y2) = scale_rect(r, scale);
            (x2 - x1) as f64 * (y2 - y1) as f64
        };
        let rest: f64 = rects[1..].iter().map(|r| r.weight * area(r)).sum();
        let first = area(&rects[0]);
        if first > 0.0 {
            weights[0] = -rest / first;
        }
    }
    weights
}

/// Scaled half-open rectangle offsets `(x1, y1, x2, y2)` within the window.
/// Edges are rounded independently so adjacent rectangles stay adjacent.
#[inline]
pub(crate) fn scale_rect(r: &HaarRect, scale: f64) -> (u32, u32, u32, u32) {
    let s = |v: u32| libm::round(v as f64 * scale) as u32;
    (s(r.x), s(r.y), s(r.x + r.w), s(r.y + r.h))
}
