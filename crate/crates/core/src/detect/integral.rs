use alloc::vec;
use alloc::vec::Vec;

use crate::frame::Frame;

/// Summed-area tables of a grayscale frame: plain sums and sums of squares,
/// each `(width + 1) x (height + 1)` with a zero first row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sums: Vec<u64>,
    squares: Vec<u64>,
}

impl IntegralImage {
    /// Builds both tables. A 3-channel frame is converted to intensity first.
    pub fn new(frame: &Frame) -> Self {
        let gray;
        let frame = if frame.channels() == 1 {
            frame
        } else {
            gray = frame.clone().into_grayscale();
            &gray
        };
        let w = frame.width() as usize;
        let h = frame.height() as usize;
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        let mut squares = vec![0u64; stride * (h + 1)];
        let px = frame.pixels();
        for y in 0..h {
            let mut row_sum = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = px[y * w + x] as u64;
                row_sum += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sums[i] = sums[i - stride] + row_sum;
                squares[i] = squares[i - stride] + row_sq;
            }
        }
        Self {
            width: frame.width(),
            height: frame.height(),
            sums,
            squares,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Cumulative sum of all pixels strictly above and left of `(x, y)`.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u64 {
        self.sums[y as usize * (self.width as usize + 1) + x as usize]
    }

    #[inline]
    pub fn square_at(&self, x: u32, y: u32) -> u64 {
        self.squares[y as usize * (self.width as usize + 1) + x as usize]
    }

    /// Sum over the half-open rectangle `[x1, x2) x [y1, y2)` in four lookups.
    #[inline]
    pub fn rect_sum(&self, x1: u32, y1: u32, x2: u32, y2: u32) -> u64 {
        self.at(x2, y2) + self.at(x1, y1) - self.at(x2, y1) - self.at(x1, y2)
    }

    #[inline]
    pub fn rect_square_sum(&self, x1: u32, y1: u32, x2: u32, y2: u32) -> u64 {
        self.square_at(x2, y2) + self.square_at(x1, y1) - self.square_at(x2, y1) - self.square_at(x1, y2)
    }

    pub(crate) fn sums(&self) -> &[u64] {
        &self.sums
    }

    pub(crate) fn squares(&self) -> &[u64] {
        &self.squares
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(pixels: Vec<u8>, w: u32, h: u32) -> Frame {
        Frame::new(pixels, w, h, 1, 0).unwrap()
    }

    #[test]
    fn single_pixel() {
        let ii = IntegralImage::new(&gray(vec![5], 1, 1));
        assert_eq!(ii.at(1, 1), 5);
        assert_eq!((ii.at(0, 0), ii.at(1, 0), ii.at(0, 1)), (0, 0, 0));
    }

    #[test]
    fn two_by_two() {
        let ii = IntegralImage::new(&gray(vec![1, 2, 3, 4], 2, 2));
        assert_eq!([ii.at(1, 1), ii.at(2, 1), ii.at(1, 2), ii.at(2, 2)], [1, 3, 4, 10]);
        assert_eq!(ii.rect_sum(1, 1, 2, 2), 4);
        assert_eq!(ii.rect_square_sum(0, 0, 2, 2), 1 + 4 + 9 + 16);
    }

    #[test]
    fn all_zero() {
        let ii = IntegralImage::new(&Frame::uniform(5, 3, 0, 0).unwrap());
        assert!(ii.sums().iter().all(|&s| s == 0));
    }
}
