use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A binary mask, row-major, one byte (0 or 1) per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(
                "mask",
                format!(
                    "{height}x{width} mask needs {} values, got {}",
                    height * width,
                    bits.len()
                ),
            ));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask", "mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Pixels with probability `>= threshold` become foreground.
    pub fn from_probabilities(probs: &Tensor, threshold: f64) -> Result<Self> {
        let (_, h, w) = match *probs.shape() {
            [1, h, w] => (1, h, w),
            _ => {
                return Err(Error::invalid(
                    "threshold",
                    format!("expected a [1, H, W] map, got {:?}", probs.shape()),
                ))
            }
        };
        let bits = probs
            .data()
            .iter()
            .map(|&p| u8::from(p >= threshold))
            .collect();
        Ok(Self {
            height: h,
            width: w,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Mean `(row, col)` of the foreground, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sy, mut sx) = (0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    n += 1;
                    sy += y;
                    sx += x;
                }
            }
        }
        (n > 0).then(|| (sy as f64 / n as f64, sx as f64 / n as f64))
    }

    /// Inclusive `(top, left, bottom, right)` of the foreground.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bbox = Some(match bbox {
                        None => (y, x, y, x),
                        Some((t, l, b, r)) => (t.min(y), l.min(x), b.max(y), r.max(x)),
                    });
                }
            }
        }
        bbox
    }

    /// `[1, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.height, self.width],
            self.bits.iter().map(|&b| f64::from(b)).collect(),
        )
        .expect("mask dims are positive")
    }

    /// `(|self ∩ other|, |self ∪ other|)`.
    pub fn overlap(&self, other: &Mask) -> Result<(u64, u64)> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                op: "mask overlap",
                lhs: vec![self.height, self.width],
                rhs: vec![other.height, other.width],
            });
        }
        let (mut inter, mut union) = (0u64, 0u64);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += u64::from(a & b);
            union += u64::from(a | b);
        }
        Ok((inter, union))
    }
}
