//! 2-D image and mask buffers shared across the pipeline.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw grayscale image as read from disk, before normalization.
/// 8-bit sources are widened to u16 without rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u16>,
}

impl RawImage {
    pub fn new(h: usize, w: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), h * w, "raw image buffer size mismatch");
        Self { h, w, data }
    }
}

/// Grayscale image with real-valued pixels, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w, "image buffer size mismatch");
        Self { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    /// Quantize to 8-bit, clamping to [0, 1] first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect()
    }
}

/// Binary 2-D mask; entries are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w, "mask buffer size mismatch");
        debug_assert!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Self { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    /// Number of foreground pixels.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Coordinates of all foreground pixels in row-major order.
    pub fn foreground_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) == 1 {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.h == other.h && self.w == other.w
    }
}

/// Require an image and mask to be congruent.
pub fn check_congruent(img: &ImageTensor, mask: &Mask) -> Result<()> {
    if img.h != mask.h || img.w != mask.w {
        return Err(Error::IncongruentMask {
            img_h: img.h,
            img_w: img.w,
            mask_h: mask.h,
            mask_w: mask.w,
        });
    }
    Ok(())
}

/// Interleaved 8-bit RGB buffer, used for overlay renderings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbBuffer {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl RgbBuffer {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w * 3, "rgb buffer size mismatch");
        Self { h, w, data }
    }

    #[inline]
    pub fn set_px(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}
