//! Normalization, resizing, and seeded joint augmentation.
//!
//! Images are min-max normalized to [0, 1] per image. Resizing is bilinear
//! for images (pixel-center convention, so same-size resize is the identity)
//! and nearest-neighbor for masks. Augmentation draws one geometric transform
//! per call — rotation, horizontal/vertical flips, isotropic zoom — and
//! applies it identically to the image and its mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_congruent, ImageTensor, Mask, RawImage};
use crate::rng;

/// Min-max normalize to [0, 1]. A constant image maps to all zeros.
pub fn normalize(img: &ImageTensor) -> ImageTensor {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in &img.data {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return ImageTensor::zeros(img.h, img.w);
    }
    let scale = 1.0 / (max - min);
    ImageTensor::new(
        img.h,
        img.w,
        img.data.iter().map(|&v| (v - min) * scale).collect(),
    )
}

/// Min-max normalize a raw integer image.
pub fn normalize_raw(raw: &RawImage) -> ImageTensor {
    let as_f32 = ImageTensor::new(raw.h, raw.w, raw.data.iter().map(|&v| v as f32).collect());
    normalize(&as_f32)
}

/// Bilinear resize with the half-pixel-center convention. Output values stay
/// inside the input's value range.
pub fn resize(img: &ImageTensor, target_h: usize, target_w: usize) -> ImageTensor {
    assert!(target_h > 0 && target_w > 0, "resize target must be positive");
    if target_h == img.h && target_w == img.w {
        return img.clone();
    }
    let sy = img.h as f32 / target_h as f32;
    let sx = img.w as f32 / target_w as f32;
    let mut out = ImageTensor::zeros(target_h, target_w);
    for y in 0..target_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.h - 1) as f32);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(img.h - 1);
        let wy = fy - y0 as f32;
        for x in 0..target_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.w - 1) as f32);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(img.w - 1);
            let wx = fx - x0 as f32;
            let top = img.get(y0, x0) * (1.0 - wx) + img.get(y0, x1) * wx;
            let bot = img.get(y1, x0) * (1.0 - wx) + img.get(y1, x1) * wx;
            out.set(y, x, top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

/// Nearest-neighbor resize for masks; binarity is preserved.
pub fn resize_mask(mask: &Mask, target_h: usize, target_w: usize) -> Mask {
    assert!(target_h > 0 && target_w > 0, "resize target must be positive");
    if target_h == mask.h && target_w == mask.w {
        return mask.clone();
    }
    let sy = mask.h as f32 / target_h as f32;
    let sx = mask.w as f32 / target_w as f32;
    let mut out = Mask::zeros(target_h, target_w);
    for y in 0..target_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (mask.h - 1) as f32);
        let ny = libm::roundf(fy) as usize;
        for x in 0..target_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (mask.w - 1) as f32);
            let nx = libm::roundf(fx) as usize;
            out.set(y, x, mask.get(ny.min(mask.h - 1), nx.min(mask.w - 1)));
        }
    }
    out
}

/// Seeded geometric augmentation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Maximum rotation magnitude in degrees, drawn uniformly from
    /// `[-max, max]`. Must lie in [0, 180].
    pub max_rotation_deg: f32,
    pub h_flip: bool,
    pub v_flip: bool,
    /// Isotropic zoom factor range `(low, high)` with `0 < low <= 1 <= high`.
    pub zoom_range: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            h_flip: true,
            v_flip: true,
            zoom_range: (0.9, 1.1),
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    /// Policy that leaves every input unchanged.
    pub fn identity(seed: u64) -> Self {
        Self {
            max_rotation_deg: 0.0,
            h_flip: false,
            v_flip: false,
            zoom_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::InvalidPolicy("rotation must lie in [0, 180]"));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0 && lo <= hi) {
            return Err(Error::InvalidPolicy(
                "zoom range must satisfy 0 < low <= 1 <= high",
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.max_rotation_deg == 0.0
            && !self.h_flip
            && !self.v_flip
            && self.zoom_range == (1.0, 1.0)
    }
}

/// Transform parameters drawn for one augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformDraw {
    pub angle_deg: f32,
    pub h_flip: bool,
    pub v_flip: bool,
    pub zoom: f32,
}

impl TransformDraw {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            h_flip: false,
            v_flip: false,
            zoom: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && !self.h_flip && !self.v_flip && self.zoom == 1.0
    }
}

/// Draw transform parameters; a pure function of `(policy.seed, draw_seed)`.
pub fn draw_transform(policy: &AugmentationPolicy, draw_seed: u64) -> TransformDraw {
    let mut rng = rng::seeded(rng::mix(policy.seed, draw_seed));
    let angle_deg = if policy.max_rotation_deg > 0.0 {
        rng.gen_range(-policy.max_rotation_deg..=policy.max_rotation_deg)
    } else {
        0.0
    };
    let h_flip = policy.h_flip && rng.gen_bool(0.5);
    let v_flip = policy.v_flip && rng.gen_bool(0.5);
    let (lo, hi) = policy.zoom_range;
    let zoom = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    TransformDraw {
        angle_deg,
        h_flip,
        v_flip,
        zoom,
    }
}

/// Map an output pixel back to source coordinates under the inverse of the
/// drawn transform (rotate-then-zoom about the image center, flips applied
/// in output space).
#[inline]
fn source_coords(t: &TransformDraw, h: usize, w: usize, y: usize, x: usize) -> (f32, f32) {
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut fy = y as f32;
    let mut fx = x as f32;
    if t.h_flip {
        fx = (w as f32 - 1.0) - fx;
    }
    if t.v_flip {
        fy = (h as f32 - 1.0) - fy;
    }
    if t.angle_deg == 0.0 && t.zoom == 1.0 {
        return (fy, fx);
    }
    let theta = -t.angle_deg.to_radians();
    let (sin, cos) = (libm::sinf(theta), libm::cosf(theta));
    let dy = fy - cy;
    let dx = fx - cx;
    let ry = cos * dy - sin * dx;
    let rx = sin * dy + cos * dx;
    (cy + ry / t.zoom, cx + rx / t.zoom)
}

fn sample_bilinear(img: &ImageTensor, fy: f32, fx: f32) -> f32 {
    if fy < -0.5 || fx < -0.5 || fy > img.h as f32 - 0.5 || fx > img.w as f32 - 0.5 {
        return 0.0;
    }
    let fy = fy.clamp(0.0, (img.h - 1) as f32);
    let fx = fx.clamp(0.0, (img.w - 1) as f32);
    let y0 = fy as usize;
    let x0 = fx as usize;
    let y1 = (y0 + 1).min(img.h - 1);
    let x1 = (x0 + 1).min(img.w - 1);
    let wy = fy - y0 as f32;
    let wx = fx - x0 as f32;
    let top = img.get(y0, x0) * (1.0 - wx) + img.get(y0, x1) * wx;
    let bot = img.get(y1, x0) * (1.0 - wx) + img.get(y1, x1) * wx;
    top * (1.0 - wy) + bot * wy
}

fn sample_nearest(mask: &Mask, fy: f32, fx: f32) -> u8 {
    let ny = libm::roundf(fy);
    let nx = libm::roundf(fx);
    if ny < 0.0 || nx < 0.0 || ny >= mask.h as f32 || nx >= mask.w as f32 {
        return 0;
    }
    mask.get(ny as usize, nx as usize)
}

/// Apply one drawn transform to an image and, when present, its mask.
pub fn apply_transform(
    img: &ImageTensor,
    mask: Option<&Mask>,
    t: &TransformDraw,
) -> (ImageTensor, Option<Mask>) {
    if t.is_identity() {
        return (img.clone(), mask.cloned());
    }
    let mut out = ImageTensor::zeros(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let (fy, fx) = source_coords(t, img.h, img.w, y, x);
            out.set(y, x, sample_bilinear(img, fy, fx));
        }
    }
    let out_mask = mask.map(|m| {
        let mut om = Mask::zeros(m.h, m.w);
        for y in 0..m.h {
            for x in 0..m.w {
                let (fy, fx) = source_coords(t, m.h, m.w, y, x);
                om.set(y, x, sample_nearest(m, fy, fx));
            }
        }
        om
    });
    (out, out_mask)
}

/// Seeded joint augmentation of an image and optional mask. The same
/// geometric transform is applied to both; parameters depend only on
/// `(policy.seed, draw_seed)`.
pub fn augment(
    img: &ImageTensor,
    mask: Option<&Mask>,
    policy: &AugmentationPolicy,
    draw_seed: u64,
) -> Result<(ImageTensor, Option<Mask>)> {
    policy.validate()?;
    if let Some(m) = mask {
        check_congruent(img, m)?;
    }
    let t = draw_transform(policy, draw_seed);
    Ok(apply_transform(img, mask, &t))
}
