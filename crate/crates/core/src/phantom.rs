//! Synthetic phantom generator: desk-scale stand-ins for brain MRI slices
//! with exactly known labels and masks.
//!
//! Each class draws a distinct structure inside a simulated head region:
//!
//! * meningioma — one large bright ellipse near the cortex rim
//! * glioma — an irregular cluster of overlapping ellipses, mid intensity
//! * pituitary — a small bright disc near the midline, lower half
//! * no_tumor — background texture only
//!
//! A pixel belongs to the mask exactly when its center satisfies the shape's
//! inclusion predicate, and the drawing pass uses the same predicate, so the
//! generated mask is the precise ground truth for the inserted structure.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{largest_remainder, Label};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};
use crate::rng;

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub case_id: String,
    pub label: Label,
    pub pixels: ImageTensor,
    /// Exact mask of the inserted structure; `None` for `no_tumor`.
    pub mask: Option<Mask>,
}

/// Proportions of the four classes, in [`Label::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMix(pub [f64; 4]);

impl ClassMix {
    pub const UNIFORM: ClassMix = ClassMix([0.25; 4]);

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidClassMix);
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct EllipseSpec {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    /// Rotation of the ellipse axes, radians.
    theta: f32,
}

impl EllipseSpec {
    #[inline]
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f32 - self.cy;
        let dx = x as f32 - self.cx;
        let (s, c) = (libm::sinf(self.theta), libm::cosf(self.theta));
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx) * (u / self.rx) + (v / self.ry) * (v / self.ry) <= 1.0
    }
}

/// Smooth value noise: a coarse random grid sampled bilinearly.
struct ValueNoise {
    grid: Vec<f32>,
    cells: usize,
    size: usize,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Self {
        let grid = (0..(cells + 1) * (cells + 1))
            .map(|_| rng.gen_range(0.0f32..1.0))
            .collect();
        Self { grid, cells, size }
    }

    fn at(&self, y: usize, x: usize) -> f32 {
        let fy = y as f32 / self.size as f32 * self.cells as f32;
        let fx = x as f32 / self.size as f32 * self.cells as f32;
        let y0 = (fy as usize).min(self.cells - 1);
        let x0 = (fx as usize).min(self.cells - 1);
        let wy = fy - y0 as f32;
        let wx = fx - x0 as f32;
        let stride = self.cells + 1;
        let g = |yy: usize, xx: usize| self.grid[yy * stride + xx];
        let top = g(y0, x0) * (1.0 - wx) + g(y0, x0 + 1) * wx;
        let bot = g(y0 + 1, x0) * (1.0 - wx) + g(y0 + 1, x0 + 1) * wx;
        top * (1.0 - wy) + bot * wy
    }
}

fn head_ellipse(size: usize) -> EllipseSpec {
    let s = size as f32;
    EllipseSpec {
        cy: (s - 1.0) / 2.0,
        cx: (s - 1.0) / 2.0,
        ry: s * 0.44,
        rx: s * 0.38,
        theta: 0.0,
    }
}

fn render_background(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let head = head_ellipse(size);
    let coarse = ValueNoise::new(rng, size, 6);
    let grain_seed: u64 = rng.gen();
    let mut grain = rng::seeded(grain_seed);
    let mut img = ImageTensor::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let v = if head.contains(y, x) {
                // Brain parenchyma: mid gray with smooth structure and grain.
                let dy = (y as f32 - head.cy) / head.ry;
                let dx = (x as f32 - head.cx) / head.rx;
                let r2 = dy * dy + dx * dx;
                let falloff = 1.0 - 0.25 * r2;
                0.30 * falloff + 0.18 * coarse.at(y, x) + 0.03 * grain.gen_range(-1.0f32..1.0)
            } else {
                0.02 + 0.01 * grain.gen_range(0.0f32..1.0)
            };
            img.set(y, x, v.clamp(0.0, 1.0));
        }
    }
    img
}

fn draw_shapes(
    img: &mut ImageTensor,
    rng: &mut ChaCha8Rng,
    shapes: &[EllipseSpec],
    base_intensity: f32,
) -> Mask {
    let mut mask = Mask::zeros(img.h, img.w);
    let texture_seed: u64 = rng.gen();
    let mut texture = rng::seeded(texture_seed);
    for y in 0..img.h {
        for x in 0..img.w {
            if shapes.iter().any(|s| s.contains(y, x)) {
                mask.set(y, x, 1);
                let v = base_intensity + 0.06 * texture.gen_range(-1.0f32..1.0);
                img.set(y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    mask
}

fn random_point_in_disc(rng: &mut ChaCha8Rng, cy: f32, cx: f32, radius: f32) -> (f32, f32) {
    // Rejection-free: radius scaled by sqrt for uniform area coverage.
    let r = radius * libm::sqrtf(rng.gen_range(0.0f32..1.0));
    let phi = rng.gen_range(0.0f32..core::f32::consts::TAU);
    (cy + r * libm::sinf(phi), cx + r * libm::cosf(phi))
}

fn generate_one(label: Label, size: usize, rng: &mut ChaCha8Rng) -> (ImageTensor, Option<Mask>) {
    let mut img = render_background(rng, size);
    let s = size as f32;
    let head = head_ellipse(size);
    let mask = match label {
        Label::Meningioma => {
            // Large ellipse off-center, toward the rim.
            let phi = rng.gen_range(0.0f32..core::f32::consts::TAU);
            let dist = rng.gen_range(0.45f32..0.65);
            let cy = head.cy + dist * head.ry * libm::sinf(phi);
            let cx = head.cx + dist * head.rx * libm::cosf(phi);
            let shape = EllipseSpec {
                cy,
                cx,
                ry: s * rng.gen_range(0.10f32..0.16),
                rx: s * rng.gen_range(0.08f32..0.13),
                theta: rng.gen_range(0.0f32..core::f32::consts::PI),
            };
            Some(draw_shapes(&mut img, rng, &[shape], 0.88))
        }
        Label::Glioma => {
            // Irregular cluster of 3 overlapping lobes, mid intensity.
            let (cy, cx) = random_point_in_disc(rng, head.cy, head.cx, s * 0.18);
            let mut shapes = Vec::new();
            for _ in 0..3 {
                let (oy, ox) = random_point_in_disc(rng, cy, cx, s * 0.06);
                shapes.push(EllipseSpec {
                    cy: oy,
                    cx: ox,
                    ry: s * rng.gen_range(0.05f32..0.10),
                    rx: s * rng.gen_range(0.05f32..0.10),
                    theta: rng.gen_range(0.0f32..core::f32::consts::PI),
                });
            }
            Some(draw_shapes(&mut img, rng, &shapes, 0.62))
        }
        Label::Pituitary => {
            // Small bright disc near the midline, lower half.
            let cy = head.cy + head.ry * rng.gen_range(0.25f32..0.45);
            let cx = head.cx + s * rng.gen_range(-0.04f32..0.04);
            let r = s * rng.gen_range(0.040f32..0.065);
            let shape = EllipseSpec {
                cy,
                cx,
                ry: r,
                rx: r,
                theta: 0.0,
            };
            Some(draw_shapes(&mut img, rng, &[shape], 0.97))
        }
        Label::NoTumor => None,
    };
    (img, mask)
}

/// Generate `n` phantoms with the requested class mix. Fully deterministic
/// in `(n, size, seed, mix)`.
pub fn generate_phantoms(n: usize, size: usize, seed: u64, mix: ClassMix) -> Result<Vec<Phantom>> {
    if n < 4 {
        return Err(Error::PhantomCountTooSmall(n));
    }
    if size < 32 {
        return Err(Error::PhantomSizeTooSmall(size));
    }
    mix.validate()?;

    let counts = largest_remainder(n, &mix.0);
    let mut labels = Vec::with_capacity(n);
    for (li, &c) in counts.iter().enumerate() {
        let label = Label::from_index(li).expect("four mix entries");
        labels.extend(core::iter::repeat(label).take(c));
    }

    let mut out = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let mut case_rng = rng::seeded(rng::mix(seed, i as u64));
        let (pixels, mask) = generate_one(label, size, &mut case_rng);
        out.push(Phantom {
            case_id: format!("ph_{i:05}_{}", label.name()),
            label,
            pixels,
            mask,
        });
    }
    Ok(out)
}

/// Manifest-style image and mask paths for a phantom, derived from its id.
pub fn phantom_refs(p: &Phantom) -> (String, Option<String>) {
    let image_ref = format!("images/{}.png", p.case_id);
    let mask_ref = p.mask.as_ref().map(|_| format!("masks/{}.png", p.case_id));
    (image_ref, mask_ref)
}

impl Phantom {
    pub fn source() -> String {
        "phantom".to_string()
    }
}
