//! Seeded synthetic data: quasi-symmetric brain-like slices, lesions, smooth
//! deformations and random feature maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::filter::{blur_clamped, gaussian_kernel};
use crate::net::FeatureMap;
use crate::register::DisplacementField;
use crate::tensor::{Image2D, Mask2D, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Standard deviation of the additive, non-symmetric noise.
    pub noise: f64,
    /// Number of mirrored blob pairs inside the brain.
    pub structures: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            seed: 0,
            noise: 0.02,
            structures: 6,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    amp: f64,
}

impl Blob {
    fn weight(&self, y: f64, x: f64) -> f64 {
        let d = ((y - self.cy) / self.ry).powi(2) + ((x - self.cx) / self.rx).powi(2);
        self.amp * (-d * d).exp()
    }
}

/// A left-right symmetric head-like slice plus seeded noise.
///
/// Structure: dark background, a bright skull ring, a mid-gray brain with a
/// darker cortical band, two ventricles and `structures` random blob pairs
/// mirrored about the vertical centerline.
pub fn brain_phantom(p: &PhantomParams) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (h, w) = (p.height as f64, p.width as f64);
    let cy = (h - 1.0) / 2.0;
    let cx = (w - 1.0) / 2.0;
    let (ay, ax) = (
        0.44 * h * rng.gen_range(0.95..1.05),
        0.38 * w * rng.gen_range(0.95..1.05),
    );
    let blobs: Vec<Blob> = (0..p.structures)
        .map(|_| Blob {
            cy: cy + rng.gen_range(-0.6..0.6) * ay,
            cx: cx - rng.gen_range(0.1..0.6) * ax,
            ry: rng.gen_range(0.06..0.16) * h,
            rx: rng.gen_range(0.06..0.16) * w,
            amp: rng.gen_range(-0.25..0.25),
        })
        .collect();
    let ventricle = Blob {
        cy: cy - 0.1 * ay,
        cx: cx - 0.18 * ax,
        ry: 0.22 * ay,
        rx: 0.1 * ax,
        amp: -0.35,
    };
    let mut img = Image2D::from_fn(p.height, p.width, |y, x| {
        let (y, x) = (y as f64, x as f64);
        // Fold onto the left half so every term is exactly mirror-symmetric.
        let xl = x.min(2.0 * cx - x);
        let r = ((y - cy) / ay).powi(2) + ((x - cx) / ax).powi(2);
        let v = if r > 1.25 {
            0.05
        } else if r > 1.0 {
            0.85
        } else {
            let cortex = if r > 0.75 { -0.12 } else { 0.0 };
            let s: f64 = blobs.iter().map(|b| b.weight(y, xl)).sum();
            0.55 + cortex + ventricle.weight(y, xl) + s
        };
        v as f32
    });
    let noise_seed = rng.gen();
    add_noise(&mut img, p.noise, noise_seed);
    img
}

/// Adds approximately Gaussian noise of standard deviation `sigma`, then clamps to `[0, 1]`.
pub fn add_noise(img: &mut Image2D, sigma: f64, seed: u64) {
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in img.data_mut() {
            // Sum of four uniforms on [-1, 1) has unit variance after scaling by sqrt(3/4).
            let n: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.866;
            *v = (f64::from(*v) + sigma * n) as f32;
        }
    }
    img.clamp_unit();
}

/// Paints a bright irregular lesion on one hemisphere; returns the lesioned image and its mask.
pub fn insert_lesion(img: &Image2D, seed: u64, radius: f64) -> (Image2D, Mask2D) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = img.dims();
    let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    let cy = h as f64 * rng.gen_range(0.35..0.65);
    let cx = (w as f64 - 1.0) / 2.0 + side * w as f64 * rng.gen_range(0.12..0.22);
    let lobes: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..0.2),
            )
        })
        .collect();
    let level = rng.gen_range(0.9..1.0);
    let mask = Mask2D::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let theta = dy.atan2(dx);
        let wobble: f64 = lobes
            .iter()
            .enumerate()
            .map(|(k, (ph, a))| a * ((k as f64 + 2.0) * theta + ph).sin())
            .sum();
        let same_side = side * (x as f64 - (w as f64 - 1.0) / 2.0) > 1.0;
        same_side && (dy * dy + dx * dx).sqrt() <= radius * (1.0 + wobble)
    });
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if mask.bits()[i] {
            *v = level as f32;
        }
    }
    (out, mask)
}

/// Smooth random displacement field with components bounded by roughly `amplitude` pixels.
pub fn smooth_deformation(
    h: usize,
    w: usize,
    seed: u64,
    amplitude: f64,
) -> Result<DisplacementField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = h.min(w) as f64 / 6.0;
    let k = gaussian_kernel(sigma, (2.5 * sigma).ceil() as usize);
    let mut comp = || -> Vec<f32> {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = blur_clamped(&raw, h, w, &k);
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        s.iter().map(|v| (amplitude * v / peak) as f32).collect()
    };
    let dx = comp();
    let dy = comp();
    DisplacementField::new(h, w, dx, dy)
}

/// Feature map with i.i.d. uniform `[-1, 1)` entries.
pub fn random_feature_map(channels: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * h * w)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    FeatureMap {
        tensor: Tensor::from_parts(vec![channels, h, w], data),
        layer: 0,
        input_hw: (h, w),
    }
}
