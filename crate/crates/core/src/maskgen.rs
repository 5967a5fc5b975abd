//! Hole mask generation: seeded random-walk brush strokes and label-map masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Mask2D, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGenParams {
    pub seed: u64,
    /// Target hole fraction in `(0, 0.5]`.
    pub coverage: f64,
    pub walkers: usize,
    /// Inclusive brush radius range in pixels.
    pub brush_radius_range: (usize, usize),
}

impl Default for MaskGenParams {
    fn default() -> Self {
        Self {
            seed: 0,
            coverage: 0.2,
            walkers: 4,
            brush_radius_range: (2, 6),
        }
    }
}

/// Accepted relative deviation of the achieved coverage from the target.
pub const COVERAGE_TOLERANCE: f64 = 0.2;
const MIN_SIDE: usize = 16;
const MAX_ATTEMPTS: usize = 16;

impl MaskGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 0.5) {
            return Err(Error::InvalidParam(format!(
                "coverage must lie in (0, 0.5], got {}",
                self.coverage
            )));
        }
        if self.walkers == 0 {
            return Err(Error::InvalidParam("walkers must be at least 1".into()));
        }
        let (lo, hi) = self.brush_radius_range;
        if lo > hi {
            return Err(Error::InvalidParam("brush radius range is empty".into()));
        }
        Ok(())
    }
}

struct Walker {
    y: f64,
    x: f64,
    heading: f64,
}

/// Marks the disk of radius `r` at `(cy, cx)`; returns the number of newly set pixels.
fn stamp(
    bits: &mut [bool],
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    r: usize,
    dry_run: bool,
) -> usize {
    let r2 = (r * r) as f64 + 0.25;
    let (y0, x0) = (cy.round() as isize, cx.round() as isize);
    let r = r as isize;
    let mut added = 0;
    for y in (y0 - r).max(0)..=(y0 + r).min(h as isize - 1) {
        for x in (x0 - r).max(0)..=(x0 + r).min(w as isize - 1) {
            let (dy, dx) = ((y - y0) as f64, (x - x0) as f64);
            if dy * dy + dx * dx <= r2 {
                let i = y as usize * w + x as usize;
                if !bits[i] {
                    added += 1;
                    if !dry_run {
                        bits[i] = true;
                    }
                }
            }
        }
    }
    added
}

fn generate_once(h: usize, w: usize, p: &MaskGenParams, rng: &mut ChaCha8Rng) -> Result<Mask2D> {
    let total = (h * w) as f64;
    let target = p.coverage * total;
    let ceiling = ((1.0 + COVERAGE_TOLERANCE) * target).floor() as usize;
    let (rmin, rmax) = p.brush_radius_range;
    let margin = (rmax as f64).min(h.min(w) as f64 / 4.0);
    let mut walkers: Vec<Walker> = (0..p.walkers)
        .map(|_| Walker {
            y: rng.gen_range(margin..h as f64 - margin),
            x: rng.gen_range(margin..w as f64 - margin),
            heading: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let mut bits = vec![false; h * w];
    let mut count = 0usize;
    let cap = 50 * h * w;
    for step in 0..cap {
        if count as f64 >= target {
            return Mask2D::new(h, w, bits);
        }
        let n_walkers = walkers.len();
        let wk = &mut walkers[step % n_walkers];
        let mut r = rng.gen_range(rmin..=rmax);
        loop {
            let added = stamp(&mut bits, h, w, wk.y, wk.x, r, true);
            if count + added <= ceiling {
                count += stamp(&mut bits, h, w, wk.y, wk.x, r, false);
                break;
            }
            if r == 0 {
                break;
            }
            r -= 1;
        }
        wk.heading += rng.gen_range(-0.8..0.8);
        let len = r.max(1) as f64;
        let (ny, nx) = (wk.y + len * wk.heading.sin(), wk.x + len * wk.heading.cos());
        if ny < 0.0 || ny > (h - 1) as f64 {
            wk.heading = -wk.heading;
        }
        if nx < 0.0 || nx > (w - 1) as f64 {
            wk.heading = std::f64::consts::PI - wk.heading;
        }
        wk.y = ny.clamp(0.0, (h - 1) as f64);
        wk.x = nx.clamp(0.0, (w - 1) as f64);
    }
    Err(Error::CoverageUnreachable {
        target: p.coverage,
        iterations: cap,
    })
}

/// Union of seeded random-walk brush strokes covering `coverage ± 20%` of the image.
///
/// Masks that would leave a hole component without context are regenerated
/// from the continuing random stream.
pub fn random_irregular_mask(h: usize, w: usize, p: &MaskGenParams) -> Result<Mask2D> {
    p.validate()?;
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidParam(format!(
            "mask must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for _ in 0..MAX_ATTEMPTS {
        let mask = generate_once(h, w, p, &mut rng)?;
        if mask.validate_fillable().is_ok() {
            return Ok(mask);
        }
    }
    Err(Error::CoverageUnreachable {
        target: p.coverage,
        iterations: MAX_ATTEMPTS,
    })
}

/// Hole wherever the integer label is one of `hole_labels`.
pub fn mask_from_labels(labels: &Tensor, hole_labels: &[i64]) -> Result<Mask2D> {
    let (h, w) = match labels.dims() {
        [h, w] | [1, h, w] => (*h, *w),
        d => {
            return Err(Error::InvalidTensor(format!(
                "label map must be [H, W] or [1, H, W], got {d:?}"
            )))
        }
    };
    let mut bits = Vec::with_capacity(h * w);
    for &v in labels.data() {
        if v.fract() != 0.0 {
            return Err(Error::InvalidTensor(format!("non-integer label {v}")));
        }
        bits.push(hole_labels.contains(&(v as i64)));
    }
    let mask = Mask2D::new(h, w, bits)?;
    if mask.hole_count() == 0 {
        log::warn!("none of the labels {hole_labels:?} occur in the label map; mask is empty");
    }
    Ok(mask)
}
