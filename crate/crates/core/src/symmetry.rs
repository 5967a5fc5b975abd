//! Quasi-symmetry constraint.
//!
//! Each hole pixel is tied to its reflection across the vertical centerline.
//! The loss is the mean squared difference over the hole/mirror pairs whose
//! mirror lies in the context. Pairs with both ends in the hole carry no
//! information and are skipped, as is the centre column of odd-width images
//! (a pixel that mirrors onto itself).
//!
//! Pairs are visited in a fixed `(row, min(x, W-1-x))` order so the loss of a
//! mirrored image with a mirrored mask is bit-identical to the original.

use crate::error::Result;
use crate::tensor::{Image2D, Mask2D, Mirror};

/// Hole region `R`, its reflection `R̂`, and their overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct SymRegionPair {
    pub hole: Mask2D,
    pub mirrored: Mask2D,
    pub overlap: Mask2D,
}

impl SymRegionPair {
    pub fn new(hole: &Mask2D) -> Self {
        let mirrored = hole.mirror_horizontal();
        let overlap = Mask2D::from_fn(hole.height(), hole.width(), |y, x| {
            hole.is_hole(y, x) && mirrored.is_hole(y, x)
        });
        Self {
            hole: hole.clone(),
            mirrored,
            overlap,
        }
    }

    /// Number of hole pixels whose mirror is a context pixel.
    pub fn pair_count(&self) -> usize {
        self.hole.hole_count() - self.overlap.hole_count()
    }
}

/// `(hole index, mirror index)` for every constrained pair, in canonical order.
fn pairs(mask: &Mask2D) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (h, w) = mask.dims();
    (0..h).flat_map(move |y| {
        (0..w / 2).filter_map(move |x| {
            let (l, r) = (y * w + x, y * w + w - 1 - x);
            match (mask.bits()[l], mask.bits()[r]) {
                (true, false) => Some((l, r)),
                (false, true) => Some((r, l)),
                _ => None,
            }
        })
    })
}

fn warn_degenerate(mask: &Mask2D, n: usize) {
    if n == 0 && mask.hole_count() > 0 {
        log::warn!("symmetry term is degenerate: every hole pixel mirrors onto another hole pixel");
    }
}

/// Mean squared difference between hole pixels and their mirrored context pixels.
pub fn sym_loss(img: &Image2D, mask: &Mask2D) -> Result<f64> {
    img.ensure_same_dims(mask.dims())?;
    let d = img.data();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (hole, mirror) in pairs(mask) {
        let diff = f64::from(d[hole]) - f64::from(d[mirror]);
        sum += diff * diff;
        n += 1;
    }
    warn_degenerate(mask, n);
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Gradient of [`sym_loss`] with respect to every pixel, row-major.
pub fn sym_grad(img: &Image2D, mask: &Mask2D) -> Result<Vec<f64>> {
    img.ensure_same_dims(mask.dims())?;
    let d = img.data();
    let n = pairs(mask).count();
    let mut grad = vec![0.0f64; d.len()];
    if n == 0 {
        warn_degenerate(mask, n);
        return Ok(grad);
    }
    let scale = 2.0 / n as f64;
    for (hole, mirror) in pairs(mask) {
        let g = scale * (f64::from(d[hole]) - f64::from(d[mirror]));
        grad[hole] += g;
        grad[mirror] -= g;
    }
    Ok(grad)
}
