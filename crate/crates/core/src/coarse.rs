//! Coarse hole fill.
//!
//! The default fill is the discrete harmonic extension of the context into the
//! hole: every hole pixel converges to the mean of its in-bounds 4-neighbours,
//! with context pixels acting as Dirichlet data and the image border as a
//! reflecting (Neumann) boundary. Externally computed coarse predictions can be
//! imported instead.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{neighbors4, Image2D, Mask2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseMode {
    Diffusion,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseFillParams {
    pub max_iters: usize,
    /// Convergence is declared once the largest per-pixel update falls below this.
    pub tolerance: f64,
    pub mode: CoarseMode,
}

impl Default for CoarseFillParams {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tolerance: 1e-6,
            mode: CoarseMode::Diffusion,
        }
    }
}

impl CoarseFillParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidParam("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a diffusion fill with its convergence trace.
#[derive(Debug, Clone)]
pub struct DiffusionOutcome {
    pub image: Image2D,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute update of each sweep.
    pub residuals: Vec<f64>,
}

const PAR_THRESHOLD: usize = 4096;

pub fn diffusion_fill(img: &Image2D, mask: &Mask2D, p: &CoarseFillParams) -> Result<Image2D> {
    diffusion_fill_traced(img, mask, p).map(|o| o.image)
}

pub fn diffusion_fill_traced(
    img: &Image2D,
    mask: &Mask2D,
    p: &CoarseFillParams,
) -> Result<DiffusionOutcome> {
    p.validate()?;
    img.ensure_same_dims(mask.dims())?;
    mask.validate_fillable()?;
    let (h, w) = mask.dims();

    let mut state: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    // Start each component at the mean of its context boundary so iterates stay
    // inside the boundary's value range from the first sweep.
    let components = mask.hole_components();
    for comp in &components {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &i in comp {
            for j in neighbors4(i, h, w).into_iter().flatten() {
                if !mask.bits()[j] {
                    sum += state[j];
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        for &i in comp {
            state[i] = mean;
        }
    }

    let holes: Vec<usize> = (0..h * w).filter(|&i| mask.bits()[i]).collect();
    let mut next = vec![0.0f64; holes.len()];
    let mut residuals = Vec::new();
    let mut converged = false;

    let relax = |i: usize, state: &[f64]| -> f64 {
        let mut sum = 0.0;
        let mut n = 0u32;
        for j in neighbors4(i, h, w).into_iter().flatten() {
            sum += state[j];
            n += 1;
        }
        sum / f64::from(n)
    };

    for _ in 0..p.max_iters {
        if holes.is_empty() {
            converged = true;
            break;
        }
        if holes.len() >= PAR_THRESHOLD {
            next.par_chunks_mut(1024)
                .zip(holes.par_chunks(1024))
                .for_each(|(out, idx)| {
                    for (o, &i) in out.iter_mut().zip(idx) {
                        *o = relax(i, &state);
                    }
                });
        } else {
            for (o, &i) in next.iter_mut().zip(&holes) {
                *o = relax(i, &state);
            }
        }
        let mut max_update = 0.0f64;
        for (&v, &i) in next.iter().zip(&holes) {
            max_update = max_update.max((v - state[i]).abs());
            state[i] = v;
        }
        residuals.push(max_update);
        if max_update < p.tolerance {
            converged = true;
            break;
        }
    }

    let mut out = img.clone();
    for &i in &holes {
        out.data_mut()[i] = state[i] as f32;
    }
    Ok(DiffusionOutcome {
        image: out,
        iterations: residuals.len(),
        converged,
        residuals,
    })
}

/// Loads an externally computed coarse prediction (SFT1 or PNG) for an image of `dims`.
pub fn import_coarse(path: impl AsRef<Path>, dims: (usize, usize)) -> Result<Image2D> {
    let img = io::read_image(path)?;
    if img.dims() != dims {
        return Err(Error::DimMismatch {
            expected: vec![dims.0, dims.1],
            actual: vec![img.height(), img.width()],
        });
    }
    Ok(img)
}
