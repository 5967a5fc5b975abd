//! End-to-end inpainting: coarse fill, feature patch swap, feature inversion.

use std::time::{Duration, Instant};

use crate::coarse::{diffusion_fill, CoarseFillParams};
use crate::error::Result;
use crate::inversion::{invert, EnergyReport, InversionConfig};
use crate::net::{forward, FeatureMap, NetworkSpec};
use crate::patch_swap::{downsample_mask, swap_fast, SwapParams};
use crate::tensor::{Image2D, Mask2D};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub coarse: CoarseFillParams,
    pub swap: SwapParams,
    pub inversion: InversionConfig,
    /// Coarse-stage reconstruction weight; recorded for provenance, not used.
    pub lambda_reconstruction: f64,
    /// Coarse-stage adversarial weight; recorded for provenance, not used.
    pub lambda_coarse_adv: f64,
    /// Stop after the coarse fill.
    pub skip_refine: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            coarse: CoarseFillParams::default(),
            swap: SwapParams::default(),
            inversion: InversionConfig::default(),
            lambda_reconstruction: 10.0,
            lambda_coarse_adv: 1.0,
            skip_refine: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.coarse.validate()?;
        self.swap.validate()?;
        self.inversion.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub coarse: Duration,
    pub features: Duration,
    pub swap: Duration,
    pub inversion: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub coarse: Image2D,
    /// Features of the coarse fill and their swapped version; absent with `skip_refine`.
    pub features: Option<(FeatureMap, FeatureMap)>,
    pub image: Image2D,
    pub report: Option<EnergyReport>,
    pub timings: StageTimings,
}

fn restore_context(out: &mut Image2D, img: &Image2D, mask: &Mask2D) {
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if !mask.bits()[i] {
            *v = img.data()[i];
        }
    }
}

/// Inpaints the hole of `img` marked by `mask`.
///
/// `coarse` replaces the diffusion fill when given (for example, an imported
/// prediction). Context pixels of the result equal those of `img` exactly.
pub fn run_pipeline(
    img: &Image2D,
    mask: &Mask2D,
    net: Option<&NetworkSpec>,
    cfg: &PipelineConfig,
    coarse: Option<&Image2D>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    img.ensure_same_dims(mask.dims())?;
    mask.validate_fillable()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let mut coarse = match coarse {
        Some(c) => {
            img.ensure_same_dims(c.dims())?;
            let mut c = c.clone();
            c.clamp_unit();
            c
        }
        None => diffusion_fill(img, mask, &cfg.coarse)?,
    };
    restore_context(&mut coarse, img, mask);
    timings.coarse = t.elapsed();

    let net = match net {
        Some(net) if !cfg.skip_refine && mask.hole_count() > 0 => net,
        _ => {
            return Ok(PipelineOutput {
                image: coarse.clone(),
                coarse,
                features: None,
                report: None,
                timings,
            })
        }
    };

    let (h, w) = img.dims();
    let factor = net.downsample_factor();
    let padded = coarse.pad_to_multiple(factor);
    let padded_mask = mask.pad_to_multiple(factor);

    let t = Instant::now();
    let (features, _) = forward(net, &padded)?;
    timings.features = t.elapsed();
    let (_, fh, fw) = features.dims();
    let fmask = downsample_mask(&padded_mask, fh, fw)?;

    let t = Instant::now();
    let swapped = swap_fast(&features, &fmask, &cfg.swap)?.features;
    timings.swap = t.elapsed();

    let t = Instant::now();
    let (refined, report) = invert(&padded, &swapped, &padded_mask, net, &cfg.inversion)?;
    timings.inversion = t.elapsed();

    let mut image = refined.crop(h, w);
    image.clamp_unit();
    restore_context(&mut image, img, mask);
    Ok(PipelineOutput {
        coarse,
        features: Some((features, swapped)),
        image,
        report: Some(report),
        timings,
    })
}
