//! Image quality metrics: masked L1, PSNR, SSIM, mutual information and
//! feature-space (perceptual) distance.

use std::fs::OpenOptions;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filter::{blur_valid, gaussian_kernel};
use crate::net::{forward, NetworkSpec};
use crate::tensor::{Image2D, Mask2D};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub const DEFAULT_MI_BINS: usize = 32;

fn check_pair(a: &Image2D, b: &Image2D) -> Result<()> {
    a.ensure_same_dims(b.dims())
}

/// Mean absolute difference over hole pixels, or over all pixels without a mask.
pub fn mean_l1(a: &Image2D, b: &Image2D, mask: Option<&Mask2D>) -> Result<f64> {
    let (sum, n) = l1_sum(a, b, mask)?;
    Ok(sum / n as f64)
}

fn l1_sum(a: &Image2D, b: &Image2D, mask: Option<&Mask2D>) -> Result<(f64, usize)> {
    check_pair(a, b)?;
    if let Some(m) = mask {
        a.ensure_same_dims(m.dims())?;
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_none_or(|m| m.bits()[i]) {
            sum += (f64::from(x) - f64::from(y)).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyHole);
    }
    Ok((sum, n))
}

pub fn mse(a: &Image2D, b: &Image2D) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image2D, b: &Image2D, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidParam("peak must be positive".into()));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

/// Mean structural similarity over every fully contained 11×11 Gaussian window.
pub fn ssim(a: &Image2D, b: &Image2D) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let x: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(s, t)| s * t).collect() };
    let (mx, _, _) = blur_valid(&x, h, w, &k);
    let (my, _, _) = blur_valid(&y, h, w, &k);
    let (mxx, _, _) = blur_valid(&prod(&x, &x), h, w, &k);
    let (myy, _, _) = blur_valid(&prod(&y, &y), h, w, &k);
    let (mxy, _, _) = blur_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total +=
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok((total / mx.len() as f64).clamp(-1.0, 1.0))
}

fn bin_of(v: f32, bins: usize) -> usize {
    ((f64::from(v).clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

fn entropy_term(count: u64, n: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let p = count as f64 / n;
        -p * p.ln()
    }
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts.iter().map(|&c| entropy_term(c, n)).sum()
}

/// Histogram mutual information in nats over pixels not marked in `exclude`.
///
/// Intensities fall into `bins` equal-width bins on `[0, 1]`. The joint
/// entropy is summed over unordered bin pairs so swapping the arguments
/// yields a bit-identical result.
pub fn mutual_information(
    a: &Image2D,
    b: &Image2D,
    exclude: Option<&Mask2D>,
    bins: usize,
) -> Result<f64> {
    check_pair(a, b)?;
    if let Some(m) = exclude {
        a.ensure_same_dims(m.dims())?;
    }
    if bins == 0 {
        return Err(Error::InvalidParam("bins must be at least 1".into()));
    }
    let mut joint = vec![0u64; bins * bins];
    let mut ha = vec![0u64; bins];
    let mut hb = vec![0u64; bins];
    let mut n = 0u64;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if exclude.is_some_and(|m| m.bits()[i]) {
            continue;
        }
        let (bx, by) = (bin_of(x, bins), bin_of(y, bins));
        joint[bx * bins + by] += 1;
        ha[bx] += 1;
        hb[by] += 1;
        n += 1;
    }
    if n < 2 {
        return Err(Error::InvalidParam(
            "mutual information needs at least 2 non-excluded pixels".into(),
        ));
    }
    let nf = n as f64;
    let mut hj = 0.0;
    for i in 0..bins {
        hj += entropy_term(joint[i * bins + i], nf);
        for j in i + 1..bins {
            hj += entropy_term(joint[i * bins + j], nf) + entropy_term(joint[j * bins + i], nf);
        }
    }
    Ok(entropy(&ha, nf) + entropy(&hb, nf) - hj)
}

/// Binned Shannon entropy in nats, using the same binning as [`mutual_information`].
pub fn binned_entropy(a: &Image2D, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidParam("bins must be at least 1".into()));
    }
    let mut h = vec![0u64; bins];
    for &v in a.data() {
        h[bin_of(v, bins)] += 1;
    }
    Ok(entropy(&h, a.data().len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptualDistance {
    /// L2 norm of the feature difference.
    pub raw: f64,
    /// Root mean square of the feature difference.
    pub per_element: f64,
}

pub fn perceptual_distance(
    a: &Image2D,
    b: &Image2D,
    net: &NetworkSpec,
) -> Result<PerceptualDistance> {
    check_pair(a, b)?;
    let (fa, _) = forward(net, a)?;
    let (fb, _) = forward(net, b)?;
    let sq: f64 = fa
        .tensor
        .data()
        .iter()
        .zip(fb.tensor.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(PerceptualDistance {
        raw: sq.sqrt(),
        per_element: (sq / fa.tensor.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mean_l1_hole: f64,
    /// `255 · Σ|a − b|` over the hole, for comparison with unnormalized intensity scales.
    pub mean_l1_hole_x255: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub perceptual: Option<f64>,
    pub mi_nats: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricOptions {
    pub mi_bins: usize,
    pub psnr_peak: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            mi_bins: DEFAULT_MI_BINS,
            psnr_peak: 1.0,
        }
    }
}

/// Compares `result` against `reference`. L1 is restricted to the hole when a mask is given.
pub fn evaluate(
    result: &Image2D,
    reference: &Image2D,
    mask: Option<&Mask2D>,
    net: Option<&NetworkSpec>,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let (sum, n) = l1_sum(result, reference, mask)?;
    Ok(MetricReport {
        mean_l1_hole: sum / n as f64,
        mean_l1_hole_x255: 255.0 * sum,
        ssim: ssim(result, reference)?,
        psnr_db: psnr(result, reference, opts.psnr_peak)?,
        perceptual: net
            .map(|net| perceptual_distance(result, reference, net).map(|d| d.per_element))
            .transpose()?,
        mi_nats: mutual_information(result, reference, None, opts.mi_bins)?,
    })
}

pub const CSV_HEADER: [&str; 8] = [
    "image",
    "method",
    "mean_l1_hole",
    "mean_l1_hole_x255",
    "ssim",
    "psnr_db",
    "perceptual",
    "mi_nats",
];

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

impl MetricReport {
    pub fn csv_record(&self, image: &str, method: &str) -> [String; 8] {
        [
            image.to_string(),
            method.to_string(),
            self.mean_l1_hole.to_string(),
            self.mean_l1_hole_x255.to_string(),
            self.ssim.to_string(),
            fmt_psnr(self.psnr_db),
            self.perceptual.map(|p| p.to_string()).unwrap_or_default(),
            self.mi_nats.to_string(),
        ]
    }

    /// Appends one row, writing the header first if the file is new or empty.
    pub fn append_csv(&self, path: impl AsRef<Path>, image: &str, method: &str) -> Result<()> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        if empty {
            w.write_record(CSV_HEADER)?;
        }
        w.write_record(self.csv_record(image, method))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Conv2d, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image2D::from_fn(h, w, |_, _| rng.gen())
    }

    #[test]
    fn l1_cases() {
        let a = noise(8, 8, 1);
        assert_eq!(mean_l1(&a, &a, None).unwrap(), 0.0);

        let mask = Mask2D::from_fn(8, 8, |y, _| y < 3);
        let mut b = a.clone();
        for y in 0..3 {
            for x in 0..8 {
                b.set(y, x, a.get(y, x) * 0.5 + 0.1);
            }
        }
        let c = Image2D::from_fn(8, 8, |y, x| if y < 3 { 0.25 } else { a.get(y, x) });
        let d = Image2D::from_fn(8, 8, |y, x| if y < 3 { 0.35 } else { a.get(y, x) });
        assert!((mean_l1(&c, &d, Some(&mask)).unwrap() - 0.1).abs() < 1e-7);
        assert_eq!(
            mean_l1(&a, &b, Some(&mask)).unwrap(),
            mean_l1(&b, &a, Some(&mask)).unwrap()
        );

        let checker = Image2D::from_fn(4, 4, |y, x| ((y + x) % 2) as f32);
        let zero = Image2D::filled(4, 4, 0.0);
        let full = Mask2D::from_fn(4, 4, |_, _| true);
        assert_eq!(mean_l1(&checker, &zero, Some(&full)).unwrap(), 0.5);

        let none = Mask2D::all_context(8, 8);
        assert!(matches!(
            mean_l1(&a, &b, Some(&none)),
            Err(Error::EmptyHole)
        ));
    }

    #[test]
    fn psnr_cases() {
        let a = Image2D::filled(10, 10, 0.5);
        let b = Image2D::filled(10, 10, 0.6);
        let m = mse(&a, &b).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-9);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        let c = Image2D::filled(10, 10, 0.51);
        assert!((psnr(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_cases() {
        let a = noise(24, 20, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image2D::from_fn(24, 20, |y, x| 1.0 - a.get(y, x));
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let flat = Image2D::filled(16, 16, 0.5);
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
        let small = Image2D::filled(10, 16, 0.5);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn ssim_is_bounded() {
        for seed in 0..5 {
            let s = ssim(&noise(16, 16, seed), &noise(16, 16, seed + 100)).unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn mi_self_equals_entropy() {
        let a = noise(32, 32, 3);
        let mi = mutual_information(&a, &a, None, 32).unwrap();
        assert_eq!(mi, binned_entropy(&a, 32).unwrap());
    }

    #[test]
    fn mi_against_constant_is_zero() {
        let a = noise(32, 32, 4);
        let c = Image2D::filled(32, 32, 0.7);
        assert_eq!(mutual_information(&a, &c, None, 32).unwrap(), 0.0);
        assert_eq!(mutual_information(&c, &a, None, 32).unwrap(), 0.0);
    }

    #[test]
    fn mi_is_symmetric_and_respects_exclusion() {
        let a = noise(20, 20, 5);
        let b = Image2D::from_fn(20, 20, |y, x| {
            (a.get(y, x) * 0.7 + 0.1 * (x as f32 / 20.0)).min(1.0)
        });
        let m = Mask2D::from_fn(20, 20, |y, x| y < 5 && x > 10);
        for ex in [None, Some(&m)] {
            let ab = mutual_information(&a, &b, ex, 16).unwrap();
            let ba = mutual_information(&b, &a, ex, 16).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert!(ab > 0.0);
        }
        let all = Mask2D::from_fn(20, 20, |_, _| true);
        assert!(mutual_information(&a, &b, Some(&all), 32).is_err());
    }

    #[test]
    fn mi_independent_noise_is_small() {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let mi =
                mutual_information(&noise(64, 64, seed), &noise(64, 64, 1000 + seed), None, 32)
                    .unwrap();
            assert!(mi > 0.0);
            worst = worst.max(mi);
        }
        assert!(worst < 0.15, "{worst}");
    }

    #[test]
    fn perceptual_matches_hand_computation() {
        let w = [0.5f32, -1.25];
        let net = NetworkSpec::new(
            vec![LayerSpec::Conv(Conv2d {
                out_channels: 2,
                in_channels: 1,
                kernel_h: 1,
                kernel_w: 1,
                stride: 1,
                padding: 0,
                weights: w.to_vec(),
                bias: vec![0.1, 0.2],
            })],
            0,
        )
        .unwrap();
        let a = noise(4, 4, 6);
        let b = noise(4, 4, 7);
        let mut sq = 0.0f64;
        for (&x, &y) in a.data().iter().zip(b.data()) {
            for &wc in &w {
                // Bias cancels in the difference.
                sq += (f64::from(wc) * (f64::from(x) - f64::from(y))).powi(2);
            }
        }
        let d = perceptual_distance(&a, &b, &net).unwrap();
        assert!(
            (d.raw - sq.sqrt()).abs() < 1e-5,
            "{} vs {}",
            d.raw,
            sq.sqrt()
        );
        assert!((d.per_element - (sq / 32.0).sqrt()).abs() < 1e-5);
        assert_eq!(perceptual_distance(&a, &a, &net).unwrap().raw, 0.0);
        let z = Image2D::filled(4, 4, 0.0);
        assert_eq!(perceptual_distance(&z, &z, &net).unwrap().raw, 0.0);
    }

    #[test]
    fn csv_append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let a = noise(16, 16, 8);
        let r = evaluate(&a, &a, None, None, &MetricOptions::default()).unwrap();
        assert_eq!(r.psnr_db, f64::INFINITY);
        r.append_csv(&path, "a", "same").unwrap();
        r.append_csv(&path, "a", "again").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert!(lines[1].starts_with("a,same,0,0,1,inf,,"));
    }
}
