//! Two-dimensional demons registration, warping, and the direct versus
//! inpainted registration comparison.
//!
//! The field maps fixed-image coordinates into the moving image: the warped
//! moving image at `(y, x)` samples the moving image at `(y + dy, x + dx)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::filter::{blur_clamped, gaussian_kernel};
use crate::metrics::mutual_information;
use crate::tensor::{Image2D, Mask2D, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dx: vec![0.0; height * width],
            dy: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        for c in [&dx, &dy] {
            if c.len() != height * width {
                return Err(Error::LengthMismatch(c.len(), height * width));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("displacement field".into()));
            }
        }
        Ok(Self {
            height,
            width,
            dx,
            dy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    /// Largest displacement component magnitude.
    pub fn max_abs(&self) -> f32 {
        self.dx
            .iter()
            .chain(&self.dy)
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// `[2, H, W]` tensor holding `dx` then `dy`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = self.dx.clone();
        data.extend_from_slice(&self.dy);
        Tensor::from_parts(vec![2, self.height, self.width], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[2, h, w] => {
                let (dx, dy) = t.data().split_at(h * w);
                Self::new(h, w, dx.to_vec(), dy.to_vec())
            }
            d => Err(Error::InvalidTensor(format!(
                "displacement field must be [2, H, W], got {d:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemonsParams {
    /// Iterations per pyramid level.
    pub iterations: usize,
    pub field_smoothing_sigma: f64,
    pub update_scale: f64,
    pub pyramid_levels: usize,
}

impl Default for DemonsParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            field_smoothing_sigma: 2.0,
            update_scale: 1.0,
            pyramid_levels: 3,
        }
    }
}

impl DemonsParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be at least 1".into()));
        }
        if self.field_smoothing_sigma.is_nan() || self.field_smoothing_sigma <= 0.0 {
            return Err(Error::InvalidParam(
                "field smoothing sigma must be positive".into(),
            ));
        }
        if !self.update_scale.is_finite() || self.update_scale <= 0.0 {
            return Err(Error::InvalidParam("update scale must be positive".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidParam(
                "pyramid_levels must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_image(img: &Image2D) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            v: img.data().iter().map(|&x| f64::from(x)).collect(),
        }
    }

    fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |r: usize, c: usize| self.v[r * self.w + c];
        let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
        let bot = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
        top + fy * (bot - top)
    }

    /// 2×2 box average; odd trailing rows and columns are averaged with themselves.
    fn half(&self) -> Self {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let at = |r: usize, c: usize| self.v[r.min(self.h - 1) * self.w + c.min(self.w - 1)];
        let v = (0..h * w)
            .map(|i| {
                let (r, c) = (2 * (i / w), 2 * (i % w));
                0.25 * (at(r, c) + at(r, c + 1) + at(r + 1, c) + at(r + 1, c + 1))
            })
            .collect();
        Self { h, w, v }
    }

    /// Central-difference gradient `(d/dy, d/dx)`, one-sided at the border.
    fn gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (self.h, self.w);
        let mut gy = vec![0.0; h * w];
        let mut gx = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
                if yb > ya {
                    gy[y * w + x] = (self.v[yb * w + x] - self.v[ya * w + x]) / (yb - ya) as f64;
                }
                if xb > xa {
                    gx[y * w + x] = (self.v[y * w + xb] - self.v[y * w + xa]) / (xb - xa) as f64;
                }
            }
        }
        (gy, gx)
    }
}

struct Field {
    dy: Vec<f64>,
    dx: Vec<f64>,
}

fn warp_plane(m: &Plane, f: &Field) -> Plane {
    let v = (0..m.h * m.w)
        .map(|i| {
            let (y, x) = ((i / m.w) as f64, (i % m.w) as f64);
            m.sample(y + f.dy[i], x + f.dx[i])
        })
        .collect();
    Plane { h: m.h, w: m.w, v }
}

fn ssd(a: &Plane, b: &Plane) -> f64 {
    a.v.iter().zip(&b.v).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Bilinear resampling of a coarse field onto `(h, w)` with displacements rescaled.
fn upsample(f: &Field, ch: usize, cw: usize, h: usize, w: usize) -> Field {
    let (sy, sx) = (ch as f64 / h as f64, cw as f64 / w as f64);
    let comp = |c: &[f64], scale: f64| -> Vec<f64> {
        let plane = Plane {
            h: ch,
            w: cw,
            v: c.to_vec(),
        };
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                plane.sample((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5) * scale
            })
            .collect()
    };
    Field {
        dy: comp(&f.dy, 1.0 / sy),
        dx: comp(&f.dx, 1.0 / sx),
    }
}

fn demons_level(
    fixed: &Plane,
    moving: &Plane,
    init: Field,
    p: &DemonsParams,
    level: usize,
    finest: bool,
) -> Result<Field> {
    let (h, w) = (fixed.h, fixed.w);
    let kernel = gaussian_kernel(
        p.field_smoothing_sigma,
        (3.0 * p.field_smoothing_sigma).ceil() as usize,
    );
    let (fgy, fgx) = fixed.gradient();
    let mut field = init;
    let mut best_ssd = f64::INFINITY;
    let mut best = Field {
        dy: field.dy.clone(),
        dx: field.dx.clone(),
    };
    if finest {
        let zero = Field {
            dy: vec![0.0; h * w],
            dx: vec![0.0; h * w],
        };
        best_ssd = ssd(fixed, moving);
        best = zero;
    }
    for it in 0..=p.iterations {
        let warped = warp_plane(moving, &field);
        let e = ssd(fixed, &warped);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!(
                "demons SSD at pyramid level {level}, iteration {it}"
            )));
        }
        if e < best_ssd {
            best_ssd = e;
            best = Field {
                dy: field.dy.clone(),
                dx: field.dx.clone(),
            };
        }
        if it == p.iterations {
            break;
        }
        let (mgy, mgx) = warped.gradient();
        for i in 0..h * w {
            let diff = fixed.v[i] - warped.v[i];
            let jy = 0.5 * (fgy[i] + mgy[i]);
            let jx = 0.5 * (fgx[i] + mgx[i]);
            let denom = jy * jy + jx * jx + diff * diff;
            if denom > 1e-12 {
                field.dy[i] += p.update_scale * diff * jy / denom;
                field.dx[i] += p.update_scale * diff * jx / denom;
            }
        }
        field.dy = blur_clamped(&field.dy, h, w, &kernel);
        field.dx = blur_clamped(&field.dx, h, w, &kernel);
        if field.dy.iter().chain(&field.dx).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "demons field at pyramid level {level}, iteration {it}"
            )));
        }
    }
    Ok(best)
}

/// Coarse-to-fine demons registration of `moving` onto `fixed`.
///
/// The returned field is the lowest-SSD iterate at full resolution, never
/// worse than the zero field.
pub fn demons_register(
    fixed: &Image2D,
    moving: &Image2D,
    p: &DemonsParams,
) -> Result<DisplacementField> {
    p.validate()?;
    fixed.ensure_same_dims(moving.dims())?;
    let mut pyramid = vec![(Plane::from_image(fixed), Plane::from_image(moving))];
    while pyramid.len() < p.pyramid_levels {
        let (f, m) = pyramid.last().expect("non-empty");
        if f.h < 16 || f.w < 16 {
            break;
        }
        let next = (f.half(), m.half());
        pyramid.push(next);
    }
    let levels = pyramid.len();
    let mut field: Option<(Field, usize, usize)> = None;
    for (level, (f, m)) in pyramid.iter().enumerate().rev() {
        let init = match field.take() {
            None => Field {
                dy: vec![0.0; f.h * f.w],
                dx: vec![0.0; f.h * f.w],
            },
            Some((c, ch, cw)) => upsample(&c, ch, cw, f.h, f.w),
        };
        log::debug!("demons level {level}/{levels} at {}x{}", f.h, f.w);
        let out = demons_level(f, m, init, p, level, level == 0)?;
        field = Some((out, f.h, f.w));
    }
    let (f, h, w) = field.expect("at least one level");
    DisplacementField::new(
        h,
        w,
        f.dx.iter().map(|&v| v as f32).collect(),
        f.dy.iter().map(|&v| v as f32).collect(),
    )
}

/// Bilinear sampling of `img` at `(y + dy, x + dx)` with edge clamping.
pub fn warp(img: &Image2D, field: &DisplacementField) -> Result<Image2D> {
    img.ensure_same_dims(field.dims())?;
    let plane = Plane::from_image(img);
    let f = Field {
        dy: field.dy.iter().map(|&v| f64::from(v)).collect(),
        dx: field.dx.iter().map(|&v| f64::from(v)).collect(),
    };
    let out = warp_plane(&plane, &f);
    Image2D::new(
        img.height(),
        img.width(),
        out.v.iter().map(|&v| v as f32).collect(),
    )
}

/// Warps a mask with bilinear interpolation, keeping pixels with weight ≥ 0.5.
pub fn warp_mask(mask: &Mask2D, field: &DisplacementField) -> Result<Mask2D> {
    let w = warp(&mask.to_image(), field)?;
    Ok(Mask2D::from_fn(mask.height(), mask.width(), |y, x| {
        w.get(y, x) >= 0.5
    }))
}

#[derive(Debug, Clone)]
pub struct RegistrationPath {
    pub field: DisplacementField,
    /// Original patient warped with this path's field.
    pub warped: Image2D,
    pub warped_mask: Mask2D,
    pub mi: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationComparison {
    pub direct: RegistrationPath,
    pub inpainted: RegistrationPath,
}

impl RegistrationComparison {
    pub fn improvement(&self) -> f64 {
        self.inpainted.mi - self.direct.mi
    }
}

fn evaluate_path(
    atlas: &Image2D,
    patient: &Image2D,
    tumor: &Mask2D,
    field: DisplacementField,
    bins: usize,
) -> Result<RegistrationPath> {
    let warped = warp(patient, &field)?;
    let warped_mask = warp_mask(tumor, &field)?;
    let mi = mutual_information(atlas, &warped, Some(&warped_mask), bins)?;
    Ok(RegistrationPath {
        field,
        warped,
        warped_mask,
        mi,
    })
}

/// Registers the patient and its inpainted version to the atlas. Both fields
/// are applied to the original patient; MI is measured against the atlas
/// outside the tumor mask warped by the same field.
pub fn compare_registration(
    atlas: &Image2D,
    patient: &Image2D,
    inpainted: &Image2D,
    tumor: &Mask2D,
    p: &DemonsParams,
    bins: usize,
) -> Result<RegistrationComparison> {
    atlas.ensure_same_dims(patient.dims())?;
    atlas.ensure_same_dims(inpainted.dims())?;
    atlas.ensure_same_dims(tumor.dims())?;
    let direct = demons_register(atlas, patient, p)?;
    let via_inpainted = demons_register(atlas, inpainted, p)?;
    Ok(RegistrationComparison {
        direct: evaluate_path(atlas, patient, tumor, direct, bins)?,
        inpainted: evaluate_path(atlas, patient, tumor, via_inpainted, bins)?,
    })
}

/// Writes per-case MI in a two-row table: one row per method, one column per subject, then the mean.
pub fn write_comparison_csv(
    path: impl AsRef<Path>,
    cases: &[RegistrationComparison],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Methods".to_string()];
    header.extend((1..=cases.len()).map(|i| format!("Sub{i}")));
    header.push("Mean".into());
    w.write_record(&header)?;
    type Column = fn(&RegistrationComparison) -> f64;
    let rows: [(&str, Column); 2] = [
        ("Direct registration", |c| c.direct.mi),
        ("Inpainted registration", |c| c.inpainted.mi),
    ];
    for (name, get) in rows {
        let vals: Vec<f64> = cases.iter().map(get).collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        let mut rec = vec![name.to_string()];
        rec.extend(vals.iter().map(|v| format!("{v:.4}")));
        rec.push(format!("{mean:.4}"));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
