//! Dense tensors, grayscale images and hole masks.
//!
//! A [`Tensor`] is the universal carrier: images are `[1, H, W]`, feature maps
//! are `[C, h, w]`, displacement fields are `[2, H, W]`. [`Image2D`] and
//! [`Mask2D`] are thin 2-D views with the invariants the pipeline relies on.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Row-major `f32` tensor. The last dimension is the width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "dims must be non-empty and positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[C, H, W]` view of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidTensor(format!(
                "expected a [C, H, W] tensor, got {:?}",
                self.dims
            ))),
        }
    }

    pub fn width(&self) -> usize {
        *self.dims.last().expect("tensor has at least one dim")
    }
}

/// Single-channel image, conventionally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image2D {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![1, height, width], data).and_then(Self::from_tensor)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(height * width, data.len());
        Self {
            height,
            width,
            data,
        }
    }

    /// Accepts `[1, H, W]` or `[H, W]`.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (height, width) = match t.dims[..] {
            [1, h, w] | [h, w] => (h, w),
            _ => {
                return Err(Error::InvalidTensor(format!(
                    "expected an image tensor [1, H, W] or [H, W], got {:?}",
                    t.dims
                )))
            }
        };
        Ok(Self {
            height,
            width,
            data: t.data,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.data.clone())
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Clamps to `[0, 1]` and returns how many pixels were changed.
    pub fn clamp_unit(&mut self) -> usize {
        let mut changed = 0;
        for v in &mut self.data {
            let c = v.clamp(0.0, 1.0);
            if c != *v {
                changed += 1;
                *v = c;
            }
        }
        changed
    }

    pub fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimMismatch {
                expected: vec![self.height, self.width],
                actual: vec![other.0, other.1],
            });
        }
        Ok(())
    }

    /// Edge-replicating pad on the bottom and right so both extents are multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Image2D {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        Image2D::from_fn(h, w, |y, x| {
            self.get(y.min(self.height - 1), x.min(self.width - 1))
        })
    }

    pub fn crop(&self, height: usize, width: usize) -> Image2D {
        Image2D::from_fn(height, width, |y, x| self.get(y, x))
    }
}

/// Hole mask. `true` marks a hole pixel, `false` a context pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask2D {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "mask {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn all_context(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Nonzero values are holes. Accepts `[1, H, W]` or `[H, W]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let img = Image2D::from_tensor(t.clone())?;
        Ok(Self::from_image(&img, 0.0))
    }

    /// Pixels strictly above `threshold` are holes.
    pub fn from_image(img: &Image2D, threshold: f32) -> Self {
        Self {
            height: img.height,
            width: img.width,
            bits: img.data.iter().map(|&v| v > threshold).collect(),
        }
    }

    /// Hole = 1.0, context = 0.0.
    pub fn to_image(&self) -> Image2D {
        Image2D::from_parts(
            self.height,
            self.width,
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_hole(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, hole: bool) {
        self.bits[y * self.width + x] = hole;
    }

    pub fn hole_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn context_count(&self) -> usize {
        self.bits.len() - self.hole_count()
    }

    pub fn hole_fraction(&self) -> f64 {
        self.hole_count() as f64 / self.bits.len() as f64
    }

    pub fn pad_to_multiple(&self, multiple: usize) -> Mask2D {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        Mask2D::from_fn(h, w, |y, x| {
            self.is_hole(y.min(self.height - 1), x.min(self.width - 1))
        })
    }

    /// 4-connected hole components, each as a list of linear indices in BFS order.
    pub fn hole_components(&self) -> Vec<Vec<usize>> {
        let (h, w) = (self.height, self.width);
        let mut seen = vec![false; h * w];
        let mut components = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if !self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                for j in neighbors4(i, h, w).into_iter().flatten() {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            components.push(comp);
        }
        components
    }

    /// Checks that context is nonempty and every hole component touches context.
    pub fn validate_fillable(&self) -> Result<()> {
        if self.context_count() == 0 {
            return Err(Error::EmptyContext);
        }
        let (h, w) = (self.height, self.width);
        for comp in self.hole_components() {
            let touches = comp.iter().any(|&i| {
                neighbors4(i, h, w)
                    .into_iter()
                    .flatten()
                    .any(|j| !self.bits[j])
            });
            if !touches {
                return Err(Error::IsolatedHole {
                    row: comp[0] / w,
                    col: comp[0] % w,
                });
            }
        }
        Ok(())
    }
}

/// In-bounds 4-neighbours of a linear index, in up/left/right/down order.
#[inline]
pub(crate) fn neighbors4(i: usize, h: usize, w: usize) -> [Option<usize>; 4] {
    let (y, x) = (i / w, i % w);
    [
        (y > 0).then(|| i - w),
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y + 1 < h).then(|| i + w),
    ]
}

/// Horizontal reflection about the vertical centerline: `x -> W - 1 - x`.
pub trait Mirror {
    fn mirror_horizontal(&self) -> Self;
}

fn mirror_rows<T: Copy>(data: &[T], width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(width) {
        out.extend(row.iter().rev());
    }
    out
}

impl Mirror for Tensor {
    fn mirror_horizontal(&self) -> Self {
        Tensor::from_parts(self.dims.clone(), mirror_rows(&self.data, self.width()))
    }
}

impl Mirror for Image2D {
    fn mirror_horizontal(&self) -> Self {
        Image2D::from_parts(self.height, self.width, mirror_rows(&self.data, self.width))
    }
}

impl Mirror for Mask2D {
    fn mirror_horizontal(&self) -> Self {
        Mask2D {
            height: self.height,
            width: self.width,
            bits: mirror_rows(&self.bits, self.width),
        }
    }
}

/// Replaces hole pixels by `fill`, leaving context untouched.
pub fn apply_mask(img: &Image2D, mask: &Mask2D, fill: f32) -> Result<Image2D> {
    img.ensure_same_dims(mask.dims())?;
    let data = img
        .data
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &hole)| if hole { fill } else { v })
        .collect();
    Ok(Image2D::from_parts(img.height, img.width, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mirror_row() {
        let t = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.mirror_horizontal().data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn mirror_width_one_is_fixed_point() {
        let img = Image2D::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(img.mirror_horizontal(), img);
    }

    #[test]
    fn mirror_mask_twice() {
        let mask = Mask2D::from_fn(7, 5, |y, x| (y * 31 + x * 17) % 3 == 0);
        let once = mask.mirror_horizontal();
        assert_ne!(once, mask);
        assert_eq!(once.mirror_horizontal(), mask);
    }

    #[test]
    fn new_rejects_bad_tensors() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![0.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn apply_mask_cases() {
        let img = Image2D::from_fn(4, 4, |y, x| (y * 4 + x) as f32 / 16.0);
        let none = Mask2D::all_context(4, 4);
        assert_eq!(apply_mask(&img, &none, 0.0).unwrap(), img);

        let all = Mask2D::from_fn(4, 4, |_, _| true);
        let filled = apply_mask(&img, &all, 0.7).unwrap();
        assert!(filled.data().iter().all(|&v| v == 0.7));

        let checker = Mask2D::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
        let out = apply_mask(&img, &checker, 0.0).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                if !checker.is_hole(y, x) {
                    assert_eq!(out.get(y, x).to_bits(), img.get(y, x).to_bits());
                } else {
                    assert_eq!(out.get(y, x), 0.0);
                }
            }
        }

        let wrong = Mask2D::all_context(4, 5);
        assert!(matches!(
            apply_mask(&img, &wrong, 0.0),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn isolated_hole_detected() {
        let all = Mask2D::from_fn(3, 3, |_, _| true);
        assert!(matches!(all.validate_fillable(), Err(Error::EmptyContext)));
        let ok = Mask2D::from_fn(3, 3, |y, x| y == 1 && x == 1);
        ok.validate_fillable().unwrap();
        assert_eq!(ok.hole_components().len(), 1);
    }

    #[test]
    fn pad_and_crop() {
        let img = Image2D::from_fn(5, 6, |y, x| (y * 6 + x) as f32);
        let padded = img.pad_to_multiple(4);
        assert_eq!(padded.dims(), (8, 8));
        assert_eq!(padded.get(7, 7), img.get(4, 5));
        assert_eq!(padded.crop(5, 6), img);
    }

    proptest! {
        #[test]
        fn mirror_is_involution(
            dims in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 / 7.0)
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = t.mirror_horizontal().mirror_horizontal();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn apply_mask_idempotent(bits in prop::collection::vec(any::<bool>(), 20), fill in 0.0f32..1.0) {
            let img = Image2D::from_fn(4, 5, |y, x| (y * 5 + x) as f32 / 20.0);
            let mask = Mask2D::new(4, 5, bits).unwrap();
            let once = apply_mask(&img, &mask, fill).unwrap();
            let twice = apply_mask(&once, &mask, fill).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
