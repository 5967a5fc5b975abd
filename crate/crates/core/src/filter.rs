//! Separable Gaussian filtering on f64 planes.

/// Normalized Gaussian taps of length `2·radius + 1`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Correlates with `k` along rows then columns, keeping only windows fully
/// inside the plane. Returns the filtered plane and its `(height, width)`.
pub(crate) fn blur_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    if h < n || w < n {
        return (Vec::new(), 0, 0);
    }
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * rows[(y + t) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}

/// Same-size separable filter with edge replication.
pub(crate) fn blur_clamped(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kt) in k.iter().enumerate() {
                s += kt * data[y * w + clamp(x as isize + t as isize - r, w)];
            }
            rows[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kt) in k.iter().enumerate() {
                s += kt * rows[clamp(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5, 5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn constant_plane_is_fixed() {
        let k = gaussian_kernel(2.0, 6);
        let data = vec![0.3; 20 * 17];
        for v in blur_clamped(&data, 20, 17, &k) {
            assert!((v - 0.3).abs() < 1e-14);
        }
        let (out, oh, ow) = blur_valid(&data, 20, 17, &k);
        assert_eq!((oh, ow), (8, 5));
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-14));
    }

    #[test]
    fn valid_blur_of_small_plane_is_empty() {
        let (out, oh, ow) = blur_valid(&[1.0; 9], 3, 3, &gaussian_kernel(1.0, 2));
        assert!(out.is_empty());
        assert_eq!((oh, ow), (0, 0));
    }
}
