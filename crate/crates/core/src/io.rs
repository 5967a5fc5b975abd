//! File formats: SFT1 tensors and grayscale PNG.
//!
//! SFT1 layout (little-endian): magic `SFT1`, `u32` ndim, `ndim` x `u32` dims,
//! then `product(dims)` x `f32` payload in row-major order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Image2D, Mask2D, Tensor};

pub const SFT1_MAGIC: &[u8; 4] = b"SFT1";

/// Little-endian cursor that reports byte offsets in its errors.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset(),
            reason: reason.into(),
        })
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return self.fail(format!(
                "unexpected end of file reading {what} ({n} bytes needed, {} left)",
                self.remaining()
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads `n` finite floats; a NaN or infinity fails with its own offset.
    pub(crate) fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let bytes = self.take(n * 4, what)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (start + i * 4) as u64,
                    reason: format!("non-finite value {v} in {what}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != SFT1_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"SFT1\"".into(),
        });
    }
    let ndim = r.u32("ndim")? as usize;
    if ndim == 0 {
        return r.fail("ndim must be at least 1");
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let d = r.u32("dims")? as usize;
        if d == 0 {
            return r.fail(format!("dimension {i} is zero"));
        }
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            offset: r.offset(),
            reason: format!("dims {dims:?} overflow"),
        })?;
    if count.checked_mul(4) != Some(r.remaining()) {
        return r.fail(format!(
            "payload length mismatch: dims {dims:?} need {} bytes, found {}",
            count.saturating_mul(4),
            r.remaining()
        ));
    }
    let data = r.f32_vec(count, "payload")?;
    Tensor::new(dims, data)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.dims().len() + 4 * t.len());
    out.extend_from_slice(SFT1_MAGIC);
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_bytes(path.as_ref())?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

/// Bit depth used when writing PNG files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit single-channel PNG, mapping intensities linearly to `[0, 1]`.
pub fn read_png_gray(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_png_gray(&bytes)
}

pub fn decode_png_gray(bytes: &[u8]) -> Result<Image2D> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "color type {color:?}; only single-channel grayscale is supported"
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data: Vec<f32> = match depth {
        png::BitDepth::Eight => (0..h)
            .flat_map(|y| {
                let row = &buf[y * frame.line_size..y * frame.line_size + w];
                row.iter().map(|&v| v as f32 / 255.0)
            })
            .collect(),
        png::BitDepth::Sixteen => (0..h)
            .flat_map(|y| {
                let row = &buf[y * frame.line_size..y * frame.line_size + 2 * w];
                row.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            })
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "bit depth {other:?}; only 8 and 16 are supported"
            )))
        }
    };
    Image2D::new(h, w, data)
}

/// Writes `img` clamped to `[0, 1]`, scaled to the full range with round-half-away-from-zero.
pub fn write_png_gray(path: impl AsRef<Path>, img: &Image2D, depth: PngDepth) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_png_gray(img, depth)?)
}

pub fn encode_png_gray(img: &Image2D, depth: PngDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        let raw: Vec<u8> = match depth {
            PngDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                img.data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect()
            }
            PngDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                img.data()
                    .iter()
                    .flat_map(|&v| {
                        let q = (f64::from(v.clamp(0.0, 1.0)) * 65535.0).round() as u16;
                        q.to_be_bytes()
                    })
                    .collect()
            }
        };
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&raw)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

fn is_sft(bytes: &[u8]) -> bool {
    bytes.starts_with(SFT1_MAGIC)
}

/// Reads an image from either SFT1 or PNG, chosen by the file's magic bytes.
/// Values are clamped to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut img = if is_sft(&bytes) {
        Image2D::from_tensor(decode_tensor(&bytes)?)?
    } else {
        decode_png_gray(&bytes)?
    };
    let clamped = img.clamp_unit();
    if clamped > 0 {
        log::warn!(
            "{}: {clamped} values outside [0, 1] were clamped",
            path.display()
        );
    }
    Ok(img)
}

/// Reads a mask from SFT1 (nonzero = hole) or PNG (above mid-gray = hole).
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask2D> {
    let bytes = read_bytes(path.as_ref())?;
    if is_sft(&bytes) {
        Mask2D::from_tensor(&decode_tensor(&bytes)?)
    } else {
        Ok(Mask2D::from_image(&decode_png_gray(&bytes)?, 0.5))
    }
}

/// Writes a mask as an 8-bit PNG, 0 = context and 255 = hole.
pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask2D) -> Result<()> {
    write_png_gray(path, &mask.to_image(), PngDepth::Eight)
}
