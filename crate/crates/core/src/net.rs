//! Fixed convolutional feature extractor with an exact adjoint.
//!
//! The network is a straight chain of `conv`, `relu` and `maxpool` layers. The
//! feature map is the output of layer `tap_index`. [`forward`] records every
//! activation in a [`ForwardTrace`] so that [`backward`] can return the
//! vector-Jacobian product with respect to the input image.
//!
//! SFW1 layout (little-endian): magic `SFW1`, `u32` version (1), `u32`
//! layer count, then per layer a `u8` kind (0 conv, 1 relu, 2 maxpool). A conv
//! record continues with `u32` out_c, in_c, kh, kw, stride, pad, then
//! `out_c*in_c*kh*kw` weights and `out_c` biases as `f32`. A maxpool record
//! continues with `u32` window, stride. The file ends with a `u32` tap index.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{self, ByteReader};
use crate::tensor::{Image2D, Tensor};

pub const SFW1_MAGIC: &[u8; 4] = b"SFW1";
pub const SFW1_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, kh, kw]`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Network(format!(
                "input {h}x{w} too small for {}x{} kernel",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    #[inline]
    fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((co * self.in_channels + ci) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Network(format!("conv layer {index}: {msg}")));
        if self.out_channels == 0
            || self.in_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
        {
            return fail("zero-sized channel or kernel extent".into());
        }
        if self.stride == 0 {
            return fail("stride must be at least 1".into());
        }
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return fail(format!(
                "weight length mismatch: expected {expected}, got {}",
                self.weights.len()
            ));
        }
        if self.bias.len() != self.out_channels {
            return fail(format!(
                "bias length mismatch: expected {}, got {}",
                self.out_channels,
                self.bias.len()
            ));
        }
        if let Some(i) = self
            .weights
            .iter()
            .chain(&self.bias)
            .position(|v| !v.is_finite())
        {
            return fail(format!("non-finite parameter at index {i}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv2d),
    Relu,
    MaxPool { window: usize, stride: usize },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
        }
    }
}

/// Architecture-only description used to build seeded random networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    /// Square kernel, stride 1, "same" padding.
    Conv {
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Pool2,
}

/// VGG-16 through `relu3_1`: 256 channels at a quarter of the input resolution.
pub fn vgg_relu3_1_layout() -> Vec<LayerShape> {
    use LayerShape::*;
    let conv = |out_channels| Conv {
        out_channels,
        kernel: 3,
    };
    vec![
        conv(64),
        Relu,
        conv(64),
        Relu,
        Pool2,
        conv(128),
        Relu,
        conv(128),
        Relu,
        Pool2,
        conv(256),
        Relu,
    ]
}

/// Same topology as [`vgg_relu3_1_layout`] with 8/16/32 channels, for fast experiments.
pub fn compact_layout() -> Vec<LayerShape> {
    use LayerShape::*;
    let conv = |out_channels| Conv {
        out_channels,
        kernel: 3,
    };
    vec![
        conv(8),
        Relu,
        conv(8),
        Relu,
        Pool2,
        conv(16),
        Relu,
        conv(16),
        Relu,
        Pool2,
        conv(32),
        Relu,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    tap_index: usize,
}

impl NetworkSpec {
    /// Validates the layer chain. `tap_index` is the layer whose output is the feature map.
    pub fn new(layers: Vec<LayerSpec>, tap_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Network("empty network".into()));
        }
        if tap_index >= layers.len() {
            return Err(Error::Network(format!(
                "tap index {tap_index} out of range for {} layers",
                layers.len()
            )));
        }
        let mut channels: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv(conv) => {
                    conv.validate(i)?;
                    if let Some(c) = channels {
                        if c != conv.in_channels {
                            return Err(Error::Network(format!(
                                "channel chain mismatch at layer {i}: previous layer yields {c}, conv expects {}",
                                conv.in_channels
                            )));
                        }
                    }
                    channels = Some(conv.out_channels);
                }
                LayerSpec::Relu => {}
                LayerSpec::MaxPool { window, stride } => {
                    if *window == 0 || *stride == 0 {
                        return Err(Error::Network(format!(
                            "maxpool layer {i}: window and stride must be positive"
                        )));
                    }
                }
            }
        }
        if channels.is_none() {
            return Err(Error::Network("network has no conv layer".into()));
        }
        Ok(Self { layers, tap_index })
    }

    /// He-uniform weights, zero bias, drawn from a seeded ChaCha stream.
    pub fn random(in_channels: usize, shapes: &[LayerShape], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = in_channels;
        let mut layers = Vec::with_capacity(shapes.len());
        for shape in shapes {
            layers.push(match *shape {
                LayerShape::Conv {
                    out_channels,
                    kernel,
                } => {
                    let fan_in = channels * kernel * kernel;
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    let weights = (0..out_channels * fan_in)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    let conv = Conv2d {
                        out_channels,
                        in_channels: channels,
                        kernel_h: kernel,
                        kernel_w: kernel,
                        stride: 1,
                        padding: kernel / 2,
                        weights,
                        bias: vec![0.0; out_channels],
                    };
                    channels = out_channels;
                    LayerSpec::Conv(conv)
                }
                LayerShape::Relu => LayerSpec::Relu,
                LayerShape::Pool2 => LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
            });
        }
        let tap = layers.len().saturating_sub(1);
        Self::new(layers, tap)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn tap_index(&self) -> usize {
        self.tap_index
    }

    pub fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Conv(c) => Some(c.in_channels),
                _ => None,
            })
            .expect("validated network has a conv layer")
    }

    /// Product of pooling strides up to the tap; image extents must be multiples of it.
    pub fn downsample_factor(&self) -> usize {
        self.active_layers()
            .iter()
            .map(|l| match l {
                LayerSpec::MaxPool { stride, .. } => *stride,
                LayerSpec::Conv(c) => c.stride,
                LayerSpec::Relu => 1,
            })
            .product()
    }

    fn active_layers(&self) -> &[LayerSpec] {
        &self.layers[..=self.tap_index]
    }

    /// Shape `[C, h, w]` of the feature map for an `h x w` image.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        let mut dims = [self.input_channels(), height, width];
        for (i, layer) in self.active_layers().iter().enumerate() {
            dims = layer_output_dims(i, layer, dims)?;
        }
        Ok(dims)
    }
}

fn layer_output_dims(index: usize, layer: &LayerSpec, dims: [usize; 3]) -> Result<[usize; 3]> {
    let [c, h, w] = dims;
    match layer {
        LayerSpec::Conv(conv) => {
            if conv.in_channels != c {
                return Err(Error::Network(format!(
                    "channel mismatch at layer {index}: input has {c}, conv expects {}",
                    conv.in_channels
                )));
            }
            let (oh, ow) = conv.output_hw(h, w)?;
            Ok([conv.out_channels, oh, ow])
        }
        LayerSpec::Relu => Ok(dims),
        LayerSpec::MaxPool { window, stride } => {
            if h < *window
                || w < *window
                || (h - window) % stride != 0
                || (w - window) % stride != 0
            {
                return Err(Error::Network(format!(
                    "maxpool layer {index}: {h}x{w} input does not tile exactly with window {window} stride {stride}"
                )));
            }
            Ok([c, (h - window) / stride + 1, (w - window) / stride + 1])
        }
    }
}

/// Feature-map tensor `[C, h, w]` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    /// Index of the tap layer that produced it.
    pub layer: usize,
    /// Spatial size of the image it was computed from.
    pub input_hw: (usize, usize),
}

impl FeatureMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.tensor.chw().expect("feature map is rank 3")
    }
}

/// Input and every layer activation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Tensor,
    activations: Vec<Tensor>,
    /// Grayscale input was replicated across this many channels.
    replicated: usize,
    image_hw: (usize, usize),
}

impl ForwardTrace {
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace is non-empty")
    }
}

fn image_to_input(net: &NetworkSpec, img: &Image2D) -> Result<(Tensor, usize)> {
    let want = net.input_channels();
    let (h, w) = img.dims();
    match want {
        1 => Ok((img.to_tensor(), 1)),
        3 => {
            let mut data = Vec::with_capacity(3 * h * w);
            for _ in 0..3 {
                data.extend_from_slice(img.data());
            }
            Ok((Tensor::from_parts(vec![3, h, w], data), 3))
        }
        c => Err(Error::Network(format!(
            "channel mismatch: grayscale image cannot feed a {c}-channel first conv"
        ))),
    }
}

/// Runs the network up to its tap layer.
pub fn forward(net: &NetworkSpec, img: &Image2D) -> Result<(FeatureMap, ForwardTrace)> {
    let (input, replicated) = image_to_input(net, img)?;
    let mut dims = [input.dims()[0], img.height(), img.width()];
    let mut activations: Vec<Tensor> = Vec::with_capacity(net.tap_index + 1);
    for (i, layer) in net.active_layers().iter().enumerate() {
        let out_dims = layer_output_dims(i, layer, dims)?;
        let x = activations.last().unwrap_or(&input);
        let y = match layer {
            LayerSpec::Conv(conv) => conv_forward(conv, x.data(), dims, out_dims, true),
            LayerSpec::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool { window, stride } => {
                maxpool_forward(x.data(), dims, out_dims, *window, *stride)
            }
        };
        activations.push(Tensor::from_parts(out_dims.to_vec(), y));
        dims = out_dims;
    }
    let feature = FeatureMap {
        tensor: activations.last().cloned().expect("at least one layer"),
        layer: net.tap_index,
        input_hw: img.dims(),
    };
    Ok((
        feature,
        ForwardTrace {
            input,
            activations,
            replicated,
            image_hw: img.dims(),
        },
    ))
}

/// Vector-Jacobian product: gradient of `<grad_out, features>` with respect to the image.
pub fn backward(net: &NetworkSpec, trace: &ForwardTrace, grad_out: &Tensor) -> Result<Image2D> {
    let layers = net.active_layers();
    if trace.activations.len() != layers.len() {
        return Err(Error::Network(format!(
            "trace has {} activations, network taps after {} layers",
            trace.activations.len(),
            layers.len()
        )));
    }
    if grad_out.dims() != trace.output().dims() {
        return Err(Error::DimMismatch {
            expected: trace.output().dims().to_vec(),
            actual: grad_out.dims().to_vec(),
        });
    }
    let mut grad = grad_out.data().to_vec();
    for (i, layer) in layers.iter().enumerate().rev() {
        let x = if i == 0 {
            &trace.input
        } else {
            &trace.activations[i - 1]
        };
        let y = &trace.activations[i];
        let in_dims = dims3(x);
        let out_dims = dims3(y);
        grad = match layer {
            LayerSpec::Conv(conv) => conv_backward(conv, &grad, in_dims, out_dims),
            LayerSpec::Relu => grad
                .iter()
                .zip(y.data())
                .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool { window, stride } => {
                maxpool_backward(x.data(), &grad, in_dims, out_dims, *window, *stride)
            }
        };
    }
    let (h, w) = trace.image_hw;
    let plane = h * w;
    let mut out = grad[..plane].to_vec();
    for c in 1..trace.replicated {
        for (o, g) in out.iter_mut().zip(&grad[c * plane..(c + 1) * plane]) {
            *o += g;
        }
    }
    Ok(Image2D::from_parts(h, w, out))
}

/// Jacobian-vector product: directional derivative of the features along `v`
/// at the input recorded in `trace`.
pub fn jvp(net: &NetworkSpec, trace: &ForwardTrace, v: &Image2D) -> Result<Tensor> {
    let layers = net.active_layers();
    if trace.activations.len() != layers.len() {
        return Err(Error::Network("trace does not match network".into()));
    }
    if v.dims() != trace.image_hw {
        let (h, w) = trace.image_hw;
        return Err(Error::DimMismatch {
            expected: vec![h, w],
            actual: vec![v.height(), v.width()],
        });
    }
    let mut t = Vec::with_capacity(trace.input.len());
    for _ in 0..trace.replicated {
        t.extend_from_slice(v.data());
    }
    for (i, layer) in layers.iter().enumerate() {
        let x = if i == 0 {
            &trace.input
        } else {
            &trace.activations[i - 1]
        };
        let y = &trace.activations[i];
        let (in_dims, out_dims) = (dims3(x), dims3(y));
        t = match layer {
            LayerSpec::Conv(conv) => conv_forward(conv, &t, in_dims, out_dims, false),
            LayerSpec::Relu => t
                .iter()
                .zip(y.data())
                .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool { window, stride } => {
                let [c, h, w] = in_dims;
                let [_, oh, ow] = out_dims;
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            out.push(
                                t[ch * h * w + pool_argmax(plane, w, oy, ox, *window, *stride)],
                            );
                        }
                    }
                }
                out
            }
        };
    }
    Ok(Tensor::from_parts(trace.output().dims().to_vec(), t))
}

fn dims3(t: &Tensor) -> [usize; 3] {
    let (c, h, w) = t.chw().expect("activations are rank 3");
    [c, h, w]
}

/// Output columns `ox` whose source column `ox*stride + kx - pad` lies inside `[0, w_in)`.
#[inline]
fn valid_range(
    out_len: usize,
    in_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    // ox*stride + k >= pad  and  ox*stride + k - pad < in_len
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi_excl = if in_len + pad <= k {
        0
    } else {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    };
    (lo, hi_excl.max(lo))
}

fn conv_forward(
    conv: &Conv2d,
    x: &[f32],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    with_bias: bool,
) -> Vec<f32> {
    let [cin, h, w] = in_dims;
    let [cout, oh, ow] = out_dims;
    let (s, p) = (conv.stride, conv.padding);
    let mut out = vec![0.0f32; cout * oh * ow];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(co, plane)| {
            plane.fill(if with_bias { conv.bias[co] } else { 0.0 });
            for ci in 0..cin {
                let src = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..conv.kernel_h {
                    let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                    for kx in 0..conv.kernel_w {
                        let wv = conv.weight(co, ci, ky, kx);
                        let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let dst = &mut plane[oy * ow + ox0..oy * ow + ox1];
                            let row = &src[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                for (d, &v) in dst.iter_mut().zip(&row[ix0..ix0 + (ox1 - ox0)]) {
                                    *d += wv * v;
                                }
                            } else {
                                for (j, d) in dst.iter_mut().enumerate() {
                                    *d += wv * row[(ox0 + j) * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

fn conv_backward(conv: &Conv2d, g: &[f32], in_dims: [usize; 3], out_dims: [usize; 3]) -> Vec<f32> {
    let [_, h, w] = in_dims;
    let [cout, oh, ow] = out_dims;
    let (s, p) = (conv.stride, conv.padding);
    let mut grad = vec![0.0f32; in_dims[0] * h * w];
    grad.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(ci, plane)| {
            for co in 0..cout {
                let src = &g[co * oh * ow..(co + 1) * oh * ow];
                for ky in 0..conv.kernel_h {
                    let (oy0, oy1) = valid_range(oh, h, ky, s, p);
                    for kx in 0..conv.kernel_w {
                        let wv = conv.weight(co, ci, ky, kx);
                        let (ox0, ox1) = valid_range(ow, w, kx, s, p);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let gout = &src[oy * ow + ox0..oy * ow + ox1];
                            let row = &mut plane[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                for (d, &v) in row[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(gout) {
                                    *d += wv * v;
                                }
                            } else {
                                for (j, &v) in gout.iter().enumerate() {
                                    row[(ox0 + j) * s + kx - p] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        });
    grad
}

/// Index within the plane of the first maximum of the pooling window.
#[inline]
fn pool_argmax(
    plane: &[f32],
    w: usize,
    oy: usize,
    ox: usize,
    window: usize,
    stride: usize,
) -> usize {
    let mut best = (oy * stride) * w + ox * stride;
    let mut best_v = plane[best];
    for dy in 0..window {
        for dx in 0..window {
            let i = (oy * stride + dy) * w + ox * stride + dx;
            if plane[i] > best_v {
                best_v = plane[i];
                best = i;
            }
        }
    }
    best
}

fn maxpool_forward(
    x: &[f32],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    window: usize,
    stride: usize,
) -> Vec<f32> {
    let [c, h, w] = in_dims;
    let [_, oh, ow] = out_dims;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[pool_argmax(plane, w, oy, ox, window, stride)]);
            }
        }
    }
    out
}

fn maxpool_backward(
    x: &[f32],
    g: &[f32],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    window: usize,
    stride: usize,
) -> Vec<f32> {
    let [c, h, w] = in_dims;
    let [_, oh, ow] = out_dims;
    let mut grad = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let gplane = &mut grad[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = pool_argmax(plane, w, oy, ox, window, stride);
                gplane[i] += g[ch * oh * ow + oy * ow + ox];
            }
        }
    }
    grad
}

pub fn decode_network(bytes: &[u8]) -> Result<NetworkSpec> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != SFW1_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"SFW1\"".into(),
        });
    }
    let version = r.u32("version")?;
    if version != SFW1_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported SFW1 version {version}"),
        });
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::Network("empty network".into()));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let kind = r.u8("layer kind")?;
        layers.push(match kind {
            0 => {
                let mut field = |name: &str| r.u32(name).map(|v| v as usize);
                let out_channels = field("out_c")?;
                let in_channels = field("in_c")?;
                let kernel_h = field("kh")?;
                let kernel_w = field("kw")?;
                let stride = field("stride")?;
                let padding = field("pad")?;
                let n = out_channels
                    .checked_mul(in_channels)
                    .and_then(|v| v.checked_mul(kernel_h))
                    .and_then(|v| v.checked_mul(kernel_w))
                    .filter(|&n| n <= r.remaining() / 4)
                    .ok_or_else(|| Error::Format {
                        offset: r.offset(),
                        reason: format!("conv layer {i}: weight length exceeds file size"),
                    })?;
                let weights = r.f32_vec(n, "conv weights")?;
                let bias = r.f32_vec(out_channels, "conv biases")?;
                LayerSpec::Conv(Conv2d {
                    out_channels,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    weights,
                    bias,
                })
            }
            1 => LayerSpec::Relu,
            2 => {
                let window = r.u32("window")? as usize;
                let stride = r.u32("stride")? as usize;
                LayerSpec::MaxPool { window, stride }
            }
            k => return r.fail(format!("layer {i}: unknown kind {k}")),
        });
    }
    let tap = r.u32("tap index")? as usize;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes after tap index", r.remaining()));
    }
    NetworkSpec::new(layers, tap)
}

pub fn encode_network(net: &NetworkSpec) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(SFW1_MAGIC);
    u32le(&mut out, SFW1_VERSION as usize);
    u32le(&mut out, net.layers.len());
    for layer in &net.layers {
        match layer {
            LayerSpec::Conv(c) => {
                out.push(0);
                for v in [
                    c.out_channels,
                    c.in_channels,
                    c.kernel_h,
                    c.kernel_w,
                    c.stride,
                    c.padding,
                ] {
                    u32le(&mut out, v);
                }
                for v in c.weights.iter().chain(&c.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            LayerSpec::Relu => out.push(1),
            LayerSpec::MaxPool { window, stride } => {
                out.push(2);
                u32le(&mut out, *window);
                u32le(&mut out, *stride);
            }
        }
    }
    u32le(&mut out, net.tap_index);
    out
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    decode_network(&io::read_bytes(path.as_ref())?)
}

pub fn save_network(path: impl AsRef<Path>, net: &NetworkSpec) -> Result<()> {
    io::write_bytes(path.as_ref(), &encode_network(net))
}
