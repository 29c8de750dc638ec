//! Convolutional grid detector with hand-written backpropagation.
//!
//! Every hidden layer is a zero-padded `k x k` convolution followed by SiLU;
//! the head is a 1x1 convolution producing, for each of the [`ANCHORS`]
//! slots of a grid cell, [`ANCHOR_FIELDS`] raw values: objectness logit, two
//! class logits, then four box regressors `(x offset, y offset, width,
//! height)` that pass through a sigmoid when decoded. Tensors are
//! channel-major (`[c][y][x]`) `f64` buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::seed::PodRng;
use crate::{PodError, Result};

pub const ANCHOR_FIELDS: usize = 7;
/// Width/height ratio of each anchor slot. A box is predicted by the slot
/// with the closest ratio in log scale, so a square patch on a person does
/// not compete with the person for the same output.
pub const ANCHOR_ASPECTS: [f64; 2] = [0.4, 1.0];
pub const ANCHORS: usize = ANCHOR_ASPECTS.len();
pub const HEAD_OUTPUTS: usize = ANCHORS * ANCHOR_FIELDS;
pub const NUM_CLASSES: usize = 2;

pub(crate) const OBJ: usize = 0;
pub(crate) const CLS0: usize = 1;
pub(crate) const CLS1: usize = 2;
pub(crate) const BOX_X: usize = 3;
pub(crate) const BOX_Y: usize = 4;
pub(crate) const BOX_W: usize = 5;
pub(crate) const BOX_H: usize = 6;

/// Head channel of `field` for anchor slot `anchor`.
#[inline]
pub const fn head_channel(anchor: usize, field: usize) -> usize {
    anchor * ANCHOR_FIELDS + field
}

/// Initial objectness bias; keeps an untrained model's confidences low.
const OBJ_PRIOR_BIAS: f64 = -4.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Side of the square single-channel input.
    pub input_size: usize,
    pub layers: Vec<ConvSpec>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::standard()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_hw: usize,
    pub out_hw: usize,
    pub w_offset: usize,
    pub b_offset: usize,
    pub activated: bool,
}

impl Architecture {
    /// Four stride-2 blocks: 128x128 input to an 8x8 grid.
    pub fn standard() -> Self {
        Architecture {
            input_size: 128,
            layers: vec![
                ConvSpec::new(8, 3, 2),
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(24, 3, 2),
                ConvSpec::new(32, 3, 2),
            ],
        }
    }

    /// Three stride-2 blocks and one stride-1 block: 64x64 input to an 8x8 grid.
    pub fn compact() -> Self {
        Architecture {
            input_size: 64,
            layers: vec![
                ConvSpec::new(8, 3, 2),
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(32, 3, 2),
                ConvSpec::new(32, 3, 1),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(PodError::config("arch.input_size", "must be positive"));
        }
        if self.layers.is_empty() {
            return Err(PodError::config("arch.layers", "need at least one layer"));
        }
        let mut hw = self.input_size;
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 || l.stride == 0 || l.out_channels == 0 {
                return Err(PodError::config(
                    format!("arch.layers[{i}]"),
                    "kernel must be odd; stride and channels positive",
                ));
            }
            hw = (hw - 1) / l.stride + 1;
        }
        if hw == 0 {
            return Err(PodError::config("arch.layers", "grid collapses to zero"));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut in_c = 1;
        let mut hw = self.input_size;
        let mut offset = 0;
        let specs = self
            .layers
            .iter()
            .map(|l| (l.clone(), true))
            .chain(std::iter::once((ConvSpec::new(HEAD_OUTPUTS, 1, 1), false)));
        for (spec, activated) in specs {
            let pad = spec.kernel / 2;
            let out_hw = (hw + 2 * pad - spec.kernel) / spec.stride + 1;
            let w_len = spec.out_channels * in_c * spec.kernel * spec.kernel;
            shapes.push(LayerShape {
                in_c,
                out_c: spec.out_channels,
                k: spec.kernel,
                stride: spec.stride,
                pad,
                in_hw: hw,
                out_hw,
                w_offset: offset,
                b_offset: offset + w_len,
                activated,
            });
            offset += w_len + spec.out_channels;
            in_c = spec.out_channels;
            hw = out_hw;
        }
        shapes
    }

    pub fn grid_size(&self) -> usize {
        self.shapes().last().map(|s| s.out_hw).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.shapes()
            .last()
            .map(|s| s.b_offset + s.out_c)
            .unwrap_or(0)
    }
}

/// Raw head output, `[HEAD_OUTPUTS][grid][grid]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput {
    pub grid: usize,
    pub data: Vec<f64>,
}

impl RawOutput {
    pub fn zeros(grid: usize) -> Self {
        RawOutput {
            grid,
            data: vec![0.0; HEAD_OUTPUTS * grid * grid],
        }
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.grid + row) * self.grid + col
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        let i = self.index(channel, row, col);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

/// Activations retained for the backward pass.
#[derive(Debug, Default)]
pub struct ForwardCache {
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every activated layer.
    pre: Vec<Vec<f64>>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
#[inline]
fn valid_range(
    k_off: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    // ix = ox * stride + k_off - pad, need 0 <= ix < in_len
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let hi = if in_len + pad > k_off {
        ((in_len + pad - k_off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_forward(s: &LayerShape, params: &[f64], input: &[f64], out: &mut [f64]) {
    let (ih, oh) = (s.in_hw, s.out_hw);
    let plane = oh * oh;
    for co in 0..s.out_c {
        let bias = params[s.b_offset + co];
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        out_plane.fill(bias);
        for ci in 0..s.in_c {
            let in_plane = &input[ci * ih * ih..(ci + 1) * ih * ih];
            for ky in 0..s.k {
                let (oy_lo, oy_hi) = valid_range(ky, s.pad, s.stride, ih, oh);
                for kx in 0..s.k {
                    let w = params[s.w_offset + ((co * s.in_c + ci) * s.k + ky) * s.k + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, s.pad, s.stride, ih, oh);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s.stride + ky - s.pad;
                        let in_row = &in_plane[iy * ih..(iy + 1) * ih];
                        let out_row = &mut out_plane[oy * oh..(oy + 1) * oh];
                        if s.stride == 1 {
                            let base = kx as isize - s.pad as isize;
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += w * in_row[(ox as isize + base) as usize];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += w * in_row[ox * s.stride + kx - s.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients and, if requested, the input gradient.
fn conv_backward(
    s: &LayerShape,
    params: &[f64],
    input: &[f64],
    d_out: &[f64],
    grads: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let (ih, oh) = (s.in_hw, s.out_hw);
    let plane = oh * oh;
    for co in 0..s.out_c {
        let d_plane = &d_out[co * plane..(co + 1) * plane];
        grads[s.b_offset + co] += d_plane.iter().sum::<f64>();
        for ci in 0..s.in_c {
            let in_plane = &input[ci * ih * ih..(ci + 1) * ih * ih];
            for ky in 0..s.k {
                let (oy_lo, oy_hi) = valid_range(ky, s.pad, s.stride, ih, oh);
                for kx in 0..s.k {
                    let w_idx = s.w_offset + ((co * s.in_c + ci) * s.k + ky) * s.k + kx;
                    let w = params[w_idx];
                    let (ox_lo, ox_hi) = valid_range(kx, s.pad, s.stride, ih, oh);
                    let mut gw = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s.stride + ky - s.pad;
                        let d_row = &d_plane[oy * oh..(oy + 1) * oh];
                        let in_row = &in_plane[iy * ih..(iy + 1) * ih];
                        for ox in ox_lo..ox_hi {
                            gw += d_row[ox] * in_row[ox * s.stride + kx - s.pad];
                        }
                        if let Some(d_in) = d_in.as_deref_mut() {
                            let d_in_row =
                                &mut d_in[ci * ih * ih + iy * ih..ci * ih * ih + (iy + 1) * ih];
                            for ox in ox_lo..ox_hi {
                                d_in_row[ox * s.stride + kx - s.pad] += w * d_row[ox];
                            }
                        }
                    }
                    grads[w_idx] += gw;
                }
            }
        }
    }
}

impl DetectorModel {
    /// He-style uniform initialization; the objectness bias starts negative.
    pub fn init(arch: Architecture, rng: &mut PodRng) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.shapes();
        let mut params = vec![0.0; arch.param_count()];
        for (li, s) in shapes.iter().enumerate() {
            let fan_in = (s.in_c * s.k * s.k) as f64;
            let head = li + 1 == shapes.len();
            let bound = (6.0 / fan_in).sqrt() * if head { 0.1 } else { 1.0 };
            for p in &mut params[s.w_offset..s.b_offset] {
                *p = rng.gen_range(-bound..bound);
            }
            if head {
                for a in 0..ANCHORS {
                    params[s.b_offset + head_channel(a, OBJ)] = OBJ_PRIOR_BIAS;
                }
            }
        }
        Ok(DetectorModel { arch, params })
    }

    pub fn grid_size(&self) -> usize {
        self.arch.grid_size()
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    /// Resamples `image` to the model input size when necessary.
    pub fn prepare<'a>(&self, image: &'a Image) -> std::borrow::Cow<'a, Image> {
        let n = self.arch.input_size;
        if image.width() == n && image.height() == n {
            std::borrow::Cow::Borrowed(image)
        } else {
            std::borrow::Cow::Owned(image.resized(n, n))
        }
    }

    fn run(&self, input: &[f64], mut cache: Option<&mut ForwardCache>) -> RawOutput {
        let shapes = self.arch.shapes();
        let mut x = input.to_vec();
        for s in &shapes {
            let mut y = vec![0.0; s.out_c * s.out_hw * s.out_hw];
            conv_forward(s, &self.params, &x, &mut y);
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(std::mem::take(&mut x));
            }
            if s.activated {
                if let Some(c) = cache.as_deref_mut() {
                    c.pre.push(y.clone());
                }
                for v in &mut y {
                    *v = silu(*v);
                }
            }
            x = y;
        }
        RawOutput {
            grid: shapes.last().map(|s| s.out_hw).unwrap_or(0),
            data: x,
        }
    }

    /// Forward pass on an image already at the model input size.
    pub fn forward(&self, image: &Image) -> RawOutput {
        let img = self.prepare(image);
        self.run(img.pixels(), None)
    }

    pub fn forward_cached(&self, image: &Image) -> (RawOutput, ForwardCache) {
        let img = self.prepare(image);
        let mut cache = ForwardCache::default();
        let raw = self.run(img.pixels(), Some(&mut cache));
        (raw, cache)
    }

    /// Back-propagates `d_raw` (gradient w.r.t. the raw head output).
    /// Returns the parameter gradient and, when requested, the gradient
    /// w.r.t. the (model-sized) input pixels.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_raw: &[f64],
        want_input_grad: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let shapes = self.arch.shapes();
        let mut grads = vec![0.0; self.params.len()];
        let mut d = d_raw.to_vec();
        let mut pre_idx = cache.pre.len();
        let mut input_grad = None;
        for (li, s) in shapes.iter().enumerate().rev() {
            if s.activated {
                pre_idx -= 1;
                for (dv, &p) in d.iter_mut().zip(&cache.pre[pre_idx]) {
                    *dv *= silu_grad(p);
                }
            }
            let need_in = li > 0 || want_input_grad;
            let mut d_in = need_in.then(|| vec![0.0; s.in_c * s.in_hw * s.in_hw]);
            conv_backward(
                s,
                &self.params,
                &cache.inputs[li],
                &d,
                &mut grads,
                d_in.as_deref_mut(),
            );
            if li == 0 {
                input_grad = d_in;
            } else {
                d = d_in.expect("hidden layers propagate");
            }
        }
        (grads, input_grad)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream;

    fn tiny() -> Architecture {
        Architecture {
            input_size: 12,
            layers: vec![ConvSpec::new(3, 3, 2), ConvSpec::new(4, 3, 1)],
        }
    }

    #[test]
    fn shapes_and_grid() {
        assert_eq!(Architecture::standard().grid_size(), 8);
        assert_eq!(Architecture::compact().grid_size(), 8);
        assert_eq!(tiny().grid_size(), 6);
        let n = tiny().param_count();
        assert_eq!(n, (3 * 9 + 3) + (4 * 3 * 9 + 4) + (14 * 4 + 14));
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for stride in 1..=3 {
            for pad in 0..=2 {
                for k_off in 0..=4 {
                    for in_len in 1..=9 {
                        let out_len = 10;
                        let (lo, hi) = valid_range(k_off, pad, stride, in_len, out_len);
                        for ox in 0..out_len {
                            let ix = (ox * stride + k_off) as isize - pad as isize;
                            let ok = ix >= 0 && (ix as usize) < in_len;
                            assert_eq!(
                                ok,
                                ox >= lo && ox < hi,
                                "s{stride} p{pad} k{k_off} n{in_len} ox{ox}"
                            );
                        }
                    }
                }
            }
        }
    }

    /// Naive direct convolution used as an oracle for the optimized loops.
    fn naive_conv(s: &LayerShape, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.out_c * s.out_hw * s.out_hw];
        for co in 0..s.out_c {
            for oy in 0..s.out_hw {
                for ox in 0..s.out_hw {
                    let mut acc = params[s.b_offset + co];
                    for ci in 0..s.in_c {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= s.in_hw as isize
                                    || ix >= s.in_hw as isize
                                {
                                    continue;
                                }
                                acc += params
                                    [s.w_offset + ((co * s.in_c + ci) * s.k + ky) * s.k + kx]
                                    * input[(ci * s.in_hw + iy as usize) * s.in_hw + ix as usize];
                            }
                        }
                    }
                    out[(co * s.out_hw + oy) * s.out_hw + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_naive() {
        let model = DetectorModel::init(tiny(), &mut stream!(3)).unwrap();
        let mut rng = stream!(4);
        for s in model.arch.shapes() {
            let input: Vec<f64> = (0..s.in_c * s.in_hw * s.in_hw)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut out = vec![0.0; s.out_c * s.out_hw * s.out_hw];
            conv_forward(&s, &model.params, &input, &mut out);
            let expect = naive_conv(&s, &model.params, &input);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = DetectorModel::init(tiny(), &mut stream!(5)).unwrap();
        let mut rng = stream!(6);
        let px: Vec<f64> = (0..144).map(|_| rng.gen_range(0.2..0.8)).collect();
        let img = Image::new(12, 12, px).unwrap();
        let (raw, cache) = model.forward_cached(&img);
        // Linear functional of the output with random coefficients.
        let coeff: Vec<f64> = (0..raw.data.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let (_, gin) = model.backward(&cache, &coeff, true);
        let gin = gin.unwrap();
        let f = |im: &Image| -> f64 {
            model
                .forward(im)
                .data
                .iter()
                .zip(&coeff)
                .map(|(a, b)| a * b)
                .sum()
        };
        for idx in [0usize, 13, 77, 143] {
            let h = 1e-5;
            let mut plus = img.pixels().to_vec();
            let mut minus = img.pixels().to_vec();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (f(&Image::new(12, 12, plus).unwrap())
                - f(&Image::new(12, 12, minus).unwrap()))
                / (2.0 * h);
            assert!(
                (fd - gin[idx]).abs() < 1e-7 * (1.0 + fd.abs()),
                "idx {idx}: {fd} vs {}",
                gin[idx]
            );
        }
    }

    #[test]
    fn untrained_model_is_finite() {
        let model = DetectorModel::init(Architecture::compact(), &mut stream!(1)).unwrap();
        let raw = model.forward(&Image::filled(64, 64, 0.5));
        assert_eq!(raw.grid, 8);
        assert!(raw.is_finite());
    }
}
