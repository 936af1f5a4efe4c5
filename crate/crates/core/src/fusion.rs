//! Global/local fusion and the deconvolutional decoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::crops::CropBox;
use crate::error::{Error, Result};
use crate::layers::{Layer, Stack, Trace};
use crate::ops::ConvSpec;
use crate::tensor::{DiffArray, Scalar};

/// Nearest-neighbour resize of `(N, C, h, w)` to `(N, C, out_h, out_w)`.
pub fn upsample_nearest<T: Scalar>(x: &DiffArray<T>, out_h: usize, out_w: usize) -> Result<DiffArray<T>> {
    let (n, c, h, w) = x.dims4()?;
    let mut y = DiffArray::zeros(&[n, c, out_h, out_w]);
    for plane in 0..n * c {
        let src = &x.values[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y.values[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for i in 0..out_h {
            let si = i * h / out_h;
            for j in 0..out_w {
                dst[i * out_w + j] = src[si * w + j * w / out_w];
            }
        }
    }
    Ok(y)
}

/// Adds the gradient of `upsample_nearest` given `grad_out` shaped like its output.
pub fn upsample_nearest_backward<T: Scalar>(x: &mut DiffArray<T>, grad_out: &[T], out_h: usize, out_w: usize) -> Result<()> {
    let (n, c, h, w) = x.dims4()?;
    if grad_out.len() != n * c * out_h * out_w {
        return Err(Error::dim("upsample gradient has the wrong size"));
    }
    for plane in 0..n * c {
        let src = &grad_out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let dst = &mut x.grad[plane * h * w..(plane + 1) * h * w];
        for i in 0..out_h {
            let si = i * h / out_h;
            for j in 0..out_w {
                dst[si * w + j * w / out_w] += src[i * out_w + j];
            }
        }
    }
    Ok(())
}

/// `global + sum_h upsample(local_h)`. Boxes are carried for placement-aware
/// variants; the broadcast sum does not read them.
pub fn fuse<T: Scalar>(global: &DiffArray<T>, locals: &[DiffArray<T>], boxes: &[CropBox]) -> Result<DiffArray<T>> {
    let (_, c, h, w) = global.dims4()?;
    if !boxes.is_empty() && boxes.len() != locals.len() {
        return Err(Error::dim("one crop box per local feature"));
    }
    let mut fused = global.clone();
    fused.zero_grad();
    for local in locals {
        let (n, lc, _, _) = local.dims4()?;
        if lc != c || n != global.shape()[0] {
            return Err(Error::dim(format!(
                "local feature {:?} cannot fuse into global {:?}",
                local.shape(),
                global.shape()
            )));
        }
        let up = upsample_nearest(local, h, w)?;
        for (o, &v) in fused.values.iter_mut().zip(&up.values) {
            *o += v;
        }
    }
    Ok(fused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderForm {
    /// Deconv + relu blocks.
    Dc,
    /// Conv + relu before each deconv block.
    ClDc,
    /// As `ClDc` with an identity skip around the conv.
    ClDcR,
}

impl fmt::Display for DecoderForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderForm::Dc => "DC",
            DecoderForm::ClDc => "CL+DC",
            DecoderForm::ClDcR => "CL+DC+R",
        })
    }
}

impl FromStr for DecoderForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DC" => Ok(DecoderForm::Dc),
            "CL+DC" => Ok(DecoderForm::ClDc),
            "CL+DC+R" => Ok(DecoderForm::ClDcR),
            other => Err(Error::config(format!("unknown decoder form {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub form: DecoderForm,
    pub depth: usize,
    pub channels: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig::with_depth(DecoderForm::Dc, 3)
    }
}

impl DecoderConfig {
    /// Width 16 per block, 8 in the last.
    pub fn with_depth(form: DecoderForm, depth: usize) -> Self {
        let mut channels = vec![16; depth];
        if let Some(last) = channels.last_mut() {
            *last = 8;
        }
        DecoderConfig { form, depth, channels }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.depth) {
            return Err(Error::config(format!("decoder depth must lie in [2, 6], got {}", self.depth)));
        }
        if self.channels.len() != self.depth || self.channels.contains(&0) {
            return Err(Error::config("one positive channel width per decoder block"));
        }
        Ok(())
    }

    /// Strides per block: stride-1 blocks first, then one stride-2 block per doubling.
    pub fn strides(&self, in_side: usize, out_side: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut ups = 0;
        let mut s = in_side.max(1);
        while s < out_side {
            s *= 2;
            ups += 1;
        }
        if s != out_side {
            return Err(Error::config(format!("decoder cannot reach side {} from {} by doubling", out_side, in_side)));
        }
        if ups > self.depth {
            return Err(Error::config(format!(
                "side {} needs {} doublings from {} but the decoder has {} blocks",
                out_side, ups, in_side, self.depth
            )));
        }
        Ok((0..self.depth).map(|i| if i < self.depth - ups { 1 } else { 2 }).collect())
    }
}

/// Geometry the decoder is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeShape {
    pub in_channels: usize,
    pub in_side: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    pub out_channels: usize,
    pub out_side: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub config: DecoderConfig,
    pub shape: DecodeShape,
    /// Per-frame blocks.
    pub blocks: Stack<T>,
    /// 1x1 conv over the (time x channel) axis, then sigmoid. Weights start at
    /// zero, so an untrained model emits `sigmoid(head_bias)` everywhere.
    pub head: Stack<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace<T> {
    pub blocks: Trace<T>,
    pub head: Trace<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng>(config: DecoderConfig, shape: DecodeShape, head_bias: f64, rng: &mut R) -> Result<Self> {
        let strides = config.strides(shape.in_side, shape.out_side)?;
        let mut layers = Vec::new();
        let mut cin = shape.in_channels;
        for (&cout, &stride) in config.channels.iter().zip(&strides) {
            match config.form {
                DecoderForm::Dc => {}
                DecoderForm::ClDc => {
                    let mut c = ConvSpec::conv_zeros(cin, cin, 3, 1, 1);
                    c.init_uniform(cin * 9, 2f64.sqrt(), rng);
                    layers.push(Layer::Conv(c));
                    layers.push(Layer::Relu);
                }
                DecoderForm::ClDcR => {
                    let mut c = ConvSpec::conv_zeros(cin, cin, 3, 1, 1);
                    c.init_uniform(cin * 9, 0.5, rng);
                    layers.push(Layer::ResidualConv(c));
                }
            }
            let k = if stride == 2 { 4 } else { 3 };
            let mut d = ConvSpec::deconv_zeros(cin, cout, k, stride, 1);
            d.init_uniform(cin * k * k / (stride * stride), 2f64.sqrt(), rng);
            layers.push(Layer::Deconv(d));
            layers.push(Layer::Relu);
            cin = cout;
        }
        let head_in = shape.frames_in * cin;
        let mut head = ConvSpec::conv_zeros(shape.frames_out * shape.out_channels, head_in, 1, 1, 0);
        head.bias.values.iter_mut().for_each(|b| *b = T::lit(head_bias));
        Ok(Decoder {
            config,
            shape,
            blocks: Stack::new(layers),
            head: Stack::new(vec![Layer::Conv(head), Layer::Sigmoid]),
        })
    }

    /// `(T, C~, h, w)` fused features to a `(1, K*C, H, W)` trace; see [`DecoderTrace::prediction`].
    pub fn forward(&self, fused: DiffArray<T>) -> Result<DecoderTrace<T>> {
        let s = self.shape;
        if fused.shape() != [s.frames_in, s.in_channels, s.in_side, s.in_side] {
            return Err(Error::dim(format!(
                "decoder expects {:?}, got {:?}",
                [s.frames_in, s.in_channels, s.in_side, s.in_side],
                fused.shape()
            )));
        }
        let blocks = self.blocks.forward(fused)?;
        let (t, c, h, w) = blocks.output().dims4()?;
        let stacked = blocks.output().clone().reshaped(&[1, t * c, h, w])?;
        let head = self.head.forward(stacked)?;
        Ok(DecoderTrace { blocks, head })
    }

    /// Backpropagates the gradient on the head output; accumulates into the fused input's grad.
    pub fn backward(&mut self, trace: &mut DecoderTrace<T>) -> Result<()> {
        self.head.backward(&mut trace.head, true)?;
        let g = trace.head.input().grad.clone();
        for (o, d) in trace.blocks.output_mut().grad.iter_mut().zip(g) {
            *o += d;
        }
        self.blocks.backward(&mut trace.blocks, true)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DiffArray<T>)>) {
        self.blocks.params(&format!("{}.blocks", prefix), out);
        self.head.params(&format!("{}.head", prefix), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DiffArray<T>)>) {
        self.blocks.params_mut(&format!("{}.blocks", prefix), out);
        self.head.params_mut(&format!("{}.head", prefix), out);
    }
}

impl<T: Scalar> DecoderTrace<T> {
    /// Sigmoid output as `(K, C, H, W)`.
    pub fn prediction(&self, shape: &DecodeShape) -> DiffArray<T> {
        let s = shape;
        self.head
            .output()
            .clone()
            .reshaped(&[s.frames_out, s.out_channels, s.out_side, s.out_side])
            .expect("head emits K * C channels")
    }

    /// Sets the head output gradient from a `(K, C, H, W)` gradient.
    pub fn set_prediction_grad(&mut self, grad: &[T]) {
        self.head.output_mut().grad.copy_from_slice(grad);
    }
}
