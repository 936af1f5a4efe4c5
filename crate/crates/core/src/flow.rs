//! Flow-estimating expert components and the warping loss.
//!
//! Flow channel 0 (`u`) is added to the row index and channel 1 (`v`) to the
//! column index when the next step is sampled: `I_{t+1}(i + u, j + v)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Layer, Stack, Trace};
use crate::ops::{bilinear_tap, ConvSpec};
use crate::tensor::{DiffArray, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    /// 7 for the global pipeline, 3 for the local one.
    pub kernel: usize,
    /// Width of the two feature-extraction convolutions.
    pub feature_channels: usize,
    /// Channels of the projected representation.
    pub proj_channels: usize,
    /// Side of the incoming latent map.
    pub in_side: usize,
    /// Side of the projected representation; `in_side * 2^n`.
    pub out_side: usize,
}

impl ExpertConfig {
    pub fn upsamplings(&self) -> Result<usize> {
        let mut n = 0;
        let mut s = self.in_side;
        while s < self.out_side {
            s *= 2;
            n += 1;
        }
        if s != self.out_side || self.in_side == 0 {
            return Err(Error::config(format!(
                "expert cannot map side {} to {} by doubling",
                self.in_side, self.out_side
            )));
        }
        Ok(n)
    }
}

/// Stride-2 deconvs (kernel 4, pad 1) that double the side `n` times, or a
/// single shape-preserving deconv (kernel 3, pad 1) when `n == 0`. Relu
/// between layers, none after the last.
fn upsampler<T: Scalar, R: Rng>(cin: usize, cout: usize, n: usize, rng: &mut R) -> Vec<Layer<T>> {
    let count = n.max(1);
    let mut layers = Vec::new();
    let mut c = cin;
    for i in 0..count {
        let (k, stride) = if n == 0 { (3, 1) } else { (4, 2) };
        let mut d = ConvSpec::deconv_zeros(c, cout, k, stride, 1);
        d.init_uniform(c * k * k / (stride * stride), 1.0, rng);
        layers.push(Layer::Deconv(d));
        if i + 1 < count {
            layers.push(Layer::Relu);
        }
        c = cout;
    }
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert<T> {
    pub config: ExpertConfig,
    /// Conv+relu, conv+relu.
    pub features: Stack<T>,
    /// Deconvs up to the projected representation.
    pub upsample: Stack<T>,
    /// Adjacent-step feature pairs to a 2-channel flow.
    pub flow_head: Stack<T>,
    /// The linear branch the warping loss is evaluated on.
    pub projection: Stack<T>,
}

#[derive(Debug, Clone)]
pub struct ExpertTrace<T> {
    pub features: Trace<T>,
    pub upsample: Trace<T>,
    pub flow_head: Trace<T>,
    pub seq_len: usize,
}

impl<T: Scalar> ExpertTrace<T> {
    /// `(G*T, C~, H~, W~)`.
    pub fn projected(&self) -> &DiffArray<T> {
        self.upsample.output()
    }

    /// `(G*(T-1), 2, H~, W~)`.
    pub fn flows(&self) -> &DiffArray<T> {
        self.flow_head.output()
    }
}

impl<T: Scalar> Expert<T> {
    pub fn new<R: Rng>(config: ExpertConfig, in_channels: usize, rng: &mut R) -> Result<Self> {
        let n_up = config.upsamplings()?;
        if config.kernel % 2 == 0 {
            return Err(Error::config("expert kernel must be odd"));
        }
        let (k, f, c) = (config.kernel, config.feature_channels, config.proj_channels);
        let mut c1 = ConvSpec::conv_zeros(f, in_channels, k, 1, k / 2);
        c1.init_uniform(in_channels * k * k, 2f64.sqrt(), rng);
        let mut c2 = ConvSpec::conv_zeros(f, f, k, 1, k / 2);
        c2.init_uniform(f * k * k, 2f64.sqrt(), rng);
        let features = Stack::new(vec![Layer::Conv(c1), Layer::Relu, Layer::Conv(c2), Layer::Relu]);
        let upsample = Stack::new(upsampler(f, c, n_up, rng));
        let mut head = ConvSpec::conv_zeros(2, 2 * c, 3, 1, 1);
        head.init_uniform(2 * c * 9, 0.1, rng);
        let flow_head = Stack::new(vec![Layer::Conv(head)]);
        let mut proj = vec![{
            let mut p = ConvSpec::conv_zeros(c, in_channels, 1, 1, 0);
            p.init_uniform(in_channels, 1.0, rng);
            Layer::Conv(p)
        }];
        for _ in 0..n_up {
            let mut d = ConvSpec::deconv_zeros(c, c, 4, 2, 1);
            d.init_uniform(c * 4, 1.0, rng);
            proj.push(Layer::Deconv(d));
        }
        Ok(Expert { config, features, upsample, flow_head, projection: Stack::new(proj) })
    }

    /// Projects `(G*T, D, h, w)` latents and estimates `T - 1` flows per group of `seq_len` steps.
    pub fn estimate_flow(&self, z: DiffArray<T>, seq_len: usize) -> Result<ExpertTrace<T>> {
        let features = self.features.forward(z)?;
        let upsample = self.upsample.forward(features.output().clone())?;
        let pairs = pair_concat(upsample.output(), seq_len)?;
        let flow_head = self.flow_head.forward(pairs)?;
        Ok(ExpertTrace { features, upsample, flow_head, seq_len })
    }

    /// Backpropagates gradients stored on the projected output and the flows.
    /// Accumulates into `z_grad` (the expert input gradient).
    pub fn backward(&mut self, trace: &mut ExpertTrace<T>, z_grad: &mut [T]) -> Result<()> {
        self.flow_head.backward(&mut trace.flow_head, true)?;
        pair_concat_backward(trace.flow_head.input(), trace.upsample.output_mut(), trace.seq_len)?;
        self.upsample.backward(&mut trace.upsample, true)?;
        let up_in = trace.upsample.input().grad.clone();
        let feat_out = trace.features.output_mut();
        for (g, d) in feat_out.grad.iter_mut().zip(up_in) {
            *g += d;
        }
        self.features.backward(&mut trace.features, true)?;
        for (g, &d) in z_grad.iter_mut().zip(&trace.features.input().grad) {
            *g += d;
        }
        Ok(())
    }

    pub fn linear_projection(&self, z: DiffArray<T>) -> Result<Trace<T>> {
        self.projection.forward(z)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DiffArray<T>)>) {
        self.features.params(&format!("{}.features", prefix), out);
        self.upsample.params(&format!("{}.upsample", prefix), out);
        self.flow_head.params(&format!("{}.flow_head", prefix), out);
        self.projection.params(&format!("{}.projection", prefix), out);
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DiffArray<T>)>) {
        self.features.params_mut(&format!("{}.features", prefix), out);
        self.upsample.params_mut(&format!("{}.upsample", prefix), out);
        self.flow_head.params_mut(&format!("{}.flow_head", prefix), out);
        self.projection.params_mut(&format!("{}.projection", prefix), out);
    }
}

fn group_dims<T: Scalar>(x: &DiffArray<T>, seq_len: usize) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if seq_len < 2 {
        return Err(Error::config("flow needs at least 2 steps"));
    }
    if n % seq_len != 0 {
        return Err(Error::dim(format!("{} steps do not split into sequences of {}", n, seq_len)));
    }
    Ok((n / seq_len, c, h * w))
}

/// `(G*T, C, h, w) -> (G*(T-1), 2C, h, w)`, step `t` stacked on step `t + 1`.
pub fn pair_concat<T: Scalar>(x: &DiffArray<T>, seq_len: usize) -> Result<DiffArray<T>> {
    let (groups, c, hw) = group_dims(x, seq_len)?;
    let s = x.shape();
    let frame = c * hw;
    let mut out = DiffArray::zeros(&[groups * (seq_len - 1), 2 * c, s[2], s[3]]);
    for g in 0..groups {
        for t in 0..seq_len - 1 {
            let src = (g * seq_len + t) * frame;
            let dst = (g * (seq_len - 1) + t) * 2 * frame;
            out.values[dst..dst + 2 * frame].copy_from_slice(&x.values[src..src + 2 * frame]);
        }
    }
    Ok(out)
}

pub fn pair_concat_backward<T: Scalar>(pairs: &DiffArray<T>, x: &mut DiffArray<T>, seq_len: usize) -> Result<()> {
    let (groups, c, hw) = group_dims(x, seq_len)?;
    let frame = c * hw;
    for g in 0..groups {
        for t in 0..seq_len - 1 {
            let src = (g * (seq_len - 1) + t) * 2 * frame;
            let dst = (g * seq_len + t) * frame;
            for (o, &d) in x.grad[dst..dst + 2 * frame].iter_mut().zip(&pairs.grad[src..src + 2 * frame]) {
                *o += d;
            }
        }
    }
    Ok(())
}

/// `warped(i, j) = next(i + u(i, j), j + v(i, j))`, bilinear with border clamp.
pub fn warp<T: Scalar>(next: &[T], u: &[T], v: &[T], h: usize, w: usize) -> Result<Vec<T>> {
    if next.len() != h * w || u.len() != h * w || v.len() != h * w {
        return Err(Error::dim("warp operands must all be h x w"));
    }
    Ok((0..h * w)
        .map(|k| {
            let (i, j) = (k / w, k % w);
            bilinear_tap(next, h, w, T::lit(i as f64) + u[k], T::lit(j as f64) + v[k]).value
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLoss<T> {
    pub loss: T,
    pub grad_features: Vec<T>,
    pub grad_flows: Vec<T>,
}

/// Mean over groups, transitions, channels and pixels of
/// `|I_t(i, j) - I_{t+1}(i + u_t(i, j), j + v_t(i, j))|`.
///
/// `features` is `(G*T, C, h, w)`, `flows` is `(G*(T-1), 2, h, w)`. The
/// absolute value takes subgradient 0 at 0.
pub fn flow_loss_grouped<T: Scalar>(features: &DiffArray<T>, flows: &DiffArray<T>, seq_len: usize) -> Result<FlowLoss<T>> {
    let (groups, c, hw) = group_dims(features, seq_len)?;
    let s = features.shape();
    let (h, w) = (s[2], s[3]);
    if flows.shape() != [groups * (seq_len - 1), 2, h, w] {
        return Err(Error::dim(format!(
            "flows shaped {:?}, expected {:?}",
            flows.shape(),
            [groups * (seq_len - 1), 2, h, w]
        )));
    }
    let frame = c * hw;
    let count = groups * (seq_len - 1) * frame;
    let inv = T::lit(1.0 / count as f64);
    let mut total = T::zero();
    let mut grad_features = vec![T::zero(); features.len()];
    let mut grad_flows = vec![T::zero(); flows.len()];
    for g in 0..groups {
        for t in 0..seq_len - 1 {
            let cur = (g * seq_len + t) * frame;
            let nxt = cur + frame;
            let fl = (g * (seq_len - 1) + t) * 2 * hw;
            for ch in 0..c {
                let plane = nxt + ch * hw;
                let next = &features.values[plane..plane + hw];
                for k in 0..hw {
                    let (i, j) = (k / w, k % w);
                    let u = flows.values[fl + k];
                    let v = flows.values[fl + hw + k];
                    let tap = bilinear_tap(next, h, w, T::lit(i as f64) + u, T::lit(j as f64) + v);
                    let r = features.values[cur + ch * hw + k] - tap.value;
                    total += r.abs();
                    let sgn = if r > T::zero() {
                        inv
                    } else if r < T::zero() {
                        -inv
                    } else {
                        continue;
                    };
                    grad_features[cur + ch * hw + k] += sgn;
                    for (idx, wt) in tap.taps {
                        grad_features[plane + idx] -= sgn * wt;
                    }
                    grad_flows[fl + k] -= sgn * tap.d_row;
                    grad_flows[fl + hw + k] -= sgn * tap.d_col;
                }
            }
        }
    }
    Ok(FlowLoss { loss: total * inv, grad_features, grad_flows })
}

/// Warping loss on one sequence: `proj` from the linear projection, flows
/// from the expert path whose projected output `expert_proj` must match `proj`.
pub fn flow_loss<T: Scalar>(proj: &DiffArray<T>, expert_proj: &DiffArray<T>, flows: &DiffArray<T>) -> Result<FlowLoss<T>> {
    if proj.shape() != expert_proj.shape() {
        return Err(Error::dim(format!(
            "projection {:?} and expert output {:?} differ",
            proj.shape(),
            expert_proj.shape()
        )));
    }
    let (t, _, _, _) = proj.dims4()?;
    flow_loss_grouped(proj, flows, t)
}
