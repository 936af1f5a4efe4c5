//! 2D cross-correlation and its transpose, lowered to im2col + GEMM.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul, DiffArray, Mat, Scalar};

/// Kernel, bias, stride and zero padding of a convolution.
///
/// The kernel is stored as `(a, b, kh, kw)`. Used by [`conv2d`] it maps `b`
/// input channels to `a` output channels; used by [`deconv2d`] the same
/// kernel maps `a` channels to `b`, which makes the two adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T> {
    pub kernel: DiffArray<T>,
    pub bias: DiffArray<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvSpec<T> {
    pub fn new(kernel: DiffArray<T>, bias: DiffArray<T>, stride: usize, padding: usize) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::dim(format!("kernel must be rank 4, got {:?}", kernel.shape())));
        }
        if stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        if bias.shape().len() != 1 {
            return Err(Error::dim("bias must be rank 1"));
        }
        Ok(ConvSpec { kernel, bias, stride, padding })
    }

    /// Zero conv mapping `in_ch -> out_ch`.
    pub fn conv_zeros(out_ch: usize, in_ch: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kernel: DiffArray::zeros(&[out_ch, in_ch, k, k]),
            bias: DiffArray::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// Zero transposed conv mapping `in_ch -> out_ch`.
    pub fn deconv_zeros(in_ch: usize, out_ch: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            kernel: DiffArray::zeros(&[in_ch, out_ch, k, k]),
            bias: DiffArray::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// Uniform kernel init in `[-bound, bound]` with `bound = gain * sqrt(3 / fan_in)`; zero bias.
    pub fn init_uniform<R: Rng>(&mut self, fan_in: usize, gain: f64, rng: &mut R) {
        let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
        for w in self.kernel.values.iter_mut() {
            *w = T::lit(rng.gen_range(-bound..=bound));
        }
        self.bias.values.iter_mut().for_each(|b| *b = T::zero());
    }

    fn kdims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn zero_grad(&mut self) {
        self.kernel.zero_grad();
        self.bias.zero_grad();
    }
}

/// Output side of a convolution, or `None` if no kernel placement fits.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output side of a transposed convolution.
pub fn deconv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((len.max(1) - 1) * stride + k).checked_sub(2 * pad).filter(|&n| n > 0)
}

/// Geometry of one convolution placement grid, in conv direction.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in seg.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom<T: Scalar>(x: &DiffArray<T>, spec: &ConvSpec<T>) -> Result<(usize, Geom, usize)> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, kin, kh, kw) = spec.kdims();
    if kin != cin {
        return Err(Error::dim(format!("conv2d expects {} input channels, got {}", kin, cin)));
    }
    if spec.bias.len() != cout {
        return Err(Error::dim(format!("conv2d bias length {} != out channels {}", spec.bias.len(), cout)));
    }
    let ho = conv_out_len(h, kh, spec.stride, spec.padding);
    let wo = conv_out_len(w, kw, spec.stride, spec.padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok((
            n,
            Geom { c: cin, h, w, kh, kw, stride: spec.stride, pad: spec.padding, ho, wo },
            cout,
        )),
        _ => Err(Error::dim(format!(
            "input {}x{} admits no {}x{} kernel placement with padding {}",
            h, w, kh, kw, spec.padding
        ))),
    }
}

/// Cross-correlation with zero padding. Input `(N, Cin, H, W)`, output `(N, Cout, H', W')`.
pub fn conv2d<T: Scalar>(x: &DiffArray<T>, spec: &ConvSpec<T>) -> Result<DiffArray<T>> {
    let (n, g, cout) = conv_geom(x, spec)?;
    let (k, p) = (g.rows(), g.cols());
    let mut y = DiffArray::zeros(&[n, cout, g.ho, g.wo]);
    let mut cols = vec![T::zero(); k * p];
    let in_len = g.c * g.h * g.w;
    for s in 0..n {
        im2col(&x.values[s * in_len..(s + 1) * in_len], &g, &mut cols);
        let out = &mut y.values[s * cout * p..(s + 1) * cout * p];
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = spec.bias.values[co]);
        }
        matmul(Mat::new(&spec.kernel.values, cout, k), Mat::new(&cols, k, p), T::one(), out);
    }
    Ok(y)
}

/// Accumulates `y.grad` into the kernel, bias and (if `propagate`) input gradients.
pub fn conv2d_backward<T: Scalar>(
    x: &mut DiffArray<T>,
    spec: &mut ConvSpec<T>,
    y: &DiffArray<T>,
    propagate: bool,
) -> Result<()> {
    let (n, g, cout) = conv_geom(x, spec)?;
    let (k, p) = (g.rows(), g.cols());
    if y.shape() != [n, cout, g.ho, g.wo] {
        return Err(Error::dim("conv2d_backward output shape mismatch"));
    }
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    let in_len = g.c * g.h * g.w;
    for s in 0..n {
        let dy = &y.grad[s * cout * p..(s + 1) * cout * p];
        im2col(&x.values[s * in_len..(s + 1) * in_len], &g, &mut cols);
        matmul(Mat::new(dy, cout, p), Mat::new(&cols, k, p).t(), T::one(), &mut spec.kernel.grad);
        for (co, row) in dy.chunks(p).enumerate() {
            spec.bias.grad[co] += row.iter().copied().sum::<T>();
        }
        if propagate {
            matmul(Mat::new(&spec.kernel.values, cout, k).t(), Mat::new(dy, cout, p), T::zero(), &mut dcols);
            col2im_add(&dcols, &g, &mut x.grad[s * in_len..(s + 1) * in_len]);
        }
    }
    Ok(())
}

fn deconv_geom<T: Scalar>(x: &DiffArray<T>, spec: &ConvSpec<T>) -> Result<(usize, Geom, usize)> {
    let (n, cin, h, w) = x.dims4()?;
    let (kin, cout, kh, kw) = spec.kdims();
    if kin != cin {
        return Err(Error::dim(format!("deconv2d expects {} input channels, got {}", kin, cin)));
    }
    if spec.bias.len() != cout {
        return Err(Error::dim(format!("deconv2d bias length {} != out channels {}", spec.bias.len(), cout)));
    }
    let ho = deconv_out_len(h, kh, spec.stride, spec.padding);
    let wo = deconv_out_len(w, kw, spec.stride, spec.padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) => {
            // The conv from (cout, ho, wo) with this kernel lands back on (h, w).
            let g = Geom { c: cout, h: ho, w: wo, kh, kw, stride: spec.stride, pad: spec.padding, ho: h, wo: w };
            debug_assert_eq!(conv_out_len(ho, kh, spec.stride, spec.padding), Some(h));
            Ok((n, g, cin))
        }
        _ => Err(Error::dim(format!("deconv2d output of {}x{} input is empty", h, w))),
    }
}

/// Transposed convolution, the adjoint of [`conv2d`] under the same kernel.
/// Output side is `(H - 1) * stride - 2 * pad + k`.
pub fn deconv2d<T: Scalar>(x: &DiffArray<T>, spec: &ConvSpec<T>) -> Result<DiffArray<T>> {
    let (n, g, cin) = deconv_geom(x, spec)?;
    let (k, p) = (g.rows(), g.cols());
    let out_len = g.c * g.h * g.w;
    let mut y = DiffArray::zeros(&[n, g.c, g.h, g.w]);
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        let xs = &x.values[s * cin * p..(s + 1) * cin * p];
        matmul(Mat::new(&spec.kernel.values, cin, k).t(), Mat::new(xs, cin, p), T::zero(), &mut cols);
        let out = &mut y.values[s * out_len..(s + 1) * out_len];
        col2im_add(&cols, &g, out);
        for (co, plane) in out.chunks_mut(g.h * g.w).enumerate() {
            let b = spec.bias.values[co];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(y)
}

pub fn deconv2d_backward<T: Scalar>(
    x: &mut DiffArray<T>,
    spec: &mut ConvSpec<T>,
    y: &DiffArray<T>,
    propagate: bool,
) -> Result<()> {
    let (n, g, cin) = deconv_geom(x, spec)?;
    let (k, p) = (g.rows(), g.cols());
    if y.shape() != [n, g.c, g.h, g.w] {
        return Err(Error::dim("deconv2d_backward output shape mismatch"));
    }
    let out_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); k * p];
    for s in 0..n {
        let dy = &y.grad[s * out_len..(s + 1) * out_len];
        for (co, plane) in dy.chunks(g.h * g.w).enumerate() {
            spec.bias.grad[co] += plane.iter().copied().sum::<T>();
        }
        im2col(dy, &g, &mut cols);
        let xs = &x.values[s * cin * p..(s + 1) * cin * p];
        matmul(Mat::new(xs, cin, p), Mat::new(&cols, k, p).t(), T::one(), &mut spec.kernel.grad);
        if propagate {
            matmul(
                Mat::new(&spec.kernel.values, cin, k),
                Mat::new(&cols, k, p),
                T::one(),
                &mut x.grad[s * cin * p..(s + 1) * cin * p],
            );
        }
    }
    Ok(())
}
