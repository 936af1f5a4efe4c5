//! Layer normalization over the `(C, H, W)` extent of each sample.

use crate::error::{Error, Result};
use crate::tensor::{DiffArray, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: DiffArray<T>,
    pub bias: DiffArray<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNorm<T> {
    /// Unit gain, zero bias.
    pub fn new(channels: usize, eps: f64) -> Self {
        LayerNorm {
            gain: DiffArray::filled(&[channels], T::one()),
            bias: DiffArray::zeros(&[channels]),
            eps: T::lit(eps),
        }
    }

    pub fn zero_grad(&mut self) {
        self.gain.zero_grad();
        self.bias.zero_grad();
    }

    fn check(&self, x: &DiffArray<T>) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if self.gain.len() != c || self.bias.len() != c {
            return Err(Error::dim(format!("layer_norm has {} channels, input has {}", self.gain.len(), c)));
        }
        Ok((n, c, h * w))
    }

    fn stats(sample: &[T], eps: T) -> (T, T) {
        let m = T::lit(sample.len() as f64);
        let rough = sample.iter().copied().sum::<T>() / m;
        let mean = rough + sample.iter().map(|&v| v - rough).sum::<T>() / m;
        let var = sample.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
        (mean, (var + eps).sqrt().recip())
    }

    pub fn forward(&self, x: &DiffArray<T>) -> Result<DiffArray<T>> {
        let (n, c, hw) = self.check(x)?;
        let mut y = DiffArray::zeros(x.shape());
        let len = c * hw;
        for s in 0..n {
            let xs = &x.values[s * len..(s + 1) * len];
            let (mean, inv_std) = Self::stats(xs, self.eps);
            let ys = &mut y.values[s * len..(s + 1) * len];
            for ch in 0..c {
                let (g, b) = (self.gain.values[ch], self.bias.values[ch]);
                for i in ch * hw..(ch + 1) * hw {
                    ys[i] = g * (xs[i] - mean) * inv_std + b;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &mut DiffArray<T>, y: &DiffArray<T>) -> Result<()> {
        let (n, c, hw) = self.check(x)?;
        let len = c * hw;
        let m = T::lit(len as f64);
        for s in 0..n {
            let xs = &x.values[s * len..(s + 1) * len];
            let dy = &y.grad[s * len..(s + 1) * len];
            let (mean, inv_std) = Self::stats(xs, self.eps);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for ch in 0..c {
                let g = self.gain.values[ch];
                let (mut dg, mut db) = (T::zero(), T::zero());
                for i in ch * hw..(ch + 1) * hw {
                    let xhat = (xs[i] - mean) * inv_std;
                    dg += dy[i] * xhat;
                    db += dy[i];
                    let d = dy[i] * g;
                    sum_d += d;
                    sum_dx += d * xhat;
                }
                self.gain.grad[ch] += dg;
                self.bias.grad[ch] += db;
            }
            let (mean_d, mean_dx) = (sum_d / m, sum_dx / m);
            let gx = &mut x.grad[s * len..(s + 1) * len];
            for ch in 0..c {
                let g = self.gain.values[ch];
                for i in ch * hw..(ch + 1) * hw {
                    let xhat = (xs[i] - mean) * inv_std;
                    gx[i] += inv_std * (dy[i] * g - mean_d - xhat * mean_dx);
                }
            }
        }
        Ok(())
    }
}
