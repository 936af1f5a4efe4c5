//! Vector-quantization prior bank.
//!
//! Latent maps `(N, D, h, w)` are read as `N*h*w` position vectors of length
//! `D`. Each vector is replaced by its nearest codeword (squared Euclidean
//! distance, lowest index on ties). The encoder receives the quantized
//! branch's gradient unchanged (straight-through), and the codewords learn
//! only from the codebook term of [`vq_loss`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DiffArray, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebank<T> {
    /// `(O, D)` codewords.
    pub codes: DiffArray<T>,
}

impl<T: Scalar> Codebank<T> {
    pub fn new(codes: DiffArray<T>) -> Result<Self> {
        match codes.shape() {
            [o, d] if *o >= 2 && *d >= 1 => {}
            s => return Err(Error::config(format!("codebank must be O x D with O >= 2, D >= 1, got {:?}", s))),
        }
        if !codes.is_finite() {
            return Err(Error::config("codewords must be finite"));
        }
        Ok(Codebank { codes })
    }

    /// Entries uniform in `[-1/O, 1/O]`.
    pub fn init_uniform<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let b = 1.0 / size as f64;
        let values = (0..size * dim).map(|_| T::lit(rng.gen_range(-b..=b))).collect();
        Self::new(DiffArray::from_vec(&[size, dim], values)?)
    }

    pub fn size(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn code(&self, j: usize) -> &[T] {
        let d = self.dim();
        &self.codes.values[j * d..(j + 1) * d]
    }

    /// Index of the nearest codeword to `z`, lowest index on ties.
    pub fn nearest(&self, z: &[T]) -> usize {
        let mut best = (0, T::infinity());
        for j in 0..self.size() {
            let d2 = z.iter().zip(self.code(j)).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult<T> {
    /// One codeword index per position, in `(n, i, j)` order.
    pub indices: Vec<usize>,
    /// Selected codewords laid out like the input.
    pub quantized: DiffArray<T>,
}

/// Gathers the `D`-vector at each position of an `(N, D, h, w)` map.
fn for_each_position(
    shape: (usize, usize, usize, usize),
    mut f: impl FnMut(usize, &mut dyn FnMut(usize) -> usize),
) {
    let (n, d, h, w) = shape;
    let hw = h * w;
    for s in 0..n {
        for p in 0..hw {
            let pos = s * hw + p;
            let mut offset = |k: usize| (s * d + k) * hw + p;
            f(pos, &mut offset);
        }
    }
}

fn check_dim<T: Scalar>(z: &DiffArray<T>, bank: &Codebank<T>) -> Result<(usize, usize, usize, usize)> {
    let dims = z.dims4()?;
    if dims.1 != bank.dim() {
        return Err(Error::dim(format!("latent has {} channels, codebank dim is {}", dims.1, bank.dim())));
    }
    Ok(dims)
}

pub fn quantize<T: Scalar>(z: &DiffArray<T>, bank: &Codebank<T>) -> Result<QuantizeResult<T>> {
    let dims = check_dim(z, bank)?;
    let d = dims.1;
    let mut indices = vec![0; dims.0 * dims.2 * dims.3];
    let mut quantized = DiffArray::zeros(z.shape());
    let mut v = vec![T::zero(); d];
    for_each_position(dims, |pos, off| {
        for (k, x) in v.iter_mut().enumerate() {
            *x = z.values[off(k)];
        }
        let j = bank.nearest(&v);
        indices[pos] = j;
        for (k, &c) in bank.code(j).iter().enumerate() {
            quantized.values[off(k)] = c;
        }
    });
    Ok(QuantizeResult { indices, quantized })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqLossConfig {
    /// Commitment weight.
    pub beta: f64,
}

impl Default for VqLossConfig {
    fn default() -> Self {
        VqLossConfig { beta: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqLoss<T> {
    pub loss: T,
    /// Same layout as the latent map.
    pub grad_z: Vec<T>,
    /// `(O, D)`; rows of unselected codewords stay zero.
    pub grad_codes: Vec<T>,
}

/// `mean_p ||sg[z_p] - c_p||^2 + beta * mean_p ||z_p - sg[c_p]||^2`.
pub fn vq_loss<T: Scalar>(
    z: &DiffArray<T>,
    result: &QuantizeResult<T>,
    bank: &Codebank<T>,
    cfg: &VqLossConfig,
) -> Result<VqLoss<T>> {
    let dims = check_dim(z, bank)?;
    if result.quantized.shape() != z.shape() || result.indices.len() != dims.0 * dims.2 * dims.3 {
        return Err(Error::dim("quantize result does not match the latent map"));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::config("beta must be positive"));
    }
    let positions = result.indices.len().max(1);
    let inv_p = T::lit(1.0 / positions as f64);
    let beta = T::lit(cfg.beta);
    let two = T::lit(2.0);
    let d = dims.1;
    let mut sq = T::zero();
    let mut grad_z = vec![T::zero(); z.len()];
    let mut grad_codes = vec![T::zero(); bank.codes.len()];
    for_each_position(dims, |pos, off| {
        let j = result.indices[pos];
        for k in 0..d {
            let diff = z.values[off(k)] - result.quantized.values[off(k)];
            sq += diff * diff;
            grad_z[off(k)] = two * beta * diff * inv_p;
            grad_codes[j * d + k] -= two * diff * inv_p;
        }
    });
    Ok(VqLoss { loss: (T::one() + beta) * sq * inv_p, grad_z, grad_codes })
}

/// Gradient reaching the encoder output through the quantized branch.
pub fn straight_through<T: Scalar>(downstream_grad: &[T]) -> Vec<T> {
    downstream_grad.to_vec()
}

/// `z + z_vq`, the input handed to the expert components.
pub fn fuse_quantized<T: Scalar>(z: &DiffArray<T>, result: &QuantizeResult<T>) -> Result<DiffArray<T>> {
    if z.shape() != result.quantized.shape() {
        return Err(Error::dim("latent and quantized shapes differ"));
    }
    let mut out = DiffArray::zeros(z.shape());
    for ((o, &a), &b) in out.values.iter_mut().zip(&z.values).zip(&result.quantized.values) {
        *o = a + b;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageStats {
    pub counts: Vec<usize>,
    pub perplexity: f64,
}

impl UsageStats {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn dead_codes(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }
}

/// Per-code hit counts and `exp(entropy)` of the empirical code distribution.
pub fn usage_stats<'a>(bank_size: usize, results: impl IntoIterator<Item = &'a [usize]>) -> UsageStats {
    let mut counts = vec![0usize; bank_size];
    for indices in results {
        for &i in indices {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let entropy = if total == 0 {
        0.0
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum()
    };
    UsageStats { counts, perplexity: entropy.exp() }
}
