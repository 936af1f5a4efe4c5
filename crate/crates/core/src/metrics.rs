//! MSE, SSIM and PSNR, plus the persistence baseline.

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::tensor::{DiffArray, Scalar};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &FrameSequence, b: &FrameSequence) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!("shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean of squared elementwise differences.
pub fn mse_loss(pred: &FrameSequence, target: &FrameSequence) -> Result<f64> {
    same_dims(pred, target)?;
    Ok(mse_slices(pred.data(), target.data()))
}

fn mse_slices(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    sum / a.len().max(1) as f64
}

/// MSE on differentiable arrays, with its gradient with respect to `pred`.
pub fn mse_loss_diff<T: Scalar>(pred: &DiffArray<T>, target: &DiffArray<T>) -> Result<(f64, Vec<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("shapes differ: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1);
    let scale = T::lit(2.0 / n as f64);
    let mut sum = 0.0;
    let grad = pred
        .values
        .iter()
        .zip(&target.values)
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok((sum / n as f64, grad))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| win[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| win[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11x11 Gaussian window (sigma 1.5) of two
/// single-channel `h x w` images.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::dim("image buffers do not match h x w"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!("ssim needs at least {0}x{0} images, got {1}x{2}", SSIM_WINDOW, h, w)));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &win);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &win);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &win);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM of one frame of two sequences, averaged over channels.
pub fn ssim_frame(a: &FrameSequence, b: &FrameSequence, t: usize) -> Result<f64> {
    same_dims(a, b)?;
    let [_, c, h, w] = a.dims();
    let (fa, fb) = (a.frame(t), b.frame(t));
    let mut acc = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = fa[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = fb[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        acc += ssim(&pa, &pb, h, w, 1.0)?;
    }
    Ok(acc / c as f64)
}

/// SSIM averaged over frames and channels.
pub fn ssim_sequence(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    same_dims(a, b)?;
    let t = a.frames();
    let mut acc = 0.0;
    for i in 0..t {
        acc += ssim_frame(a, b, i)?;
    }
    Ok(acc / t as f64)
}

/// `10 log10(range^2 / MSE)` for data range 1.
pub fn psnr(pred: &FrameSequence, target: &FrameSequence) -> Result<f64> {
    psnr_from_mse(mse_loss(pred, target)?)
}

pub fn psnr_from_mse(mse: f64) -> Result<f64> {
    if mse <= 0.0 {
        return Err(Error::UndefinedPsnr);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Per-frame MSE.
pub fn mse_per_frame(pred: &FrameSequence, target: &FrameSequence) -> Result<Vec<f64>> {
    same_dims(pred, target)?;
    Ok((0..pred.frames()).map(|t| mse_slices(pred.frame(t), target.frame(t))).collect())
}

/// Repeats the last observed frame `k` times.
pub fn persistence_baseline(input: &FrameSequence, k: usize) -> Result<FrameSequence> {
    if input.frames() == 0 || k == 0 {
        return Err(Error::config("baseline needs at least one input frame and k >= 1"));
    }
    let last = input.frame(input.frames() - 1);
    let [_, c, h, w] = input.dims();
    FrameSequence::new([k, c, h, w], last.repeat(k))
}
