//! Random square local views, resized to a fixed side.

use rand::Rng;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::ops::bilinear_sample;

#[derive(Debug, Clone, PartialEq)]
pub struct CropConfig {
    pub n_crops: usize,
    pub crop_out: usize,
    /// Exclusive upper bound on box area as a fraction of the frame.
    pub max_area_fraction: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig { n_crops: 3, crop_out: 32, max_area_fraction: 0.5 }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_crops == 0 {
            return Err(Error::config("n_crops must be at least 1"));
        }
        if !(self.max_area_fraction > 0.0 && self.max_area_fraction <= 0.5) {
            return Err(Error::config("max_area_fraction must lie in (0, 0.5]"));
        }
        if self.crop_out < 8 {
            return Err(Error::config("crop_out must be at least 8"));
        }
        Ok(())
    }

    /// Inclusive range of admissible box sides for an `h x w` frame.
    pub fn side_range(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if h.min(w) < self.crop_out {
            return Err(Error::config(format!(
                "frame {}x{} is smaller than crop_out {}",
                h, w, self.crop_out
            )));
        }
        let max_side = ((self.max_area_fraction.sqrt() * h.min(w) as f64).floor() as usize).saturating_sub(1);
        if max_side < self.crop_out {
            return Err(Error::config(format!(
                "no box of side >= {} fits under area fraction {} of {}x{}",
                self.crop_out, self.max_area_fraction, h, w
            )));
        }
        Ok((self.crop_out, max_side))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Draws `n_crops` boxes (side uniform over [`CropConfig::side_range`],
/// position uniform) and resamples each to `crop_out x crop_out`. One box
/// covers every frame of the sequence.
pub fn random_local_crops<R: Rng>(
    seq: &FrameSequence,
    cfg: &CropConfig,
    rng: &mut R,
) -> Result<(Vec<FrameSequence>, Vec<CropBox>)> {
    let (h, w) = (seq.height(), seq.width());
    let (lo, hi) = cfg.side_range(h, w)?;
    let boxes: Vec<CropBox> = (0..cfg.n_crops)
        .map(|_| {
            let side = rng.gen_range(lo..=hi);
            CropBox {
                top: rng.gen_range(0..=h - side),
                left: rng.gen_range(0..=w - side),
                height: side,
                width: side,
            }
        })
        .collect();
    let crops = boxes.iter().map(|b| resize_box(seq, b, cfg.crop_out)).collect::<Result<_>>()?;
    Ok((crops, boxes))
}

/// Bilinear resample of one box with corner-aligned sampling.
pub fn resize_box(seq: &FrameSequence, b: &CropBox, out: usize) -> Result<FrameSequence> {
    let [t, c, h, w] = seq.dims();
    if b.top + b.height > h || b.left + b.width > w {
        return Err(Error::dim(format!("crop box {:?} outside {}x{} frame", b, h, w)));
    }
    let scale = |extent: usize| if out > 1 { (extent - 1) as f64 / (out - 1) as f64 } else { 0.0 };
    let (sr, sc) = (scale(b.height), scale(b.width));
    let mut data = Vec::with_capacity(t * c * out * out);
    for ti in 0..t {
        let frame = seq.frame(ti);
        for ci in 0..c {
            let src: Vec<f64> = frame[ci * h * w..(ci + 1) * h * w].iter().map(|&v| v as f64).collect();
            for i in 0..out {
                for j in 0..out {
                    let r = b.top as f64 + i as f64 * sr;
                    let cc = b.left as f64 + j as f64 * sc;
                    data.push(bilinear_sample(&src, h, w, r, cc) as f32);
                }
            }
        }
    }
    FrameSequence::from_clamped([t, c, out, out], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> FrameSequence {
        let data = (0..2 * h * w).map(|i| (i % (h * w)) as f32 / (h * w) as f32).collect();
        FrameSequence::new([2, 1, h, w], data).unwrap()
    }

    #[test]
    fn side_range_for_64() {
        assert_eq!(CropConfig::default().side_range(64, 64).unwrap(), (32, 44));
    }

    #[test]
    fn frame_too_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = random_local_crops(&ramp(16, 16), &CropConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
        // Large enough for crop_out but not under the area bound.
        let r = random_local_crops(&ramp(40, 40), &CropConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn full_size_box_with_identity_resize_copies() {
        let s = ramp(12, 12);
        let b = CropBox { top: 2, left: 3, height: 8, width: 8 };
        let c = resize_box(&s, &b, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(c.frame(1)[i * 8 + j], s.frame(1)[(i + 2) * 12 + j + 3]);
            }
        }
    }
}
