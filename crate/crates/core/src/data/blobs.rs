//! Gaussian blobs translating at constant speed and reflecting off the walls.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSceneParams {
    pub n_blobs: usize,
    pub radius: f64,
    /// Pixels per frame.
    pub speed: f64,
    /// Ambient intensity under the blobs.
    pub background: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for BlobSceneParams {
    fn default() -> Self {
        BlobSceneParams { n_blobs: 2, radius: 8.0, speed: 2.0, background: 0.1, height: 64, width: 64, seed: 0 }
    }
}

impl BlobSceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_blobs == 0 {
            return Err(Error::config("n_blobs must be at least 1"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("grid must be at least 8x8"));
        }
        let half = self.height.min(self.width) as f64 / 2.0;
        if !(self.radius > 0.0 && self.radius < half) {
            return Err(Error::config(format!("radius must lie in (0, {})", half)));
        }
        if !(self.speed >= 0.0) {
            return Err(Error::config("speed must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.background) {
            return Err(Error::config("background must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Start position and velocity of one blob, `(row, col)` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobTrack {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

/// Folds an unconstrained coordinate into `[lo, hi]` by mirror reflection.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        return x;
    }
    let span = hi - lo;
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

impl BlobTrack {
    /// Center at frame `t` under wall reflection within `[radius, dim - radius]`.
    pub fn center(&self, t: usize, p: &BlobSceneParams) -> (f64, f64) {
        let t = t as f64;
        (
            reflect(self.start.0 + t * self.velocity.0, p.radius, p.height as f64 - p.radius),
            reflect(self.start.1 + t * self.velocity.1, p.radius, p.width as f64 - p.radius),
        )
    }
}

pub fn blob_tracks(p: &BlobSceneParams) -> Result<Vec<BlobTrack>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    Ok((0..p.n_blobs)
        .map(|_| {
            let row = rng.gen_range(p.radius..=p.height as f64 - p.radius);
            let col = rng.gen_range(p.radius..=p.width as f64 - p.radius);
            let angle = rng.gen_range(0.0..2.0 * PI);
            BlobTrack { start: (row, col), velocity: (p.speed * angle.sin(), p.speed * angle.cos()) }
        })
        .collect())
}

/// Renders one channel; each pixel takes the brightest blob, profile
/// `exp(-d^2 / (2 sigma^2))` with `sigma = radius / 2`, scaled into
/// `[background, 1]`.
pub fn simulate_moving_blobs(p: &BlobSceneParams, frames: usize) -> Result<FrameSequence> {
    if frames < 2 {
        return Err(Error::config("need at least 2 frames"));
    }
    let tracks = blob_tracks(p)?;
    let sigma2 = (p.radius / 2.0).powi(2);
    let (h, w) = (p.height, p.width);
    let mut data = vec![0.0f32; frames * h * w];
    for (t, frame) in data.chunks_mut(h * w).enumerate() {
        let centers: Vec<(f64, f64)> = tracks.iter().map(|b| b.center(t, p)).collect();
        for i in 0..h {
            for j in 0..w {
                let v = centers
                    .iter()
                    .map(|&(r, c)| {
                        let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
                        (-d2 / (2.0 * sigma2)).exp()
                    })
                    .fold(0.0, f64::max);
                frame[i * w + j] = (p.background + (1.0 - p.background) * v) as f32;
            }
        }
    }
    FrameSequence::new([frames, 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_both_walls() {
        assert_eq!(reflect(5.0, 2.0, 10.0), 5.0);
        assert_eq!(reflect(11.0, 2.0, 10.0), 9.0);
        assert_eq!(reflect(0.0, 2.0, 10.0), 4.0);
        assert_eq!(reflect(19.0, 2.0, 10.0), 3.0);
    }

    #[test]
    fn zero_speed_is_static() {
        let p = BlobSceneParams { speed: 0.0, seed: 3, ..Default::default() };
        let s = simulate_moving_blobs(&p, 5).unwrap();
        for t in 1..5 {
            assert_eq!(s.frame(t), s.frame(0));
        }
    }

    #[test]
    fn invalid_params() {
        let p = BlobSceneParams { radius: 40.0, ..Default::default() };
        assert!(simulate_moving_blobs(&p, 3).is_err());
        let p = BlobSceneParams { n_blobs: 0, ..Default::default() };
        assert!(simulate_moving_blobs(&p, 3).is_err());
        let p = BlobSceneParams { background: 1.0, ..Default::default() };
        assert!(simulate_moving_blobs(&p, 3).is_err());
    }
}
