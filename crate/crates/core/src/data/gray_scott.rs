//! Gray-Scott reaction-diffusion on a periodic grid, explicit Euler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayScottParams {
    pub du: f64,
    pub dv: f64,
    pub feed: f64,
    pub kill: f64,
    pub dt: f64,
    pub steps_per_frame: usize,
    /// Steps integrated before the first exported frame.
    pub warmup: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for GrayScottParams {
    fn default() -> Self {
        GrayScottParams {
            du: 0.16,
            dv: 0.08,
            feed: 0.055,
            kill: 0.062,
            dt: 1.0,
            steps_per_frame: 20,
            warmup: 500,
            height: 64,
            width: 64,
        }
    }
}

impl GrayScottParams {
    pub fn validate(&self) -> Result<()> {
        if self.du < 0.0 || self.dv < 0.0 {
            return Err(Error::config("diffusion rates must be non-negative"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.dt * self.du.max(self.dv) * 4.0 > 1.0 {
            return Err(Error::config(format!(
                "explicit scheme unstable: dt * max(Du, Dv) * 4 = {} > 1",
                self.dt * self.du.max(self.dv) * 4.0
            )));
        }
        if self.steps_per_frame == 0 {
            return Err(Error::config("steps_per_frame must be positive"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::config("grid must be at least 8x8"));
        }
        Ok(())
    }
}

/// Simulator state. Integration runs in `f64`; frames are clamped only on export.
#[derive(Debug, Clone)]
pub struct GrayScott {
    params: GrayScottParams,
    u: Vec<f64>,
    v: Vec<f64>,
    scratch_u: Vec<f64>,
    scratch_v: Vec<f64>,
    steps: usize,
}

impl GrayScott {
    pub fn from_state(params: GrayScottParams, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let n = params.height * params.width;
        if u.len() != n || v.len() != n {
            return Err(Error::dim(format!("state must hold {} cells", n)));
        }
        Ok(GrayScott { params, scratch_u: vec![0.0; n], scratch_v: vec![0.0; n], u, v, steps: 0 })
    }

    /// `u = 1, v = 0` with one square perturbation near the center.
    pub fn seeded(params: GrayScottParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let (h, w) = (params.height, params.width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = vec![1.0; h * w];
        let mut v = vec![0.0; h * w];
        let side = (h.min(w) / 6).max(2);
        let ci = h / 2 + rng.gen_range(0..=h / 4) - h / 8;
        let cj = w / 2 + rng.gen_range(0..=w / 4) - w / 8;
        for i in ci - side / 2..ci - side / 2 + side {
            for j in cj - side / 2..cj - side / 2 + side {
                let k = (i % h) * w + j % w;
                u[k] = 0.5 + rng.gen_range(-0.01..0.01);
                v[k] = 0.25 + rng.gen_range(-0.01..0.01);
            }
        }
        Self::from_state(params, u, v)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self) -> Result<()> {
        let GrayScottParams { du, dv, feed, kill, dt, height: h, width: w, .. } = self.params;
        for i in 0..h {
            let up = ((i + h - 1) % h) * w;
            let down = ((i + 1) % h) * w;
            let row = i * w;
            for j in 0..w {
                let left = (j + w - 1) % w;
                let right = (j + 1) % w;
                let k = row + j;
                let lap = |f: &[f64]| f[up + j] + f[down + j] + f[row + left] + f[row + right] - 4.0 * f[k];
                let (u, v) = (self.u[k], self.v[k]);
                let uvv = u * v * v;
                self.scratch_u[k] = u + dt * (du * lap(&self.u) - uvv + feed * (1.0 - u));
                self.scratch_v[k] = v + dt * (dv * lap(&self.v) + uvv - (feed + kill) * v);
            }
        }
        std::mem::swap(&mut self.u, &mut self.scratch_u);
        std::mem::swap(&mut self.v, &mut self.scratch_v);
        self.steps += 1;
        if self.u.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::SimulationDiverged { step: self.steps });
        }
        Ok(())
    }

    /// Current `(u, v)` as a clamped two-channel frame.
    pub fn frame(&self) -> Vec<f32> {
        self.u.iter().chain(&self.v).map(|&x| x.clamp(0.0, 1.0) as f32).collect()
    }
}

/// Simulates `frames` two-channel frames after the warmup period.
pub fn simulate_gray_scott(params: &GrayScottParams, seed: u64, frames: usize) -> Result<FrameSequence> {
    if frames < 2 {
        return Err(Error::config("need at least 2 frames"));
    }
    let mut sim = GrayScott::seeded(params.clone(), seed)?;
    for _ in 0..params.warmup {
        sim.step()?;
    }
    let mut data = Vec::with_capacity(frames * 2 * params.height * params.width);
    for t in 0..frames {
        if t > 0 {
            for _ in 0..params.steps_per_frame {
                sim.step()?;
            }
        }
        data.extend(sim.frame());
    }
    FrameSequence::new([frames, 2, params.height, params.width], data)
}
