//! Stacked `Conv2d -> LayerNorm -> Relu` encoders for the global and local views.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::layers::{Layer, Stack, Trace};
use crate::ops::{conv_out_len, ConvSpec, LayerNorm};
use crate::tensor::{DiffArray, Scalar};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `S`, `B` and `L` presets fixing encoder depth and widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSize {
    S,
    B,
    L,
}

impl ModelSize {
    pub fn blocks(self) -> usize {
        match self {
            ModelSize::S => 2,
            ModelSize::B => 4,
            ModelSize::L => 8,
        }
    }

    /// Widths double from 16, capped at 64.
    pub fn channels(self) -> Vec<usize> {
        match self {
            ModelSize::S => vec![16, 32],
            ModelSize::B => vec![16, 32, 32, 64],
            ModelSize::L => vec![16, 32, 64, 64, 64, 64, 64, 64],
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelSize::S => "S",
            ModelSize::B => "B",
            ModelSize::L => "L",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S" => Ok(ModelSize::S),
            "B" => Ok(ModelSize::B),
            "L" => Ok(ModelSize::L),
            other => Err(Error::config(format!("unknown model size {:?} (expected S, B or L)", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub channels: Vec<usize>,
    pub down_floor: usize,
}

impl EncoderConfig {
    pub fn preset(size: ModelSize, kernel: usize) -> Self {
        EncoderConfig { blocks: size.blocks(), kernel, channels: size.channels(), down_floor: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8].contains(&self.blocks) {
            return Err(Error::config(format!("encoder block count must be 2, 4 or 8, got {}", self.blocks)));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("encoder kernel must be odd"));
        }
        if self.channels.len() != self.blocks {
            return Err(Error::config("one channel width per encoder block"));
        }
        if self.down_floor == 0 {
            return Err(Error::config("down_floor must be positive"));
        }
        Ok(())
    }

    /// Per-block strides for an input of side `side`: stride 2 while the
    /// halved side stays at or above `down_floor`, then stride 1.
    pub fn strides(&self, side: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if side < self.down_floor {
            return Err(Error::config(format!(
                "input side {} is below the encoder floor {}",
                side, self.down_floor
            )));
        }
        let mut s = side;
        Ok((0..self.blocks)
            .map(|_| {
                if s / 2 >= self.down_floor {
                    s = conv_out_len(s, self.kernel, 2, self.kernel / 2).unwrap_or(0);
                    2
                } else {
                    1
                }
            })
            .collect())
    }

    /// Output `(h, w)` for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let strides = self.strides(h.min(w))?;
        let pad = self.kernel / 2;
        let fold = |n: usize| {
            strides.iter().try_fold(n, |n, &s| conv_out_len(n, self.kernel, s, pad))
        };
        match (fold(h), fold(w)) {
            (Some(a), Some(b)) if a >= self.down_floor.min(h) && b >= self.down_floor.min(w) => Ok((a, b)),
            _ => Err(Error::config(format!("encoder underflows on {}x{} input", h, w))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub in_channels: usize,
    pub stack: Stack<T>,
}

impl<T: Scalar> Encoder<T> {
    /// Builds an encoder for `in_channels x side x side` frames with
    /// uniform He-style init.
    pub fn new<R: Rng>(config: EncoderConfig, in_channels: usize, side: usize, rng: &mut R) -> Result<Self> {
        let strides = config.strides(side)?;
        let k = config.kernel;
        let mut layers = Vec::with_capacity(3 * config.blocks);
        let mut cin = in_channels;
        for (&cout, &stride) in config.channels.iter().zip(&strides) {
            let mut conv = ConvSpec::conv_zeros(cout, cin, k, stride, k / 2);
            conv.init_uniform(cin * k * k, 2f64.sqrt(), rng);
            layers.push(Layer::Conv(conv));
            layers.push(Layer::Norm(LayerNorm::new(cout, LAYER_NORM_EPS)));
            layers.push(Layer::Relu);
            cin = cout;
        }
        Ok(Encoder { config, in_channels, stack: Stack::new(layers) })
    }

    pub fn out_channels(&self) -> usize {
        *self.config.channels.last().expect("validated")
    }

    /// Encodes `(N, C, H, W)`; the leading axis is a batch of independent frames.
    pub fn forward(&self, x: DiffArray<T>) -> Result<Trace<T>> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::dim(format!("encoder expects {} channels, got {}", self.in_channels, c)));
        }
        self.stack.forward(x)
    }

    pub fn encode(&self, seq: &FrameSequence) -> Result<DiffArray<T>> {
        let mut trace = self.forward(seq.to_diff())?;
        Ok(trace.acts.pop().expect("non-empty"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_schedules() {
        let g = EncoderConfig::preset(ModelSize::S, 7);
        assert_eq!(g.strides(128).unwrap(), vec![2, 2]);
        assert_eq!(g.output_size(128, 128).unwrap(), (32, 32));
        let l = EncoderConfig::preset(ModelSize::L, 3);
        assert_eq!(l.strides(32).unwrap(), vec![2, 2, 1, 1, 1, 1, 1, 1]);
        assert_eq!(l.output_size(32, 32).unwrap(), (8, 8));
        assert!(matches!(l.strides(4), Err(Error::Config(_))));
    }

    #[test]
    fn encode_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new(EncoderConfig::preset(ModelSize::S, 7), 1, 64, &mut rng).unwrap();
        let z = enc.encode(&FrameSequence::zeros([3, 1, 64, 64])).unwrap();
        assert_eq!(z.shape(), &[3, 32, 16, 16]);
        assert!(enc.encode(&FrameSequence::zeros([3, 2, 64, 64])).is_err());
    }

    #[test]
    fn rejects_bad_block_count() {
        let cfg = EncoderConfig { blocks: 3, kernel: 3, channels: vec![8; 3], down_floor: 8 };
        assert!(cfg.validate().is_err());
    }
}
