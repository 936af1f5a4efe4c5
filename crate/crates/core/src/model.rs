//! The full predictor: crops, encoders, prior bank, experts, fusion, decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebank::{fuse_quantized, quantize, straight_through, vq_loss, Codebank, VqLoss, VqLossConfig};
use crate::crops::{random_local_crops, CropBox, CropConfig};
use crate::data::FrameSequence;
use crate::encoder::{Encoder, EncoderConfig, ModelSize};
use crate::error::{Error, Result};
use crate::flow::{flow_loss_grouped, Expert, ExpertConfig, ExpertTrace, FlowLoss};
use crate::fusion::{upsample_nearest, upsample_nearest_backward, DecodeShape, Decoder, DecoderConfig};
use crate::layers::Trace;
use crate::metrics::mse_loss_diff;
use crate::tensor::{DiffArray, Scalar};
use crate::train::{total_loss, LossReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frames_in: usize,
    pub frames_out: usize,
    pub channels: usize,
    /// Frames are `side x side`.
    pub side: usize,
    pub size: ModelSize,
    pub codebank_size: usize,
    pub codebank_dim: usize,
    pub crops: CropConfig,
    pub global_kernel: usize,
    pub local_kernel: usize,
    pub down_floor: usize,
    pub expert_features: usize,
    pub proj_channels: usize,
    pub decoder: DecoderConfig,
    pub use_local: bool,
    pub use_codebank: bool,
    /// Initial pre-sigmoid bias of the output head.
    pub head_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames_in: 10,
            frames_out: 10,
            channels: 1,
            side: 64,
            size: ModelSize::S,
            codebank_size: 256,
            codebank_dim: 64,
            crops: CropConfig::default(),
            global_kernel: 7,
            local_kernel: 3,
            down_floor: 8,
            expert_features: 8,
            proj_channels: 16,
            decoder: DecoderConfig::default(),
            use_local: true,
            use_codebank: true,
            head_bias: -2.0,
        }
    }
}

impl ModelConfig {
    /// Encoder config for one pipeline; the last width is the codebank dimension.
    pub fn encoder_config(&self, kernel: usize) -> EncoderConfig {
        let mut cfg = EncoderConfig::preset(self.size, kernel);
        cfg.down_floor = self.down_floor;
        if let Some(last) = cfg.channels.last_mut() {
            *last = self.codebank_dim;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_in < 2 {
            return Err(Error::config("frames_in must be at least 2"));
        }
        if self.frames_out == 0 || self.channels == 0 {
            return Err(Error::config("frames_out and channels must be positive"));
        }
        if self.codebank_size < 2 || self.codebank_dim == 0 {
            return Err(Error::config("codebank must have at least 2 codes of positive dimension"));
        }
        if self.use_local {
            self.crops.side_range(self.side, self.side)?;
        }
        self.decoder.validate()
    }

    pub fn global_latent_side(&self) -> Result<usize> {
        Ok(self.encoder_config(self.global_kernel).output_size(self.side, self.side)?.0)
    }

    pub fn local_latent_side(&self) -> Result<usize> {
        let s = self.crops.crop_out;
        Ok(self.encoder_config(self.local_kernel).output_size(s, s)?.0)
    }

    pub fn decode_shape(&self) -> Result<DecodeShape> {
        Ok(DecodeShape {
            in_channels: self.proj_channels,
            in_side: self.global_latent_side()?,
            frames_in: self.frames_in,
            frames_out: self.frames_out,
            out_channels: self.channels,
            out_side: self.side,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub w_of: f64,
    pub w_vq: f64,
    pub w_mse: f64,
    pub vq: VqLossConfig,
    /// Also apply the warping loss to the decoded frames with upsampled global flows.
    pub of_on_output: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w_of: 1.0, w_vq: 1.0, w_mse: 1.0, vq: VqLossConfig::default(), of_on_output: false }
    }
}

/// One pipeline: encoder, optional quantization, expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub encoder: Encoder<T>,
    pub expert: Expert<T>,
}

struct BranchPass<T> {
    encoder: Trace<T>,
    quantized: Option<(crate::codebank::QuantizeResult<T>, VqLoss<T>)>,
    expert: ExpertTrace<T>,
    projection: Trace<T>,
    flow: FlowLoss<T>,
}

impl<T: Scalar> Branch<T> {
    fn forward(&self, x: DiffArray<T>, seq_len: usize, bank: Option<&Codebank<T>>, vq: &VqLossConfig) -> Result<BranchPass<T>> {
        let encoder = self.encoder.forward(x)?;
        let z = encoder.output();
        let (expert_in, quantized) = match bank {
            Some(bank) => {
                let q = quantize(z, bank)?;
                let loss = vq_loss(z, &q, bank, vq)?;
                (fuse_quantized(z, &q)?, Some((q, loss)))
            }
            None => {
                let mut e = z.clone();
                e.zero_grad();
                (e, None)
            }
        };
        let expert = self.expert.estimate_flow(expert_in.clone(), seq_len)?;
        let projection = self.expert.linear_projection(expert_in)?;
        let flow = flow_loss_grouped(projection.output(), expert.flows(), seq_len)?;
        Ok(BranchPass { encoder, quantized, expert, projection, flow })
    }

    /// The gradient on the expert's projected output must already be set.
    fn backward(
        &mut self,
        pass: &mut BranchPass<T>,
        bank: Option<&mut Codebank<T>>,
        w_of: T,
        w_vq: T,
    ) -> Result<()> {
        for (g, &d) in pass.expert.flow_head.output_mut().grad.iter_mut().zip(&pass.flow.grad_flows) {
            *g += w_of * d;
        }
        for (g, &d) in pass.projection.output_mut().grad.iter_mut().zip(&pass.flow.grad_features) {
            *g += w_of * d;
        }
        let mut e_grad = vec![T::zero(); pass.encoder.output().len()];
        self.expert.backward(&mut pass.expert, &mut e_grad)?;
        self.expert.projection.backward(&mut pass.projection, true)?;
        for (g, &d) in e_grad.iter_mut().zip(&pass.projection.input().grad) {
            *g += d;
        }
        let z_grad = &mut pass.encoder.output_mut().grad;
        for (g, &d) in z_grad.iter_mut().zip(&e_grad) {
            *g += d;
        }
        if let (Some((_, loss)), Some(bank)) = (&pass.quantized, bank) {
            for ((g, d), &c) in z_grad.iter_mut().zip(straight_through(&e_grad)).zip(&loss.grad_z) {
                *g += d + w_vq * c;
            }
            for (g, &d) in bank.codes.grad.iter_mut().zip(&loss.grad_codes) {
                *g += w_vq * d;
            }
        }
        self.encoder.stack.backward(&mut pass.encoder, false)
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DiffArray<T>)>) {
        self.encoder.stack.params(&format!("{}.encoder", prefix), out);
        self.expert.params(&format!("{}.expert", prefix), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DiffArray<T>)>) {
        self.encoder.stack.params_mut(&format!("{}.encoder", prefix), out);
        self.expert.params_mut(&format!("{}.expert", prefix), out);
    }
}

/// Model input for one sequence: the `T` observed frames and, when the local
/// pipeline is enabled, the crops stacked as `(n_crops * T, C, s, s)`.
#[derive(Debug, Clone)]
pub struct SampleInput<T> {
    pub frames: DiffArray<T>,
    pub crops: Option<DiffArray<T>>,
    pub boxes: Vec<CropBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub global: Branch<T>,
    pub local: Option<Branch<T>>,
    pub codebank: Codebank<T>,
    pub decoder: Decoder<T>,
}

/// Forward products of one sequence.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    /// `(K, C, H, W)`.
    pub frames: DiffArray<T>,
    pub report: LossReport,
    pub code_indices: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g_side = config.global_latent_side()?;
        let global = Branch {
            encoder: Encoder::new(config.encoder_config(config.global_kernel), config.channels, config.side, &mut rng)?,
            expert: Expert::new(
                ExpertConfig {
                    kernel: config.global_kernel,
                    feature_channels: config.expert_features,
                    proj_channels: config.proj_channels,
                    in_side: g_side,
                    out_side: g_side,
                },
                config.codebank_dim,
                &mut rng,
            )?,
        };
        let local = if config.use_local {
            let l_side = config.local_latent_side()?;
            Some(Branch {
                encoder: Encoder::new(
                    config.encoder_config(config.local_kernel),
                    config.channels,
                    config.crops.crop_out,
                    &mut rng,
                )?,
                expert: Expert::new(
                    ExpertConfig {
                        kernel: config.local_kernel,
                        feature_channels: config.expert_features,
                        proj_channels: config.proj_channels,
                        in_side: l_side,
                        out_side: g_side,
                    },
                    config.codebank_dim,
                    &mut rng,
                )?,
            })
        } else {
            None
        };
        let codebank = Codebank::init_uniform(config.codebank_size, config.codebank_dim, &mut rng)?;
        let decoder = Decoder::new(config.decoder.clone(), config.decode_shape()?, config.head_bias, &mut rng)?;
        Ok(Model { config, global, local, codebank, decoder })
    }

    /// Draws crops (if the local pipeline is on) from `rng` and converts to `T`.
    pub fn prepare<R: Rng>(&self, input: &FrameSequence, rng: &mut R) -> Result<SampleInput<T>> {
        let c = &self.config;
        if input.dims() != [c.frames_in, c.channels, c.side, c.side] {
            return Err(Error::dim(format!(
                "model expects input {:?}, got {:?}",
                [c.frames_in, c.channels, c.side, c.side],
                input.dims()
            )));
        }
        let (crops, boxes) = if self.local.is_some() {
            let (crops, boxes) = random_local_crops(input, &c.crops, rng)?;
            let s = c.crops.crop_out;
            let mut values = Vec::with_capacity(crops.len() * c.frames_in * c.channels * s * s);
            for crop in &crops {
                values.extend(crop.data().iter().map(|&v| T::lit(v as f64)));
            }
            (Some(DiffArray::from_vec(&[crops.len() * c.frames_in, c.channels, s, s], values)?), boxes)
        } else {
            (None, Vec::new())
        };
        Ok(SampleInput { frames: input.to_diff(), crops, boxes })
    }

    /// Forward pass and loss; when `backward` is set, accumulates every
    /// parameter gradient of the total loss.
    pub fn run(
        &mut self,
        sample: &SampleInput<T>,
        target: Option<&DiffArray<T>>,
        loss_cfg: &LossConfig,
        backward: bool,
    ) -> Result<Prediction<T>> {
        let t_in = self.config.frames_in;
        let bank = self.config.use_codebank.then_some(&self.codebank);
        let mut g = self.global.forward(sample.frames.clone(), t_in, bank, &loss_cfg.vq)?;
        let mut l = match (&self.local, &sample.crops) {
            (Some(branch), Some(crops)) => Some(branch.forward(crops.clone(), t_in, bank, &loss_cfg.vq)?),
            (Some(_), None) => return Err(Error::config("local pipeline enabled but no crops were prepared")),
            _ => None,
        };

        let g_proj = g.expert.projected();
        let (_, _, gh, gw) = g_proj.dims4()?;
        let mut fused = g_proj.clone();
        fused.zero_grad();
        if let Some(l) = &l {
            let up = upsample_nearest(l.expert.projected(), gh, gw)?;
            let per = fused.len();
            for chunk in up.values.chunks(per) {
                for (o, &v) in fused.values.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
        }
        let shape = self.decoder.shape;
        let mut dec = self.decoder.forward(fused)?;
        let pred = dec.prediction(&shape);

        let mut code_indices = Vec::new();
        let mut l_vq = 0.0;
        for pass in std::iter::once(&g).chain(l.as_ref()) {
            if let Some((q, loss)) = &pass.quantized {
                l_vq += loss.loss.as_f64();
                code_indices.extend_from_slice(&q.indices);
            }
        }
        let mut l_of = g.flow.loss.as_f64() + l.as_ref().map_or(0.0, |l| l.flow.loss.as_f64());

        let output_flow = if loss_cfg.of_on_output {
            Some(self.output_flow_loss(&pred, g.expert.flows())?)
        } else {
            None
        };
        if let Some((ofl, _)) = &output_flow {
            l_of += ofl.loss.as_f64();
        }

        let (l_mse, mse_grad) = match target {
            Some(target) => {
                let (m, grad) = mse_loss_diff(&pred, target)?;
                (m, Some(grad))
            }
            None => (0.0, None),
        };
        let report = total_loss(loss_cfg.w_of * l_of, loss_cfg.w_vq * l_vq, loss_cfg.w_mse * l_mse)?;

        if backward {
            let mse_grad = mse_grad.ok_or_else(|| Error::config("backward pass needs a target"))?;
            let w_mse = T::lit(loss_cfg.w_mse);
            let w_of = T::lit(loss_cfg.w_of);
            let w_vq = T::lit(loss_cfg.w_vq);
            let mut pred_grad: Vec<T> = mse_grad.iter().map(|&d| w_mse * d).collect();
            if let Some((ofl, _)) = &output_flow {
                for (p, &d) in pred_grad.iter_mut().zip(&ofl.grad_features) {
                    *p += w_of * d;
                }
            }
            dec.set_prediction_grad(&pred_grad);
            self.decoder.backward(&mut dec)?;
            let fused_grad = &dec.blocks.input().grad;
            for (o, &d) in g.expert.upsample.output_mut().grad.iter_mut().zip(fused_grad) {
                *o += d;
            }
            if let Some((ofl, scale)) = &output_flow {
                let flows = g.expert.flow_head.output_mut();
                let scaled: Vec<T> = ofl.grad_flows.iter().map(|&d| w_of * *scale * d).collect();
                let side = self.config.side;
                upsample_nearest_backward(flows, &scaled, side, side)?;
            }
            if let Some(l) = &mut l {
                let per = fused_grad.len();
                let repeated: Vec<T> = (0..self.config.crops.n_crops).flat_map(|_| fused_grad.iter().copied()).collect();
                debug_assert_eq!(repeated.len(), per * self.config.crops.n_crops);
                upsample_nearest_backward(l.expert.upsample.output_mut(), &repeated, gh, gw)?;
            }
            let use_bank = self.config.use_codebank;
            self.global.backward(&mut g, use_bank.then_some(&mut self.codebank), w_of, w_vq)?;
            if let (Some(branch), Some(pass)) = (&mut self.local, &mut l) {
                branch.backward(pass, use_bank.then_some(&mut self.codebank), w_of, w_vq)?;
            }
        }
        Ok(Prediction { frames: pred, report, code_indices })
    }

    /// Warping loss on the decoded frames; flows are the global expert's,
    /// upsampled to the output side and scaled to output pixels.
    fn output_flow_loss(&self, pred: &DiffArray<T>, flows: &DiffArray<T>) -> Result<(FlowLoss<T>, T)> {
        let c = &self.config;
        if c.frames_out != c.frames_in {
            return Err(Error::config("warping loss on decoded output needs frames_out == frames_in"));
        }
        let (_, _, fh, _) = flows.dims4()?;
        let scale = T::lit(c.side as f64 / fh as f64);
        let mut up = upsample_nearest(flows, c.side, c.side)?;
        up.values.iter_mut().for_each(|v| *v *= scale);
        Ok((flow_loss_grouped(pred, &up, c.frames_out)?, scale))
    }

    /// Prediction without gradients.
    pub fn predict(&mut self, sample: &SampleInput<T>) -> Result<DiffArray<T>> {
        Ok(self.run(sample, None, &LossConfig::default(), false)?.frames)
    }

    /// Every learnable array in a fixed order with a stable name.
    pub fn params(&self) -> Vec<(String, &DiffArray<T>)> {
        let mut out = Vec::new();
        self.global.params("global", &mut out);
        if let Some(l) = &self.local {
            l.params("local", &mut out);
        }
        out.push(("codebank.codes".to_string(), &self.codebank.codes));
        self.decoder.params("decoder", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut DiffArray<T>)> {
        let mut out = Vec::new();
        self.global.params_mut("global", &mut out);
        if let Some(l) = &mut self.local {
            l.params_mut("local", &mut out);
        }
        out.push(("codebank.codes".to_string(), &mut self.codebank.codes));
        self.decoder.params_mut("decoder", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Adds `other`'s gradients into this model's.
    pub fn accumulate_grads(&mut self, other: &Model<T>) {
        for ((_, p), (_, o)) in self.params_mut().into_iter().zip(other.params()) {
            p.accumulate_grad(o);
        }
    }

    /// Flattened parameter values, in [`Model::params`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|(_, p)| p.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params().iter().flat_map(|(_, p)| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let mut offset = 0;
        for (_, p) in self.params_mut() {
            let n = p.len();
            let src = flat.get(offset..offset + n).ok_or_else(|| Error::dim("flat parameter vector too short"))?;
            p.values.copy_from_slice(src);
            offset += n;
        }
        if offset != flat.len() {
            return Err(Error::dim("flat parameter vector too long"));
        }
        Ok(())
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        let mut m = Model::<U>::new(self.config.clone(), 0)?;
        let flat: Vec<U> = self.flat_params().iter().map(|v| U::lit(v.as_f64())).collect();
        m.set_flat_params(&flat)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            frames_in: 3,
            frames_out: 2,
            channels: 1,
            side: 16,
            size: ModelSize::S,
            codebank_size: 4,
            codebank_dim: 3,
            crops: CropConfig { n_crops: 2, crop_out: 8, max_area_fraction: 0.5 },
            global_kernel: 3,
            local_kernel: 3,
            down_floor: 4,
            expert_features: 2,
            proj_channels: 2,
            decoder: DecoderConfig { form: crate::fusion::DecoderForm::Dc, depth: 2, channels: vec![2, 2] },
            use_local: true,
            use_codebank: true,
            head_bias: 0.0,
        }
    }

    #[test]
    fn shapes_of_default_model() {
        let cfg = ModelConfig { codebank_size: 128, codebank_dim: 32, ..Default::default() };
        let mut m = Model::<f32>::new(cfg, 1).unwrap();
        let seq = FrameSequence::zeros([10, 1, 64, 64]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = m.prepare(&seq, &mut rng).unwrap();
        assert_eq!(sample.crops.as_ref().unwrap().shape(), &[30, 1, 32, 32]);
        let pred = m.predict(&sample).unwrap();
        assert_eq!(pred.shape(), &[10, 1, 64, 64]);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = Model::<f64>::new(tiny_config(), 3).unwrap();
        let flat = m.flat_params();
        assert_eq!(flat.len(), m.param_count());
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        m.set_flat_params(&shifted).unwrap();
        assert_eq!(m.flat_params(), shifted);
        assert!(m.set_flat_params(&flat[1..]).is_err());
    }
}
