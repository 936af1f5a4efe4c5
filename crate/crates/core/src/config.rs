//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Every key has a default, so an empty file is a valid config.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::crops::CropConfig;
use crate::data::{
    make_splits, simulate_gray_scott, simulate_moving_blobs, BlobSceneParams, DatasetSplit, FrameSequence, GrayScottParams,
};
use crate::encoder::ModelSize;
use crate::error::{Error, Result};
use crate::fusion::{DecoderConfig, DecoderForm};
use crate::codebank::VqLossConfig;
use crate::model::{LossConfig, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    GrayScott,
    MovingBlobs,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::GrayScott => "gray-scott",
            Task::MovingBlobs => "moving-blobs",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray-scott" => Ok(Task::GrayScott),
            "moving-blobs" => Ok(Task::MovingBlobs),
            other => Err(Error::config(format!("unknown task {:?} (expected gray-scott or moving-blobs)", other))),
        }
    }
}

/// One of the three supported bank shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodebankShape {
    pub size: usize,
    pub dim: usize,
}

impl CodebankShape {
    pub const ALLOWED: [(usize, usize); 3] = [(128, 32), (256, 64), (512, 128)];
}

impl fmt::Display for CodebankShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.size, self.dim)
    }
}

impl FromStr for CodebankShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("codebank must be one of 128x32, 256x64, 512x128, got {:?}", s));
        let (a, b) = s.split_once('x').ok_or_else(bad)?;
        let shape = CodebankShape { size: a.parse().map_err(|_| bad())?, dim: b.parse().map_err(|_| bad())? };
        if !Self::ALLOWED.contains(&(shape.size, shape.dim)) {
            return Err(bad());
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    pub side: usize,
    pub blob_count: usize,
    pub blob_radius: f64,
    pub blob_speed: f64,
    pub blob_background: f64,
    pub gs_du: f64,
    pub gs_dv: f64,
    pub gs_feed: f64,
    pub gs_kill: f64,
    pub gs_dt: f64,
    pub gs_steps_per_frame: usize,
    pub gs_warmup: usize,

    pub size: ModelSize,
    pub codebank: CodebankShape,
    pub global_kernel: usize,
    pub local_kernel: usize,
    pub down_floor: usize,
    pub expert_features: usize,
    pub proj_channels: usize,
    pub decoder_form: DecoderForm,
    pub decoder_depth: usize,
    /// Empty means 16 per block and 8 in the last.
    pub decoder_channels: Vec<usize>,
    pub head_bias: f64,
    pub n_crops: usize,
    pub crop_out: usize,
    pub max_area_fraction: f64,
    pub use_local: bool,
    pub use_codebank: bool,

    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub beta: f64,
    pub w_of: f64,
    pub w_vq: f64,
    pub w_mse: f64,
    pub of_on_output: bool,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gs = GrayScottParams::default();
        let blobs = BlobSceneParams::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            task: Task::MovingBlobs,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            train_count: 200,
            val_count: 40,
            test_count: 40,
            frames_in: model.frames_in,
            frames_out: model.frames_out,
            side: model.side,
            blob_count: blobs.n_blobs,
            blob_radius: blobs.radius,
            blob_speed: blobs.speed,
            blob_background: blobs.background,
            gs_du: gs.du,
            gs_dv: gs.dv,
            gs_feed: gs.feed,
            gs_kill: gs.kill,
            gs_dt: gs.dt,
            gs_steps_per_frame: gs.steps_per_frame,
            gs_warmup: gs.warmup,
            size: model.size,
            codebank: CodebankShape { size: 128, dim: 32 },
            global_kernel: model.global_kernel,
            local_kernel: model.local_kernel,
            down_floor: model.down_floor,
            expert_features: model.expert_features,
            proj_channels: model.proj_channels,
            decoder_form: model.decoder.form,
            decoder_depth: model.decoder.depth,
            decoder_channels: Vec::new(),
            head_bias: model.head_bias,
            n_crops: model.crops.n_crops,
            crop_out: model.crops.crop_out,
            max_area_fraction: model.crops.max_area_fraction,
            use_local: true,
            use_codebank: true,
            lr: train.lr,
            epochs: train.epochs,
            batch: train.batch,
            momentum: train.momentum,
            beta: VqLossConfig::default().beta,
            w_of: 1.0,
            w_vq: 1.0,
            w_mse: 1.0,
            of_on_output: false,
            checkpoint_every: 10,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::config(format!("invalid value {:?} for {}", value, key)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {:?} for {}", value, key))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Keys that determine the parameter layout; the digest covers exactly these.
const ARCH_KEYS: &[&str] = &[
    "task",
    "frames_in",
    "frames_out",
    "side",
    "size",
    "codebank",
    "global_kernel",
    "local_kernel",
    "down_floor",
    "expert_features",
    "proj_channels",
    "decoder_form",
    "decoder_depth",
    "decoder_channels",
    "n_crops",
    "crop_out",
    "use_local",
    "use_codebank",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "task" => self.task = v.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = parse_value(key, v)?,
            "train_count" => self.train_count = parse_value(key, v)?,
            "val_count" => self.val_count = parse_value(key, v)?,
            "test_count" => self.test_count = parse_value(key, v)?,
            "frames_in" => self.frames_in = parse_value(key, v)?,
            "frames_out" => self.frames_out = parse_value(key, v)?,
            "side" => self.side = parse_value(key, v)?,
            "blob_count" => self.blob_count = parse_value(key, v)?,
            "blob_radius" => self.blob_radius = parse_value(key, v)?,
            "blob_speed" => self.blob_speed = parse_value(key, v)?,
            "blob_background" => self.blob_background = parse_value(key, v)?,
            "gs_du" => self.gs_du = parse_value(key, v)?,
            "gs_dv" => self.gs_dv = parse_value(key, v)?,
            "gs_feed" => self.gs_feed = parse_value(key, v)?,
            "gs_kill" => self.gs_kill = parse_value(key, v)?,
            "gs_dt" => self.gs_dt = parse_value(key, v)?,
            "gs_steps_per_frame" => self.gs_steps_per_frame = parse_value(key, v)?,
            "gs_warmup" => self.gs_warmup = parse_value(key, v)?,
            "size" => self.size = v.parse()?,
            "codebank" => self.codebank = v.parse()?,
            "global_kernel" => self.global_kernel = parse_value(key, v)?,
            "local_kernel" => self.local_kernel = parse_value(key, v)?,
            "down_floor" => self.down_floor = parse_value(key, v)?,
            "expert_features" => self.expert_features = parse_value(key, v)?,
            "proj_channels" => self.proj_channels = parse_value(key, v)?,
            "decoder_form" => self.decoder_form = v.parse()?,
            "decoder_depth" => self.decoder_depth = parse_value(key, v)?,
            "decoder_channels" => {
                self.decoder_channels = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|c| parse_value(key, c.trim())).collect::<Result<_>>()?
                }
            }
            "head_bias" => self.head_bias = parse_value(key, v)?,
            "n_crops" => self.n_crops = parse_value(key, v)?,
            "crop_out" => self.crop_out = parse_value(key, v)?,
            "max_area_fraction" => self.max_area_fraction = parse_value(key, v)?,
            "use_local" => self.use_local = parse_bool(key, v)?,
            "use_codebank" => self.use_codebank = parse_bool(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "w_of" => self.w_of = parse_value(key, v)?,
            "w_vq" => self.w_vq = parse_value(key, v)?,
            "w_mse" => self.w_mse = parse_value(key, v)?,
            "of_on_output" => self.of_on_output = parse_bool(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            _ => return Err(Error::config(format!("unknown key {:?}", key))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.task.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("train_count", self.train_count.to_string()),
            ("val_count", self.val_count.to_string()),
            ("test_count", self.test_count.to_string()),
            ("frames_in", self.frames_in.to_string()),
            ("frames_out", self.frames_out.to_string()),
            ("side", self.side.to_string()),
            ("blob_count", self.blob_count.to_string()),
            ("blob_radius", self.blob_radius.to_string()),
            ("blob_speed", self.blob_speed.to_string()),
            ("blob_background", self.blob_background.to_string()),
            ("gs_du", self.gs_du.to_string()),
            ("gs_dv", self.gs_dv.to_string()),
            ("gs_feed", self.gs_feed.to_string()),
            ("gs_kill", self.gs_kill.to_string()),
            ("gs_dt", self.gs_dt.to_string()),
            ("gs_steps_per_frame", self.gs_steps_per_frame.to_string()),
            ("gs_warmup", self.gs_warmup.to_string()),
            ("size", self.size.to_string()),
            ("codebank", self.codebank.to_string()),
            ("global_kernel", self.global_kernel.to_string()),
            ("local_kernel", self.local_kernel.to_string()),
            ("down_floor", self.down_floor.to_string()),
            ("expert_features", self.expert_features.to_string()),
            ("proj_channels", self.proj_channels.to_string()),
            ("decoder_form", self.decoder_form.to_string()),
            ("decoder_depth", self.decoder_depth.to_string()),
            ("decoder_channels", join(&self.decoder_config().channels)),
            ("head_bias", self.head_bias.to_string()),
            ("n_crops", self.n_crops.to_string()),
            ("crop_out", self.crop_out.to_string()),
            ("max_area_fraction", self.max_area_fraction.to_string()),
            ("use_local", self.use_local.to_string()),
            ("use_codebank", self.use_codebank.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("momentum", self.momentum.to_string()),
            ("beta", self.beta.to_string()),
            ("w_of", self.w_of.to_string()),
            ("w_vq", self.w_vq.to_string()),
            ("w_mse", self.w_mse.to_string()),
            ("of_on_output", self.of_on_output.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => err(m),
                e => err(e.to_string()),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
    }

    /// SHA-256 over the architecture keys.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if ARCH_KEYS.contains(&k) {
                h.update(format!("{}={}\n", k, v).as_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn channels(&self) -> usize {
        match self.task {
            Task::GrayScott => 2,
            Task::MovingBlobs => 1,
        }
    }

    /// Frames per stored sequence.
    pub fn sequence_frames(&self) -> usize {
        self.frames_in + self.frames_out
    }

    pub fn split(&self) -> DatasetSplit {
        DatasetSplit { train: self.train_count, val: self.val_count, test: self.test_count }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let mut d = DecoderConfig::with_depth(self.decoder_form, self.decoder_depth);
        if !self.decoder_channels.is_empty() {
            d.channels = self.decoder_channels.clone();
        }
        d
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            frames_in: self.frames_in,
            frames_out: self.frames_out,
            channels: self.channels(),
            side: self.side,
            size: self.size,
            codebank_size: self.codebank.size,
            codebank_dim: self.codebank.dim,
            crops: CropConfig { n_crops: self.n_crops, crop_out: self.crop_out, max_area_fraction: self.max_area_fraction },
            global_kernel: self.global_kernel,
            local_kernel: self.local_kernel,
            down_floor: self.down_floor,
            expert_features: self.expert_features,
            proj_channels: self.proj_channels,
            decoder: self.decoder_config(),
            use_local: self.use_local,
            use_codebank: self.use_codebank,
            head_bias: self.head_bias,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { lr: self.lr, epochs: self.epochs, batch: self.batch, seed: self.seed, momentum: self.momentum }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            w_of: self.w_of,
            w_vq: self.w_vq,
            w_mse: self.w_mse,
            vq: VqLossConfig { beta: self.beta },
            of_on_output: self.of_on_output,
        }
    }

    pub fn gray_scott(&self) -> GrayScottParams {
        GrayScottParams {
            du: self.gs_du,
            dv: self.gs_dv,
            feed: self.gs_feed,
            kill: self.gs_kill,
            dt: self.gs_dt,
            steps_per_frame: self.gs_steps_per_frame,
            warmup: self.gs_warmup,
            height: self.side,
            width: self.side,
        }
    }

    /// Scene parameters of the `index`-th generated sequence.
    pub fn blobs(&self, index: usize) -> BlobSceneParams {
        BlobSceneParams {
            n_blobs: self.blob_count,
            radius: self.blob_radius,
            speed: self.blob_speed,
            background: self.blob_background,
            height: self.side,
            width: self.side,
            seed: self.sequence_seed(index),
        }
    }

    /// Seed of the `index`-th generated sequence.
    pub fn sequence_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
    }

    /// The `index`-th sequence of the generated pool.
    pub fn generate_sequence(&self, index: usize) -> Result<FrameSequence> {
        match self.task {
            Task::GrayScott => simulate_gray_scott(&self.gray_scott(), self.sequence_seed(index), self.sequence_frames()),
            Task::MovingBlobs => simulate_moving_blobs(&self.blobs(index), self.sequence_frames()),
        }
    }

    /// Train, val and test sequences in generation order.
    pub fn generate_splits(&self) -> Result<[Vec<FrameSequence>; 3]> {
        let split = self.split();
        let pool: Vec<FrameSequence> =
            (0..split.total()).into_par_iter().map(|i| self.generate_sequence(i)).collect::<Result<_>>()?;
        let ranges = make_splits(pool.len(), split)?;
        Ok([pool[ranges.train].to_vec(), pool[ranges.val].to_vec(), pool[ranges.test].to_vec()])
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        match self.task {
            Task::GrayScott => self.gray_scott().validate()?,
            Task::MovingBlobs => self.blobs(0).validate()?,
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("beta must be positive"));
        }
        Ok(())
    }
}
