//! Loss composition, SGD training and split evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::metrics::{mse_loss, mse_per_frame, persistence_baseline, psnr_from_mse, ssim_frame};
use crate::model::{LossConfig, Model};
use crate::tensor::DiffArray;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_of: f64,
    pub l_vq: f64,
    pub l_mse: f64,
    pub total: f64,
}

/// Unit-weight sum of the three loss terms.
pub fn total_loss(l_of: f64, l_vq: f64, l_mse: f64) -> Result<LossReport> {
    for (name, v) in [("l_of", l_of), ("l_vq", l_vq), ("l_mse", l_mse)] {
        if !v.is_finite() {
            return Err(Error::TrainingDiverged { epoch: 0, batch: 0, detail: format!("{} is {}", name, v) });
        }
    }
    Ok(LossReport { l_of, l_vq, l_mse, total: l_of + l_vq + l_mse })
}

impl LossReport {
    fn add(&mut self, o: &LossReport) {
        self.l_of += o.l_of;
        self.l_vq += o.l_vq;
        self.l_mse += o.l_mse;
        self.total += o.total;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.l_of *= s;
        self.l_vq *= s;
        self.l_mse *= s;
        self.total *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.01, epochs: 50, batch: 16, seed: 0, momentum: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and non-negative"));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

const STREAM_ORDER: u64 = 1;
const STREAM_TRAIN_CROPS: u64 = 2;
const STREAM_EVAL_CROPS: u64 = 3;

/// Independent generator for one (purpose, epoch, item) triple.
fn sub_rng(seed: u64, stream: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 56) ^ ((epoch as u64) << 28) ^ item as u64);
    rng
}

/// Splits a stored sequence into model input and target frames.
pub fn split_sequence(seq: &FrameSequence, frames_in: usize, frames_out: usize) -> Result<(FrameSequence, FrameSequence)> {
    if seq.frames() < frames_in + frames_out {
        return Err(Error::config(format!(
            "sequence has {} frames, need {} input + {} target",
            seq.frames(),
            frames_in,
            frames_out
        )));
    }
    Ok((seq.slice(0, frames_in)?, seq.slice(frames_in, frames_in + frames_out)?))
}

fn to_sequence(pred: &DiffArray<f32>) -> Result<FrameSequence> {
    let (k, c, h, w) = pred.dims4()?;
    FrameSequence::from_clamped([k, c, h, w], pred.values.clone())
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub report: LossReport,
    pub val_mse: f64,
}

pub const HISTORY_HEADER: &str = "epoch,l_of,l_vq,l_mse,total,val_mse";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!("{},{},{},{},{},{}", self.epoch, r.l_of, r.l_vq, r.l_mse, r.total, self.val_mse)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Owns the model and optimizer state across epochs so training can be
/// stopped and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub loss: LossConfig,
    pub velocity: Vec<f32>,
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        config.validate()?;
        let velocity = if config.momentum > 0.0 { vec![0.0; model.param_count()] } else { Vec::new() };
        Ok(Trainer { model, config, loss, velocity, epochs_done: 0, history: Vec::new() })
    }

    /// Gradient of the mean per-sample loss over `batch`, and the mean report.
    fn batch_gradient(&self, train: &[FrameSequence], batch: &[usize], epoch: usize) -> Result<(Vec<f32>, LossReport)> {
        let cfg = &self.model.config;
        let results: Vec<Result<(Vec<f32>, LossReport)>> = batch
            .par_iter()
            .map(|&i| {
                let (input, target) = split_sequence(&train[i], cfg.frames_in, cfg.frames_out)?;
                let mut worker = self.model.clone();
                worker.zero_grad();
                let mut rng = sub_rng(self.config.seed, STREAM_TRAIN_CROPS, epoch, i);
                let sample = worker.prepare(&input, &mut rng)?;
                let target = target.to_diff::<f32>();
                let out = worker.run(&sample, Some(&target), &self.loss, true)?;
                Ok((worker.flat_grads(), out.report))
            })
            .collect();
        let mut grad = vec![0.0f64; self.model.param_count()];
        let mut report = LossReport::default();
        for r in results {
            let (g, rep) = r?;
            for (a, &b) in grad.iter_mut().zip(&g) {
                *a += b as f64;
            }
            report.add(&rep);
        }
        let inv = 1.0 / batch.len() as f64;
        Ok((grad.iter().map(|&g| (g * inv) as f32).collect(), report.scaled(inv)))
    }

    fn step(&mut self, grad: &[f32]) {
        let lr = self.config.lr as f32;
        let mut flat = self.model.flat_params();
        if self.config.momentum > 0.0 {
            let m = self.config.momentum as f32;
            for ((w, v), &g) in flat.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
                *v = m * *v + g;
                *w -= lr * *v;
            }
        } else {
            for (w, &g) in flat.iter_mut().zip(grad) {
                *w -= lr * g;
            }
        }
        self.model.set_flat_params(&flat).expect("flat length matches the model");
    }

    /// Runs the next epoch and appends its record to the history.
    pub fn train_epoch(&mut self, train: &[FrameSequence], val: &[FrameSequence]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut sub_rng(self.config.seed, STREAM_ORDER, epoch, 0));
        let mut sum = LossReport::default();
        for (b, batch) in order.chunks(self.config.batch).enumerate() {
            let diverged = |detail: String| Error::TrainingDiverged { epoch, batch: b, detail };
            let (grad, report) = self.batch_gradient(train, batch, epoch).map_err(|e| match e {
                Error::TrainingDiverged { detail, .. } => diverged(detail),
                e => e,
            })?;
            if !grad.iter().all(|g| g.is_finite()) {
                return Err(diverged("non-finite gradient".into()));
            }
            self.step(&grad);
            sum.add(&report.scaled(batch.len() as f64));
        }
        let val_mse = if val.is_empty() { 0.0 } else { mean_mse(&mut self.model, val, self.config.seed)? };
        let record = EpochRecord { epoch, report: sum.scaled(1.0 / train.len() as f64), val_mse };
        self.epochs_done = epoch;
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are done, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        train: &[FrameSequence],
        val: &[FrameSequence],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epochs_done < self.config.epochs {
            let rec = self.train_epoch(train, val)?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }
}

/// Predicts the target frames of every stored sequence.
pub fn predict_split(model: &mut Model<f32>, seqs: &[FrameSequence], seed: u64) -> Result<Vec<FrameSequence>> {
    let (t_in, k) = (model.config.frames_in, model.config.frames_out);
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let (input, _) = split_sequence(s, t_in, k)?;
            predict_one(model, &input, seed, i)
        })
        .collect()
}

/// Predicts `K` frames from exactly `T` input frames.
pub fn predict_one(model: &mut Model<f32>, input: &FrameSequence, seed: u64, index: usize) -> Result<FrameSequence> {
    let mut rng = sub_rng(seed, STREAM_EVAL_CROPS, 0, index);
    let sample = model.prepare(input, &mut rng)?;
    to_sequence(&model.predict(&sample)?)
}

fn mean_mse(model: &mut Model<f32>, seqs: &[FrameSequence], seed: u64) -> Result<f64> {
    let preds = predict_split(model, seqs, seed)?;
    let (t_in, k) = (model.config.frames_in, model.config.frames_out);
    let mut acc = 0.0;
    for (p, s) in preds.iter().zip(seqs) {
        acc += mse_loss(p, &split_sequence(s, t_in, k)?.1)?;
    }
    Ok(acc / seqs.len() as f64)
}

/// Split-level metrics of one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub ssim: f64,
    /// `None` when some sequence is reproduced exactly.
    pub psnr: Option<f64>,
    pub mse_per_frame: Vec<f64>,
    pub ssim_per_frame: Vec<f64>,
}

/// Metrics of the model and of the persistence baseline on the same split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: Metrics,
    pub baseline: Metrics,
}

/// MSE and SSIM are means over sequences and output frames; PSNR is the
/// mean of per-sequence PSNR.
pub fn score(preds: &[FrameSequence], targets: &[FrameSequence]) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::dim("need matching, non-empty prediction and target lists"));
    }
    let k = targets[0].frames();
    let mut mse_pf = vec![0.0; k];
    let mut ssim_pf = vec![0.0; k];
    let mut psnr_sum = 0.0;
    let mut psnr_ok = true;
    for (p, t) in preds.iter().zip(targets) {
        if t.frames() != k {
            return Err(Error::dim("targets differ in length"));
        }
        for (a, m) in mse_pf.iter_mut().zip(mse_per_frame(p, t)?) {
            *a += m;
        }
        for (f, a) in ssim_pf.iter_mut().enumerate() {
            *a += ssim_frame(p, t, f)?;
        }
        match psnr_from_mse(mse_loss(p, t)?) {
            Ok(v) => psnr_sum += v,
            Err(Error::UndefinedPsnr) => psnr_ok = false,
            Err(e) => return Err(e),
        }
    }
    let n = preds.len() as f64;
    mse_pf.iter_mut().chain(ssim_pf.iter_mut()).for_each(|v| *v /= n);
    Ok(Metrics {
        mse: mse_pf.iter().sum::<f64>() / k as f64,
        ssim: ssim_pf.iter().sum::<f64>() / k as f64,
        psnr: psnr_ok.then_some(psnr_sum / n),
        mse_per_frame: mse_pf,
        ssim_per_frame: ssim_pf,
    })
}

/// Evaluates `model` and the persistence baseline on stored sequences.
pub fn evaluate(model: &mut Model<f32>, seqs: &[FrameSequence], seed: u64) -> Result<EvalReport> {
    let (t_in, k) = (model.config.frames_in, model.config.frames_out);
    let mut targets = Vec::with_capacity(seqs.len());
    let mut baselines = Vec::with_capacity(seqs.len());
    for s in seqs {
        let (input, target) = split_sequence(s, t_in, k)?;
        baselines.push(persistence_baseline(&input, k)?);
        targets.push(target);
    }
    let preds = predict_split(model, seqs, seed)?;
    Ok(EvalReport { model: score(&preds, &targets)?, baseline: score(&baselines, &targets)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_sums() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap().total, 0.0);
        assert_eq!(total_loss(0.5, 0.25, 0.25).unwrap().total, 1.0);
        assert_eq!(total_loss(0.25, 0.5, 0.25).unwrap().total, 1.0);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0), Err(Error::TrainingDiverged { .. })));
        assert!(matches!(total_loss(0.0, f64::INFINITY, 0.0), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn sub_rngs_are_distinct() {
        use rand::Rng;
        let a: u64 = sub_rng(1, STREAM_ORDER, 1, 0).gen();
        let b: u64 = sub_rng(1, STREAM_ORDER, 2, 0).gen();
        let c: u64 = sub_rng(1, STREAM_TRAIN_CROPS, 1, 0).gen();
        assert!(a != b && a != c);
        assert_eq!(a, sub_rng(1, STREAM_ORDER, 1, 0).gen::<u64>());
    }

    #[test]
    fn csv_layout() {
        let rec = EpochRecord { epoch: 1, report: total_loss(0.5, 0.25, 0.25).unwrap(), val_mse: 0.125 };
        assert_eq!(history_csv(&[rec]), "epoch,l_of,l_vq,l_mse,total,val_mse\n1,0.5,0.25,0.25,1,0.125\n");
    }
}
