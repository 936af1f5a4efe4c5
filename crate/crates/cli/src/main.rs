use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stprior_core::checkpoint::Checkpoint;
use stprior_core::config::RunConfig;
use stprior_core::data::{read_sequences, write_sequences, FrameSequence};
use stprior_core::metrics::persistence_baseline;
use stprior_core::model::Model;
use stprior_core::plot::{parse_csv, render_table};
use stprior_core::train::{evaluate, history_csv, predict_one, score, split_sequence, EpochRecord, EvalReport, Metrics, Trainer};
use stprior_core::Error;

#[derive(Parser)]
#[command(name = "stprior", version, about = "Spatio-temporal sequence prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write train/val/test STDS files.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoints and a loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report MSE, SSIM and PSNR on a split next to the persistence baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Score the targets against themselves instead of running the model.
        #[arg(long)]
        oracle: bool,
    },
    /// Predict the next frames for every sequence of an STDS file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Render one SVG curve per column of a CSV file.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn split_path(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.data_dir.join(format!("{}.stds", split))
}

fn read_split(cfg: &RunConfig, split: &str) -> Result<Vec<FrameSequence>> {
    let path = split_path(cfg, split);
    read_sequences(&path).with_context(|| format!("reading {}", path.display()))
}

fn generate(common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(o) = &common.out {
        cfg.data_dir = o.clone();
    }
    fs::create_dir_all(&cfg.data_dir)?;
    let splits = cfg.generate_splits()?;
    for (name, seqs) in ["train", "val", "test"].into_iter().zip(&splits) {
        let path = split_path(&cfg, name);
        write_sequences(&path, seqs)?;
        println!("{}: {} sequences -> {}", name, seqs.len(), path.display());
    }
    Ok(())
}

fn write_history(out: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(out.join("loss.csv"), history_csv(history))?;
    Ok(())
}

/// Rows of an earlier loss CSV up to `epochs`, so a resumed run keeps them.
fn previous_history(out: &Path, epochs: usize) -> Result<Vec<EpochRecord>> {
    let path = out.join("loss.csv");
    if epochs == 0 || !path.exists() {
        return Ok(Vec::new());
    }
    let table = parse_csv(&fs::read_to_string(&path)?)?;
    Ok(table
        .rows
        .iter()
        .filter(|r| r[0] as usize <= epochs)
        .map(|r| EpochRecord {
            epoch: r[0] as usize,
            report: stprior_core::train::LossReport { l_of: r[1], l_vq: r[2], l_mse: r[3], total: r[4] },
            val_mse: r[5],
        })
        .collect())
}

fn train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let mut model = Model::<f32>::new(cfg.model_config(), cfg.seed)?;
    let mut start = None;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        ck.check_digest(&cfg.digest())?;
        ck.apply(&mut model)?;
        start = Some(ck);
    }
    let train = read_split(&cfg, "train")?;
    let val = read_split(&cfg, "val")?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;

    let mut trainer = Trainer::new(model, cfg.train_config(), cfg.loss_config())?;
    if let Some(ck) = start {
        trainer.epochs_done = ck.epochs_done();
        let v = ck.velocity();
        if !v.is_empty() {
            trainer.velocity = v;
        }
        trainer.history = previous_history(&out, trainer.epochs_done)?;
    }
    let digest = cfg.digest();
    let save = |t: &Trainer| -> stprior_core::Result<()> {
        Checkpoint::from_model(&t.model, digest, t.epochs_done, &t.velocity).save(out.join("checkpoint.stck"))
    };
    let result = trainer.run(&train, &val, |t, rec| {
        println!(
            "epoch {:>4}  l_of {:.5}  l_vq {:.5}  l_mse {:.6}  total {:.5}  val_mse {:.6}",
            rec.epoch, rec.report.l_of, rec.report.l_vq, rec.report.l_mse, rec.report.total, rec.val_mse
        );
        fs::write(out.join("loss.csv"), history_csv(&t.history))?;
        if rec.epoch % cfg.checkpoint_every == 0 {
            save(t)?;
        }
        Ok(())
    });
    write_history(&out, &trainer.history)?;
    result?;
    save(&trainer)?;
    println!("checkpoint -> {}", out.join("checkpoint.stck").display());
    Ok(())
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    ck.check_digest(&cfg.digest())?;
    let mut model = Model::<f32>::new(cfg.model_config(), cfg.seed)?;
    ck.apply(&mut model)?;
    Ok(model)
}

fn fmt_psnr(p: Option<f64>) -> String {
    p.map_or_else(|| "undefined".to_string(), |v| format!("{:.4}", v))
}

fn metrics_row(name: &str, m: &Metrics) -> String {
    format!("{},{},{},{}", name, m.mse, m.ssim, p_csv(m.psnr))
}

fn p_csv(p: Option<f64>) -> String {
    p.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

fn eval(common: &Common, checkpoint: &Path, split: Split, oracle: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let mut model = load_model(&cfg, checkpoint)?;
    let seqs = read_split(&cfg, split.name())?;
    let report = if oracle {
        let (t_in, k) = (cfg.frames_in, cfg.frames_out);
        let mut targets = Vec::new();
        let mut baselines = Vec::new();
        for s in &seqs {
            let (input, target) = split_sequence(s, t_in, k)?;
            baselines.push(persistence_baseline(&input, k)?);
            targets.push(target);
        }
        EvalReport { model: score(&targets, &targets)?, baseline: score(&baselines, &targets)? }
    } else {
        evaluate(&mut model, &seqs, cfg.seed)?
    };
    println!("split {} ({} sequences)", split.name(), seqs.len());
    println!("{:<10} {:>12} {:>10} {:>12}", "predictor", "mse", "ssim", "psnr_db");
    for (name, m) in [("model", &report.model), ("baseline", &report.baseline)] {
        println!("{:<10} {:>12.6} {:>10.4} {:>12}", name, m.mse, m.ssim, fmt_psnr(m.psnr));
    }
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    let summary = format!(
        "predictor,mse,ssim,psnr\n{}\n{}\n",
        metrics_row("model", &report.model),
        metrics_row("baseline", &report.baseline)
    );
    fs::write(out.join(format!("metrics_{}.csv", split.name())), summary)?;
    let mut frames = String::from("frame,model_mse,model_ssim,baseline_mse,baseline_ssim\n");
    for f in 0..report.model.mse_per_frame.len() {
        frames.push_str(&format!(
            "{},{},{},{},{}\n",
            f + 1,
            report.model.mse_per_frame[f],
            report.model.ssim_per_frame[f],
            report.baseline.mse_per_frame[f],
            report.baseline.ssim_per_frame[f]
        ));
    }
    fs::write(out.join(format!("frames_{}.csv", split.name())), frames)?;
    Ok(())
}

fn predict(common: &Common, checkpoint: &Path, input: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let mut model = load_model(&cfg, checkpoint)?;
    let seqs = read_sequences(input).with_context(|| format!("reading {}", input.display()))?;
    let t_in = cfg.frames_in;
    let mut preds = Vec::with_capacity(seqs.len());
    for (i, s) in seqs.iter().enumerate() {
        if s.frames() < t_in {
            return Err(Error::Config(format!("sequence {} has {} frames, the model needs {}", i, s.frames(), t_in)).into());
        }
        let context = s.slice(s.frames() - t_in, s.frames())?;
        preds.push(predict_one(&mut model, &context, cfg.seed, i)?);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("predictions.stds");
    write_sequences(&path, &preds)?;
    println!("{} sequences of {} frames -> {}", preds.len(), cfg.frames_out, path.display());
    Ok(())
}

fn plot(input: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let table = parse_csv(&text).with_context(|| format!("parsing {}", input.display()))?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    for (name, svg) in render_table(&table) {
        let path = dir.join(format!("{}_{}.svg", stem, name));
        fs::write(&path, svg)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("STDS_THREADS") {
        let n: usize = v.parse().with_context(|| format!("STDS_THREADS must be a positive integer, got {:?}", v))?;
        if n == 0 {
            bail!("STDS_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate { common } => generate(&common),
        Command::Train { common, checkpoint } => train(&common, checkpoint.as_deref()),
        Command::Eval { common, checkpoint, split, oracle } => eval(&common, &checkpoint, split, oracle),
        Command::Predict { common, checkpoint, input } => predict(&common, &checkpoint, &input),
        Command::Plot { input, out } => plot(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            match e.downcast_ref::<Error>() {
                Some(Error::TrainingDiverged { .. }) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
