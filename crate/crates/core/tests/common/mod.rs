#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stprior_core::codebank::{quantize, vq_loss, Codebank, VqLossConfig};
use stprior_core::crops::CropConfig;
use stprior_core::encoder::ModelSize;
use stprior_core::flow::{flow_loss_grouped, Expert, ExpertConfig};
use stprior_core::fusion::{DecodeShape, Decoder, DecoderConfig, DecoderForm};
use stprior_core::layers::{Layer, Stack};
use stprior_core::model::{LossConfig, Model, ModelConfig};
use stprior_core::ops::{
    bilinear_tap, conv2d, conv2d_backward, deconv2d, deconv2d_backward, finite_diff_check, ConvSpec, LayerNorm,
};
use stprior_core::DiffArray;

pub const EPS: f64 = 1e-6;

/// Spatial variance of `u` after 500 default steps from seed 0.
pub const PATTERN_VARIANCE: f64 = 2.6338e-2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_array(rng: &mut impl Rng, shape: &[usize]) -> DiffArray<f64> {
    let n = shape.iter().product();
    DiffArray::from_vec(shape, uniform(rng, n, -1.0, 1.0)).unwrap()
}

/// Splits `point` into consecutive chunks of the given lengths.
pub fn chunks<'a>(point: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    let mut o = 0;
    for &n in lens {
        out.push(&point[o..o + n]);
        o += n;
    }
    assert_eq!(o, point.len());
    out
}

type Named<'a> = Vec<(String, &'a DiffArray<f64>)>;
type NamedMut<'a> = Vec<(String, &'a mut DiffArray<f64>)>;

fn plist<'a>(f: impl FnOnce(&mut Named<'a>)) -> Named<'a> {
    let mut v = Vec::new();
    f(&mut v);
    v
}

fn plist_mut<'a>(f: impl FnOnce(&mut NamedMut<'a>)) -> NamedMut<'a> {
    let mut v = Vec::new();
    f(&mut v);
    v
}

/// Zero-initialized biases put pre-activations exactly on the relu kink;
/// small random offsets move them off it. Zero-initialized kernels (the
/// decoder head) would hide every upstream gradient, so they get random values.
pub fn jitter_biases<'a>(params: NamedMut<'a>, rng: &mut impl Rng) {
    for (name, p) in params {
        if name.ends_with(".bias") {
            p.values.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
        } else if name.ends_with(".kernel") && p.values.iter().all(|&v| v == 0.0) {
            p.values.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error over `instances` random conv2d problems, checking
/// input, kernel and bias gradients.
pub fn conv2d_check(instances: usize, seed: u64, transposed: bool) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for _ in 0..instances {
        let (cin, cout) = (r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 2, 3, 4][r.gen_range(0..4)];
        let stride = r.gen_range(1..4);
        let pad = r.gen_range(0..k);
        let (n, h, w) = (r.gen_range(1..3), r.gen_range(k.max(2)..7), r.gen_range(k.max(2)..7));
        let x0 = random_array(&mut r, &[n, cin, h, w]);
        let kshape = if transposed { [cin, cout, k, k] } else { [cout, cin, k, k] };
        let k0 = random_array(&mut r, &kshape);
        let b0 = random_array(&mut r, &[cout]);
        let spec = |kv: &[f64], bv: &[f64]| {
            ConvSpec::new(
                DiffArray::from_vec(&kshape, kv.to_vec()).unwrap(),
                DiffArray::from_vec(&[cout], bv.to_vec()).unwrap(),
                stride,
                pad,
            )
            .unwrap()
        };
        let probe = if transposed { deconv2d(&x0, &spec(&k0.values, &b0.values)) } else { conv2d(&x0, &spec(&k0.values, &b0.values)) };
        let Ok(probe) = probe else { continue };
        let weights = uniform(&mut r, probe.len(), -1.0, 1.0);
        let point: Vec<f64> = x0.values.iter().chain(&k0.values).chain(&b0.values).copied().collect();
        let lens = [x0.len(), k0.len(), b0.len()];
        let err = finite_diff_check(&point, EPS, |p, want| {
            let c = chunks(p, &lens);
            let mut x = DiffArray::from_vec(x0.shape(), c[0].to_vec()).unwrap();
            let mut s = spec(c[1], c[2]);
            let mut y = if transposed { deconv2d(&x, &s).unwrap() } else { conv2d(&x, &s).unwrap() };
            let loss = dot(&y.values, &weights);
            if !want {
                return (loss, None);
            }
            y.grad.copy_from_slice(&weights);
            if transposed {
                deconv2d_backward(&mut x, &mut s, &y, true).unwrap();
            } else {
                conv2d_backward(&mut x, &mut s, &y, true).unwrap();
            }
            (loss, Some(x.grad.iter().chain(&s.kernel.grad).chain(&s.bias.grad).copied().collect()))
        })
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

pub fn layer_norm_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for _ in 0..instances {
        let shape = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..5), r.gen_range(2..5)];
        let c = shape[1];
        let x0 = random_array(&mut r, &shape);
        let g0 = uniform(&mut r, c, 0.5, 1.5);
        let b0 = uniform(&mut r, c, -0.5, 0.5);
        let weights = uniform(&mut r, x0.len(), -1.0, 1.0);
        let point: Vec<f64> = x0.values.iter().chain(&g0).chain(&b0).copied().collect();
        let lens = [x0.len(), c, c];
        let err = finite_diff_check(&point, EPS, |p, want| {
            let ch = chunks(p, &lens);
            let mut ln = LayerNorm::<f64>::new(c, 1e-5);
            ln.gain.values.copy_from_slice(ch[1]);
            ln.bias.values.copy_from_slice(ch[2]);
            let mut x = DiffArray::from_vec(&shape, ch[0].to_vec()).unwrap();
            let mut y = ln.forward(&x).unwrap();
            let loss = dot(&y.values, &weights);
            if !want {
                return (loss, None);
            }
            y.grad.copy_from_slice(&weights);
            ln.backward(&mut x, &y).unwrap();
            (loss, Some(x.grad.iter().chain(&ln.gain.grad).chain(&ln.bias.grad).copied().collect()))
        })
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Gradient of a bilinear read with respect to the field and both coordinates.
pub fn bilinear_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for _ in 0..instances {
        let (h, w) = (r.gen_range(2..6), r.gen_range(2..6));
        let field = uniform(&mut r, h * w, -1.0, 1.0);
        let row = r.gen_range(0.01..(h as f64 - 1.01));
        let col = r.gen_range(0.01..(w as f64 - 1.01));
        let mut point = field.clone();
        point.extend([row, col]);
        let err = finite_diff_check(&point, EPS, |p, want| {
            let tap = bilinear_tap(&p[..h * w], h, w, p[h * w], p[h * w + 1]);
            if !want {
                return (tap.value, None);
            }
            let mut g = vec![0.0; h * w + 2];
            for (i, wt) in tap.taps {
                g[i] += wt;
            }
            g[h * w] = tap.d_row;
            g[h * w + 1] = tap.d_col;
            (tap.value, Some(g))
        })
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// A random conv / deconv / norm / activation stack checked end to end.
pub fn stack_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for _ in 0..instances {
        let c = r.gen_range(1..3);
        let mut a = ConvSpec::conv_zeros(2, c, 3, 2, 1);
        a.init_uniform(c * 9, 1.0, &mut r);
        let mut b = ConvSpec::deconv_zeros(2, 2, 4, 2, 1);
        b.init_uniform(8, 1.0, &mut r);
        let mut res = ConvSpec::conv_zeros(2, 2, 3, 1, 1);
        res.init_uniform(18, 1.0, &mut r);
        let mut head = ConvSpec::conv_zeros(1, 2, 1, 1, 0);
        head.init_uniform(2, 1.0, &mut r);
        let template = Stack::new(vec![
            Layer::Conv(a),
            Layer::Norm(LayerNorm::new(2, 1e-5)),
            Layer::Relu,
            Layer::Deconv(b),
            Layer::ResidualConv(res),
            Layer::Conv(head),
            Layer::Sigmoid,
        ]);
        let x0 = random_array(&mut r, &[2, c, 6, 6]);
        let weights = uniform(&mut r, 2 * 6 * 6, -1.0, 1.0);
        let n_params: usize = plist(|o| template.params("s", o)).iter().map(|p| p.1.len()).sum();
        let mut point = x0.values.clone();
        for (_, p) in plist(|o| template.params("s", o)) {
            point.extend(&p.values);
        }
        let err = finite_diff_check(&point, EPS, |p, want| {
            let mut st = template.clone();
            let mut o = x0.len();
            for (_, q) in plist_mut(|o| st.params_mut("s", o)) {
                let n = q.len();
                q.values.copy_from_slice(&p[o..o + n]);
                o += n;
            }
            let x = DiffArray::from_vec(x0.shape(), p[..x0.len()].to_vec()).unwrap();
            let mut tr = st.forward(x).unwrap();
            let loss = dot(&tr.output().values, &weights);
            if !want {
                return (loss, None);
            }
            tr.output_mut().grad.copy_from_slice(&weights);
            st.backward(&mut tr, true).unwrap();
            let mut g = tr.input().grad.clone();
            for (_, q) in plist(|o| st.params("s", o)) {
                g.extend(&q.grad);
            }
            assert_eq!(g.len(), x0.len() + n_params);
            (loss, Some(g))
        })
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Expert flow estimation followed by the warping loss, plus a weighted read
/// of the projected output, against the expert input and every parameter.
pub fn expert_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    for _ in 0..instances {
        let t = r.gen_range(2..4);
        let d = r.gen_range(1..3);
        let in_side = 2;
        let out_side = [2, 4][r.gen_range(0..2)];
        let cfg = ExpertConfig { kernel: 3, feature_channels: 2, proj_channels: 2, in_side, out_side };
        let mut template = Expert::<f64>::new(cfg, d, &mut r).unwrap();
        // Larger flows so the warp moves samples across cells.
        for (_, p) in plist_mut(|o| template.params_mut("e", o)) {
            for v in p.values.iter_mut() {
                *v *= 3.0;
            }
        }
        let z0 = random_array(&mut r, &[t, d, in_side, in_side]);
        let read = uniform(&mut r, t * 2 * out_side * out_side, -1.0, 1.0);
        let mut point = z0.values.clone();
        for (_, p) in plist(|o| template.params("e", o)) {
            point.extend(&p.values);
        }
        let eval = |p: &[f64], want: bool| {
            let mut e = template.clone();
            let mut o = z0.len();
            for (_, q) in plist_mut(|o| e.params_mut("e", o)) {
                let n = q.len();
                q.values.copy_from_slice(&p[o..o + n]);
                o += n;
            }
            let z = DiffArray::from_vec(z0.shape(), p[..z0.len()].to_vec()).unwrap();
            let mut tr = e.estimate_flow(z.clone(), t).unwrap();
            let mut proj = e.linear_projection(z).unwrap();
            let fl = flow_loss_grouped(proj.output(), tr.flows(), t).unwrap();
            let loss = fl.loss + dot(&tr.projected().values, &read);
            if !want {
                return (loss, None);
            }
            tr.flow_head.output_mut().grad.copy_from_slice(&fl.grad_flows);
            tr.upsample.output_mut().grad.copy_from_slice(&read);
            proj.output_mut().grad.copy_from_slice(&fl.grad_features);
            let mut zg = vec![0.0; z0.len()];
            e.backward(&mut tr, &mut zg).unwrap();
            e.projection.backward(&mut proj, true).unwrap();
            for (a, b) in zg.iter_mut().zip(&proj.input().grad) {
                *a += b;
            }
            for (_, q) in plist(|o| e.params("e", o)) {
                zg.extend(&q.grad);
            }
            (loss, Some(zg))
        };
        worst = worst.max(finite_diff_check(&point, EPS, eval).unwrap());
    }
    worst
}

pub fn decoder_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    let forms = [DecoderForm::Dc, DecoderForm::ClDc, DecoderForm::ClDcR];
    for i in 0..instances {
        let form = forms[i % 3];
        let depth = r.gen_range(2..4);
        let cfg = DecoderConfig { form, depth, channels: vec![2; depth] };
        let shape = DecodeShape {
            in_channels: 2,
            in_side: 2,
            frames_in: r.gen_range(1..3),
            frames_out: r.gen_range(1..3),
            out_channels: r.gen_range(1..3),
            out_side: [2, 4, 8][r.gen_range(0..3)],
        };
        let mut template = Decoder::<f64>::new(cfg, shape, 0.0, &mut r).unwrap();
        jitter_biases(plist_mut(|o| template.params_mut("d", o)), &mut r);
        let x0 = random_array(&mut r, &[shape.frames_in, 2, 2, 2]);
        let out_len = shape.frames_out * shape.out_channels * shape.out_side * shape.out_side;
        let weights = uniform(&mut r, out_len, -1.0, 1.0);
        let mut point = x0.values.clone();
        for (_, p) in plist(|o| template.params("d", o)) {
            point.extend(&p.values);
        }
        let eval = |p: &[f64], want: bool| {
            let mut dec = template.clone();
            let mut o = x0.len();
            for (_, q) in plist_mut(|o| dec.params_mut("d", o)) {
                let n = q.len();
                q.values.copy_from_slice(&p[o..o + n]);
                o += n;
            }
            let x = DiffArray::from_vec(x0.shape(), p[..x0.len()].to_vec()).unwrap();
            let mut tr = dec.forward(x).unwrap();
            let loss = dot(&tr.prediction(&shape).values, &weights);
            if !want {
                return (loss, None);
            }
            tr.set_prediction_grad(&weights);
            dec.backward(&mut tr).unwrap();
            let mut g = tr.blocks.input().grad.clone();
            for (_, q) in plist(|o| dec.params("d", o)) {
                g.extend(&q.grad);
            }
            (loss, Some(g))
        };
        worst = worst.max(finite_diff_check(&point, EPS, eval).unwrap());
    }
    worst
}

/// The commitment term against `Z` and the codebook term against the codewords,
/// each with the other operand held fixed.
pub fn vq_loss_check(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(seed);
    let cfg = VqLossConfig { beta: 0.99 };
    for _ in 0..instances {
        let (o, d) = (r.gen_range(2..6), r.gen_range(1..4));
        let n = r.gen_range(1..3);
        let z0 = random_array(&mut r, &[n, d, 2, 2]);
        let bank0 = Codebank::new(random_array(&mut r, &[o, d])).unwrap();
        let assign = quantize(&z0, &bank0).unwrap();

        let commit = |p: &[f64], want: bool| {
            let z = DiffArray::from_vec(z0.shape(), p.to_vec()).unwrap();
            let l = vq_loss(&z, &assign, &bank0, &VqLossConfig { beta: 1.0 }).unwrap();
            // With the selection fixed, beta only scales the commitment half.
            let commit_only = l.loss / 2.0;
            let grad = vq_loss(&z, &assign, &bank0, &cfg).unwrap().grad_z.iter().map(|g| g / cfg.beta).collect();
            (commit_only, want.then_some(grad))
        };
        worst = worst.max(finite_diff_check(&z0.values, EPS, commit).unwrap());

        let codebook = |p: &[f64], want: bool| {
            let bank = Codebank::new(DiffArray::from_vec(&[o, d], p.to_vec()).unwrap()).unwrap();
            let mut fixed = assign.clone();
            for (k, v) in fixed.quantized.values.iter_mut().enumerate() {
                let hw = z0.shape()[2] * z0.shape()[3];
                let (s, rest) = (k / (d * hw), k % (d * hw));
                let (ch, pos) = (rest / hw, rest % hw);
                *v = bank.code(assign.indices[s * hw + pos])[ch];
            }
            let l = vq_loss(&z0, &fixed, &bank, &cfg).unwrap();
            (l.loss / (1.0 + cfg.beta), want.then_some(l.grad_codes))
        };
        worst = worst.max(finite_diff_check(&bank0.codes.values, EPS, codebook).unwrap());
    }
    worst
}

pub fn tiny_model_config(use_codebank: bool, of_on_output: bool) -> (ModelConfig, LossConfig) {
    let cfg = ModelConfig {
        frames_in: 3,
        frames_out: if of_on_output { 3 } else { 2 },
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
        decoder: DecoderConfig { form: DecoderForm::ClDcR, depth: 2, channels: vec![2, 2] },
        use_local: true,
        use_codebank,
        head_bias: 0.0,
    };
    (cfg, LossConfig { of_on_output, ..LossConfig::default() })
}

/// Smallest gap between the nearest and second-nearest codeword distance
/// over every latent position of both pipelines.
fn assignment_margin(model: &Model<f64>, sample: &stprior_core::model::SampleInput<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut latents = vec![model.global.encoder.forward(sample.frames.clone()).unwrap().output().clone()];
    if let (Some(l), Some(c)) = (&model.local, &sample.crops) {
        latents.push(l.encoder.forward(c.clone()).unwrap().output().clone());
    }
    let bank = &model.codebank;
    for z in latents {
        let (n, d, h, w) = z.dims4().unwrap();
        for s in 0..n {
            for p in 0..h * w {
                let v: Vec<f64> = (0..d).map(|k| z.values[(s * d + k) * h * w + p]).collect();
                let mut dist: Vec<f64> = (0..bank.size())
                    .map(|j| v.iter().zip(bank.code(j)).map(|(a, b)| (a - b).powi(2)).sum())
                    .collect();
                dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
                margin = margin.min(dist[1] - dist[0]);
            }
        }
    }
    margin
}

/// Full forward+backward of a tiny model against central differences.
///
/// With the codebank on, encoder and codeword gradients follow the
/// straight-through rule rather than the piecewise-constant forward map, so
/// only parameters downstream of the quantizer are compared.
pub fn end_to_end_check(seed: u64, use_codebank: bool, of_on_output: bool) -> f64 {
    let (cfg, loss_cfg) = tiny_model_config(use_codebank, of_on_output);
    let mut r = rng(seed);
    let (mut model, sample) = loop {
        let mut model = Model::<f64>::new(cfg.clone(), r.gen()).unwrap();
        jitter_biases(model.params_mut(), &mut r);
        let data: Vec<f32> = (0..cfg.frames_in * 16 * 16).map(|_| r.gen_range(0.0..1.0)).collect();
        let seq = stprior_core::data::FrameSequence::new([cfg.frames_in, 1, 16, 16], data).unwrap();
        let sample = model.prepare(&seq, &mut r).unwrap();
        if !use_codebank || assignment_margin(&model, &sample) > 1e-3 {
            break (model, sample);
        }
    };
    let target = DiffArray::from_vec(
        &[cfg.frames_out, 1, 16, 16],
        (0..cfg.frames_out * 256).map(|_| r.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let base = model.flat_params();
    let compared: Vec<bool> = model
        .params()
        .iter()
        .flat_map(|(name, p)| {
            let skip = use_codebank && (name.contains(".encoder.") || name.starts_with("codebank"));
            std::iter::repeat(!skip).take(p.len())
        })
        .collect();
    let eval = |p: &[f64], want: bool| {
        let mut full = base.clone();
        let mut k = 0;
        for (i, keep) in compared.iter().enumerate() {
            if *keep {
                full[i] = p[k];
                k += 1;
            }
        }
        model.set_flat_params(&full).unwrap();
        model.zero_grad();
        let out = model.run(&sample, Some(&target), &loss_cfg, want).unwrap();
        let grad = want.then(|| {
            model.flat_grads().into_iter().zip(&compared).filter(|(_, k)| **k).map(|(g, _)| g).collect()
        });
        (out.report.total, grad)
    };
    let point: Vec<f64> = base.iter().zip(&compared).filter(|(_, k)| **k).map(|(v, _)| *v).collect();
    finite_diff_check(&point, EPS, eval).unwrap()
}

/// Exhaustive nearest codeword, lowest index among equal distances.
pub fn brute_nearest(z: &[f64], codes: &[f64], d: usize) -> usize {
    let dists: Vec<f64> = codes.chunks(d).map(|c| z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&x| x == min).unwrap()
}

/// Latents and codes on a coarse grid, so exact distance ties are common.
pub fn lattice_pair(rng: &mut impl Rng) -> (DiffArray<f64>, Codebank<f64>) {
    let d = rng.gen_range(1..5);
    let o = rng.gen_range(2..9);
    let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let level = |rng: &mut dyn rand::RngCore| rng.gen_range(-2..=2) as f64 * 0.5;
    let mut codes: Vec<f64> = (0..o * d).map(|_| level(rng)).collect();
    if rng.gen_bool(0.3) {
        let (a, b) = (rng.gen_range(0..o), rng.gen_range(0..o));
        let row: Vec<f64> = codes[a * d..(a + 1) * d].to_vec();
        codes[b * d..(b + 1) * d].copy_from_slice(&row);
    }
    let z: Vec<f64> = (0..n * d * h * w).map(|_| level(rng)).collect();
    let z = DiffArray::from_vec(&[n, d, h, w], z).unwrap();
    (z, Codebank::new(DiffArray::from_vec(&[o, d], codes).unwrap()).unwrap())
}

pub fn continuous_pair(rng: &mut impl Rng) -> (DiffArray<f64>, Codebank<f64>) {
    let d = rng.gen_range(1..9);
    let o = rng.gen_range(2..17);
    let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
    let z = random_array(rng, &[n, d, h, w]);
    (z, Codebank::new(random_array(rng, &[o, d])).unwrap())
}

/// Positions where `quantize` disagrees with the exhaustive search, in index or codeword.
pub fn quantize_mismatches(z: &DiffArray<f64>, bank: &Codebank<f64>) -> usize {
    let (n, d, h, w) = z.dims4().unwrap();
    let q = quantize(z, bank).unwrap();
    let hw = h * w;
    let mut bad = 0;
    for s in 0..n {
        for p in 0..hw {
            let v: Vec<f64> = (0..d).map(|k| z.values[(s * d + k) * hw + p]).collect();
            let j = brute_nearest(&v, &bank.codes.values, d);
            let same_code = (0..d).all(|k| q.quantized.values[(s * d + k) * hw + p].to_bits() == bank.code(j)[k].to_bits());
            if q.indices[s * hw + p] != j || !same_code {
                bad += 1;
            }
        }
    }
    bad
}

/// Mismatching positions over `pairs` random pairs, alternating grid and continuous draws.
pub fn quantize_oracle(pairs: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..pairs)
        .map(|i| {
            let (z, bank) = if i % 2 == 0 { lattice_pair(&mut r) } else { continuous_pair(&mut r) };
            quantize_mismatches(&z, &bank)
        })
        .sum()
}
