//! Universal adversarial perturbations: three trainers, the applier and the
//! on-disk format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use gradcore::{AdamConfig, AdamState, ConvSpec, EvalContext, Graph, Tensor, Wrt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_gradient, sign, AttackKind, AttackSpec, Flag};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::zoo::Layers;
use crate::metrics::MetricModel;

const FORMAT: &str = "robench-perturbation";
const NOISE_INPUT: &str = "noise";

/// A trained additive pattern with unit L∞ norm (or all zeros).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    #[serde(skip, default = "empty_pattern")]
    pub pattern: Tensor,
    pub trained_on: String,
    pub target_metric: String,
    pub amplitude: f64,
    pub seed: u64,
    pub trainer: AttackKind,
    pub flags: Vec<Flag>,
    pub loss_history: Vec<f64>,
}

fn empty_pattern() -> Tensor {
    Tensor::zeros(&[0])
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    shape: Vec<usize>,
    #[serde(flatten)]
    meta: Perturbation,
}

impl Perturbation {
    /// Writes a one-line JSON header followed by the pattern as
    /// little-endian `f64` values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: FORMAT.to_string(),
            shape: self.pattern.shape().to_vec(),
            meta: self.clone(),
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        bytes.extend(gradcore::weights::encode_f64_le(self.pattern.data()));
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        let header: Header = serde_json::from_slice(&line)?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("unexpected format tag `{}`", header.format)));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        let expected: usize = header.shape.iter().product::<usize>() * 8;
        if blob.len() != expected {
            return Err(Error::Format(format!(
                "pattern blob has {} bytes, header needs {expected}",
                blob.len()
            )));
        }
        let values = gradcore::weights::decode_f64_le(&blob)?;
        let mut p = header.meta;
        p.pattern = Tensor::new(header.shape, values)?;
        Ok(p)
    }

    pub fn is_zero(&self) -> bool {
        self.pattern.data().iter().all(|&v| v == 0.0)
    }
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            pattern: empty_pattern(),
            trained_on: String::new(),
            target_metric: String::new(),
            amplitude: 0.0,
            seed: 0,
            trainer: AttackKind::UapCumulative,
            flags: Vec::new(),
            loss_history: Vec::new(),
        }
    }
}

/// Tiles (when the image is larger) or center-crops (when smaller) a
/// `[C, H, W]` pattern to `h x w`, per axis.
pub fn fit_pattern(pattern: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [c, ph, pw] = *pattern.shape() else {
        return Err(Error::Shape(format!("pattern shape {:?}", pattern.shape())));
    };
    if (ph, pw) == (h, w) {
        return Ok(pattern.clone());
    }
    let src = |n: usize, pn: usize, i: usize| if pn >= n { (pn - n) / 2 + i } else { i % pn };
    let d = pattern.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let sy = src(h, ph, y);
            for x in 0..w {
                out.push(d[(ch * ph + sy) * pw + src(w, pw, x)]);
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], out)?)
}

/// `clip(image + amplitude * pattern, 0, 1)`.
pub fn apply_uap(p: &Perturbation, image: &Image, amplitude: f64) -> Result<Image> {
    if p.pattern.shape().first() != Some(&image.channels()) {
        return Err(Error::Shape(format!(
            "pattern {:?} vs image with {} channels",
            p.pattern.shape(),
            image.channels()
        )));
    }
    let fitted = fit_pattern(&p.pattern, image.height(), image.width())?;
    let mut out = image.clone();
    for (v, &q) in out.data_mut().iter_mut().zip(fitted.data()) {
        *v = (*v + amplitude * q).clamp(0.0, 1.0);
    }
    Ok(out)
}

fn training_shape(trainset: &[Image]) -> Result<[usize; 3]> {
    let first = trainset.first().ok_or(Error::Empty("training set"))?;
    for img in trainset {
        if !img.same_shape(first) {
            return Err(Error::Shape(format!(
                "training images must share one resolution: {:?} vs {:?}",
                first.tensor_shape(),
                img.tensor_shape()
            )));
        }
    }
    Ok(first.tensor_shape())
}

/// Scales to unit L∞; flags an all-zero pattern.
fn normalize(pattern: Tensor, flags: &mut Vec<Flag>) -> Tensor {
    let m = pattern.max_abs();
    if m == 0.0 {
        flags.push(Flag::Degenerate);
        pattern
    } else {
        pattern.map(|v| v / m)
    }
}

/// Mean score of `clip(I + a * P)` over `batch` and its gradient in `P`.
/// Pixels where the clip is active contribute no gradient.
fn batch_objective(metric: &MetricModel, batch: &[&Image], pattern: &Tensor, a: f64) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros(pattern.shape());
    let mut total = 0.0;
    for img in batch {
        let mut x = (*img).clone();
        let mut inside = vec![false; x.len()];
        for ((v, &p), ins) in x.data_mut().iter_mut().zip(pattern.data()).zip(&mut inside) {
            let raw = *v + a * p;
            *ins = raw > 0.0 && raw < 1.0;
            *v = raw.clamp(0.0, 1.0);
        }
        let (s, gs) = metric.score_and_gradient(&x)?;
        total += s;
        for ((g, &d), &ins) in grad.data_mut().iter_mut().zip(gs.data()).zip(&inside) {
            if ins {
                *g += a * d;
            }
        }
    }
    let k = 1.0 / batch.len() as f64;
    Ok((total * k, grad.map(|v| v * k)))
}

struct TrainOpts {
    lr: f64,
    epochs: usize,
    batch_size: usize,
}

impl TrainOpts {
    fn from_spec(spec: &AttackSpec) -> Result<Self> {
        let o = Self {
            lr: spec.extra_f64("lr", 0.01)?,
            epochs: spec.extra_usize("epochs", 20)?,
            batch_size: spec.extra_usize("batch_size", 4)?,
        };
        if o.lr <= 0.0 || o.batch_size == 0 {
            return Err(Error::InvalidSpec(format!(
                "{} needs lr > 0 and batch_size >= 1",
                spec.kind
            )));
        }
        Ok(o)
    }

    fn adam(&self, shape: &[usize]) -> Result<AdamState> {
        Ok(AdamState::new(AdamConfig { lr: self.lr, ..Default::default() }, shape)?)
    }
}

/// Index batches for one epoch, shuffled by the training rng.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Mean over the training set of the one-step perturbation `-sign(grad J)`.
fn train_cumulative(metric: &MetricModel, trainset: &[Image], shape: [usize; 3]) -> Result<(Tensor, Vec<f64>)> {
    let mut acc = Tensor::zeros(&shape);
    let mut losses = Vec::with_capacity(trainset.len());
    for img in trainset {
        let (j, g) = loss_and_gradient(metric, img)?;
        losses.push(j);
        for (a, &d) in acc.data_mut().iter_mut().zip(g.data()) {
            *a -= sign(d);
        }
    }
    let k = 1.0 / trainset.len() as f64;
    Ok((acc.map(|v| v * k), vec![losses.iter().sum::<f64>() * k]))
}

/// Adam on the pattern itself; loss is the negated mean score.
fn train_optimized(
    metric: &MetricModel,
    trainset: &[Image],
    shape: [usize; 3],
    spec: &AttackSpec,
) -> Result<(Tensor, Vec<f64>)> {
    let opts = TrainOpts::from_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = opts.adam(&shape)?;
    let mut p = Tensor::zeros(&shape);
    let mut history = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(trainset.len(), opts.batch_size, &mut rng);
        for b in &batches {
            let batch: Vec<&Image> = b.iter().map(|&i| &trainset[i]).collect();
            let (mean_score, g) = batch_objective(metric, &batch, &p, spec.amplitude)?;
            let loss = -mean_score;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: adam.step_count() as usize, history });
            }
            epoch_loss += loss;
            p = adam.step(&p, &g.map(|v| -v))?.map(|v| v.clamp(-1.0, 1.0));
        }
        history.push(epoch_loss / batches.len() as f64);
    }
    Ok((p, history))
}

/// Two-level encoder–decoder with skip connections. Downsampling by 2x2
/// average pooling, upsampling by nearest neighbour; the final 1x1 layer is
/// zero-initialized so the untrained output is the zero pattern.
pub fn generator(channels: usize, width: usize, seed: u64) -> Graph {
    let mut l = Layers::new(seed);
    let same = ConvSpec::same(3);
    let x = l.g.input(NOISE_INPUT);
    let e1 = l.conv("enc1", x, channels, width, 3, same);
    let e1 = l.g.relu(e1);
    let d = l.g.avg_pool2d(e1, 2, 2);
    let e2 = l.conv("enc2", d, width, 2 * width, 3, same);
    let e2 = l.g.relu(e2);
    let d = l.g.avg_pool2d(e2, 2, 2);
    let b = l.conv("bottleneck", d, 2 * width, 2 * width, 3, same);
    let b = l.g.relu(b);
    let u = l.g.upsample(b, 2);
    let u = l.g.concat(u, e2);
    let d2 = l.conv("dec2", u, 4 * width, width, 3, same);
    let d2 = l.g.relu(d2);
    let u = l.g.upsample(d2, 2);
    let u = l.g.concat(u, e1);
    let d1 = l.conv("dec1", u, 2 * width, width, 3, same);
    let d1 = l.g.relu(d1);
    let out = l.zero_conv("head", d1, width, channels, 1, ConvSpec::same(1));
    // 2 * sigmoid(out) - 1 keeps the pattern inside (-1, 1).
    let p = l.g.sigmoid(out);
    let p = l.g.scale(p, 2.0);
    let p = l.g.shift(p, -1.0);
    l.g.set_output(p);
    l.g
}

fn uniform_noise(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen::<f64>())
}

fn generate(g: &Graph, noise: &Tensor) -> Result<Tensor> {
    let mut ctx = EvalContext::new(g);
    Ok(ctx.forward(&[(NOISE_INPUT, noise)])?.clone())
}

/// Trains the generator on fresh uniform noise each batch, then freezes the
/// pattern generated from a seeded noise draw.
fn train_generative(
    metric: &MetricModel,
    trainset: &[Image],
    shape: [usize; 3],
    spec: &AttackSpec,
) -> Result<(Tensor, Vec<f64>)> {
    let opts = TrainOpts::from_spec(spec)?;
    let width = spec.extra_usize("width", 8)?;
    if width == 0 || width > 8 {
        return Err(Error::InvalidSpec(format!("generator width {width} outside 1..=8")));
    }
    if shape[1] % 4 != 0 || shape[2] % 4 != 0 {
        return Err(Error::Shape(format!(
            "generator needs height and width divisible by 4, got {}x{}",
            shape[1], shape[2]
        )));
    }
    let mut g = generator(shape[0], width, spec.seed);
    let names: Vec<String> = g.params().iter().map(|p| p.name.clone()).collect();
    let mut adams = g
        .params()
        .iter()
        .map(|p| opts.adam(p.value.shape()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut history = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(trainset.len(), opts.batch_size, &mut rng);
        for b in &batches {
            let noise = uniform_noise(&shape, &mut rng);
            let batch: Vec<&Image> = b.iter().map(|&i| &trainset[i]).collect();
            let grads = {
                let mut ctx = EvalContext::new(&g);
                let p = ctx.forward(&[(NOISE_INPUT, &noise)])?.clone();
                let (mean_score, gp) = batch_objective(metric, &batch, &p, spec.amplitude)?;
                let loss = -mean_score;
                if !loss.is_finite() {
                    return Err(Error::Divergence { step: adams[0].step_count() as usize, history });
                }
                epoch_loss += loss;
                let targets: Vec<Wrt> = names.iter().map(|n| Wrt::Param(n)).collect();
                ctx.vjp(&gp.map(|v| -v), &targets)?
            };
            for ((name, grad), adam) in names.iter().zip(&grads).zip(&mut adams) {
                let cur = g.find_param(name).expect("listed above").value.clone();
                g.set_param(name, adam.step(&cur, grad)?)?;
            }
        }
        history.push(epoch_loss / batches.len() as f64);
    }
    let mut frozen_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let pattern = generate(&g, &uniform_noise(&shape, &mut frozen_rng))?;
    Ok((pattern, history))
}

/// Trains a universal perturbation of the kind named by `spec.kind` for
/// amplitude `spec.amplitude`.
pub fn train_uap(metric: &MetricModel, trainset: &[Image], trainset_id: &str, spec: &AttackSpec) -> Result<Perturbation> {
    spec.validate()?;
    let shape = training_shape(trainset)?;
    let (raw, loss_history) = match spec.kind {
        AttackKind::UapCumulative => train_cumulative(metric, trainset, shape)?,
        AttackKind::UapOptimized => train_optimized(metric, trainset, shape, spec)?,
        AttackKind::UapGenerative => train_generative(metric, trainset, shape, spec)?,
        k => return Err(Error::InvalidSpec(format!("`{k}` is not a universal perturbation"))),
    };
    let mut flags = Vec::new();
    let pattern = normalize(raw, &mut flags);
    Ok(Perturbation {
        pattern,
        trained_on: trainset_id.to_string(),
        target_metric: metric.name().to_string(),
        amplitude: spec.amplitude,
        seed: spec.seed,
        trainer: spec.kind,
        flags,
        loss_history,
    })
}
