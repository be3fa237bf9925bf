//! The shipped metrics. Weights come from fixed seeds so every build is
//! identical; real weights can be loaded over them with
//! [`MetricModel::load_weights`].

use gradcore::{ConvSpec, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{InputPolicy, MetricModel, IMAGE_INPUT};
use crate::image::LUMA_WEIGHTS;

pub const TINY_CNN: &str = "tiny-cnn-nr";
pub const PATCH_WEIGHTED: &str = "patch-weighted";
pub const NATURALNESS: &str = "naturalness-lite";
pub const MEAN_PIXEL: &str = "mean-pixel";
pub const SATURATED_CLAMP: &str = "saturated-clamp";

/// Graph builder that draws seeded weights.
pub(crate) struct Layers {
    pub g: Graph,
    rng: ChaCha8Rng,
}

impl Layers {
    pub fn new(seed: u64) -> Self {
        Self {
            g: Graph::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| (2.0 * rng.gen::<f64>() - 1.0) * bound)
    }

    /// Convolution with He-uniform weights and small positive biases.
    pub fn conv(&mut self, name: &str, x: NodeId, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> NodeId {
        let fan_in = (cin / spec.groups) * k * k;
        let w = self.uniform(&[cout, cin / spec.groups, k, k], (6.0 / fan_in as f64).sqrt());
        let b = Tensor::from_fn(&[cout], |_| 0.1 * self.rng.gen::<f64>());
        let w = self.g.param(&format!("{name}.weight"), "conv2d.weight", "he-uniform", w);
        let b = self.g.param(&format!("{name}.bias"), "conv2d.bias", "uniform(0,0.1)", b);
        self.g.conv2d(x, w, Some(b), spec)
    }

    /// Convolution whose weights are all zero (and no bias).
    pub fn zero_conv(&mut self, name: &str, x: NodeId, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> NodeId {
        let w = Tensor::zeros(&[cout, cin / spec.groups, k, k]);
        let w = self.g.param(&format!("{name}.weight"), "conv2d.weight", "zeros", w);
        let b = self.g.param(&format!("{name}.bias"), "conv2d.bias", "zeros", Tensor::zeros(&[cout]));
        self.g.conv2d(x, w, Some(b), spec)
    }

    pub fn affine(&mut self, name: &str, x: NodeId, nin: usize, nout: usize) -> NodeId {
        let w = self.uniform(&[nout, nin], (6.0 / nin as f64).sqrt());
        let w = self.g.param(&format!("{name}.weight"), "affine.weight", "he-uniform", w);
        let b = self.g.param(&format!("{name}.bias"), "affine.bias", "zeros", Tensor::zeros(&[nout]));
        self.g.affine(x, w, b)
    }

    /// A parameter holding a fixed, hand-chosen tensor.
    pub fn fixed(&mut self, name: &str, kind: &str, value: Tensor) -> NodeId {
        self.g.param(name, kind, "fixed", value)
    }
}

fn finish(name: &str, mut l: Layers, out: NodeId, policy: InputPolicy) -> MetricModel {
    l.g.set_output(out);
    MetricModel::new(name, l.g, 3, policy)
}

/// Three conv+ReLU+average-pool blocks (3→8→8→16), global average pool, affine head.
pub fn tiny_cnn_nr(policy: InputPolicy) -> MetricModel {
    let mut l = Layers::new(0x7131_cc00);
    let x = l.g.input(IMAGE_INPUT);
    let mut h = policy.apply(&mut l.g, x);
    for (i, (cin, cout)) in [(3, 8), (8, 8), (8, 16)].into_iter().enumerate() {
        h = l.conv(&format!("block{i}.conv"), h, cin, cout, 3, ConvSpec::same(3));
        h = l.g.relu(h);
        h = l.g.avg_pool2d(h, 2, 2);
    }
    let pooled = l.g.global_avg_pool(h);
    let out = l.affine("head", pooled, 16, 1);
    finish(TINY_CNN, l, out, policy)
}

/// Per-patch scores pooled with a learned positive spatial weighting:
/// `sum(s * w) / sum(w)`.
pub fn patch_weighted(policy: InputPolicy) -> MetricModel {
    let mut l = Layers::new(0x9a7c_4e00);
    let x = l.g.input(IMAGE_INPUT);
    let h = policy.apply(&mut l.g, x);
    let h = l.conv("features.conv0", h, 3, 8, 3, ConvSpec::same(3));
    let h = l.g.relu(h);
    let h = l.conv("features.conv1", h, 8, 8, 3, ConvSpec::same(3).with_stride(2));
    let h = l.g.relu(h);
    let s = l.conv("score_head", h, 8, 1, 1, ConvSpec::same(1));
    let w = l.conv("weight_head", h, 8, 1, 1, ConvSpec::same(1));
    let w = l.g.sigmoid(w);
    let w = l.g.shift(w, 0.05);
    let sw = l.g.mul(s, w);
    let num = l.g.sum(sw);
    let den = l.g.sum(w);
    let out = l.g.div(num, den);
    finish(PATCH_WEIGHTED, l, out, policy)
}

/// Normalized 7x7 Gaussian with sigma 7/6.
fn gaussian_7x7() -> Tensor {
    let sigma = 7.0 / 6.0;
    let one: Vec<f64> = (0..7)
        .map(|i| {
            let d = i as f64 - 3.0;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = one.iter().sum::<f64>().powi(2);
    Tensor::from_fn(&[1, 1, 7, 7], |i| one[i / 7] * one[i % 7] / total)
}

/// Local-statistics features: mean MSCN², mean MSCN⁴ and mean local sigma,
/// each a `[1]` node.
pub(crate) fn naturalness_features(l: &mut Layers, x: NodeId) -> [NodeId; 3] {
    let lw = l.fixed("luma.weight", "conv2d.weight", Tensor::new(vec![1, 3, 1, 1], LUMA_WEIGHTS.to_vec()).unwrap());
    let luma = l.g.conv2d(x, lw, None, ConvSpec::same(1));
    let gw = l.fixed("window.weight", "conv2d.weight", gaussian_7x7());
    let mu = l.g.conv2d(luma, gw, None, ConvSpec::same(7));
    let l2 = l.g.square(luma);
    let m2 = l.g.conv2d(l2, gw, None, ConvSpec::same(7));
    let mu2 = l.g.square(mu);
    let var = l.g.sub(m2, mu2);
    let sigma = l.g.sqrt(var);
    let centered = l.g.sub(luma, mu);
    let den = l.g.shift(sigma, 1.0 / 255.0);
    let mscn = l.g.div(centered, den);
    let mscn2 = l.g.square(mscn);
    let mscn4 = l.g.square(mscn2);
    [l.g.mean(mscn2), l.g.mean(mscn4), l.g.mean(sigma)]
}

const NATURALNESS_HEAD: [f64; 3] = [0.5, -0.02, 5.0];

/// Hand-designed score from mean-subtracted contrast-normalized statistics.
pub fn naturalness_lite(policy: InputPolicy) -> MetricModel {
    let mut l = Layers::new(0);
    let x = l.g.input(IMAGE_INPUT);
    let h = policy.apply(&mut l.g, x);
    let feats = naturalness_features(&mut l, h);
    let mut acc = None;
    for (i, f) in feats.into_iter().enumerate() {
        let w = l.fixed(&format!("head.w{i}"), "scale", Tensor::scalar(NATURALNESS_HEAD[i]));
        let term = l.g.mul(f, w);
        acc = Some(match acc {
            None => term,
            Some(a) => l.g.add(a, term),
        });
    }
    let out = acc.expect("three features");
    finish(NATURALNESS, l, out, policy)
}

/// Reference feature values and spreads for the epsilon provider.
pub(crate) const NATURALNESS_REF: [f64; 3] = [1.0, 3.0, 0.1];
pub(crate) const NATURALNESS_SPREAD: [f64; 3] = [1.0, 10.0, 0.1];
/// Lowest value the provider can return, so epsilon never exceeds `1 / 20`.
pub const NATURALNESS_PROVIDER_FLOOR: f64 = 20.0;

/// `20 + Σ ((f - ref) / spread)²` over the naturalness features. Larger means
/// less natural, in the spirit of NIQE.
pub fn naturalness_provider_graph() -> Graph {
    let mut l = Layers::new(0);
    let x = l.g.input(IMAGE_INPUT);
    let feats = naturalness_features(&mut l, x);
    let mut acc = None;
    for (i, f) in feats.into_iter().enumerate() {
        let d = l.g.shift(f, -NATURALNESS_REF[i]);
        let d = l.g.scale(d, 1.0 / NATURALNESS_SPREAD[i]);
        let d = l.g.square(d);
        acc = Some(match acc {
            None => d,
            Some(a) => l.g.add(a, d),
        });
    }
    let out = l.g.shift(acc.expect("three features"), NATURALNESS_PROVIDER_FLOOR);
    l.g.set_output(out);
    l.g
}

/// Mean of all pixel values.
pub fn mean_pixel(policy: InputPolicy) -> MetricModel {
    let mut g = Graph::new();
    let x = g.input(IMAGE_INPUT);
    let h = policy.apply(&mut g, x);
    let out = g.mean(h);
    g.set_output(out);
    MetricModel::new(MEAN_PIXEL, g, 3, policy)
}

/// Mean of `clamp(I, 2, 3)`: constant on valid images, zero gradient.
pub fn saturated_clamp(policy: InputPolicy) -> MetricModel {
    let mut g = Graph::new();
    let x = g.input(IMAGE_INPUT);
    let h = policy.apply(&mut g, x);
    let c = g.clamp(h, 2.0, 3.0);
    let out = g.mean(c);
    g.set_output(out);
    MetricModel::new(SATURATED_CLAMP, g, 3, policy)
}
