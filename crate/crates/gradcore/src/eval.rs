//! Forward evaluation with cached intermediates, and the reverse pass.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{shape_err, GradError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::kernels;
use crate::tensor::Tensor;

/// What a gradient is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt<'a> {
    Input(&'a str),
    Param(&'a str),
}

/// Per-evaluation cache. One context per worker; the graph itself is shared.
#[derive(Debug)]
pub struct EvalContext<'g> {
    graph: &'g Graph,
    values: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
    forwarded: bool,
}

impl<'g> EvalContext<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            values: Vec::new(),
            argmax: Vec::new(),
            forwarded: false,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Evaluates the graph. Every graph input must be bound exactly once.
    pub fn forward(&mut self, inputs: &[(&str, &Tensor)]) -> Result<&Tensor> {
        self.forwarded = false;
        self.values.clear();
        self.argmax.clear();
        let out_id = self
            .graph
            .output()
            .ok_or_else(|| shape_err("forward", "graph has no output node"))?;
        for (name, _) in inputs {
            if self.graph.input_node(name).is_none() {
                return Err(GradError::UnknownInput(name.to_string()));
            }
        }

        for (idx, node) in self.graph.nodes().iter().enumerate() {
            let mut argmax = None;
            let value = {
                let arg = |k: usize| &self.values[node.inputs[k].0];
                match &node.op {
                    Op::Input(name) => inputs
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| (*t).clone())
                        .ok_or_else(|| GradError::UnboundInput(name.clone()))?,
                    Op::Param(slot) => self.graph.param_slot_value(*slot).clone(),
                    Op::Conv2d(spec) => {
                        let bias = (node.inputs.len() == 3).then(|| arg(2));
                        kernels::conv2d(arg(0), arg(1), bias, spec)?
                    }
                    Op::MaxPool2d { kernel, stride } => {
                        let (y, a) = kernels::max_pool(arg(0), *kernel, *stride)?;
                        argmax = Some(a);
                        y
                    }
                    Op::AvgPool2d { kernel, stride } => kernels::avg_pool(arg(0), *kernel, *stride)?,
                    Op::GlobalAvgPool => {
                        let x = arg(0);
                        let (c, h, w) = kernels::chw(x, "global_avg_pool")?;
                        let per = h * w;
                        Tensor::from_fn(&[c], |k| {
                            x.data()[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64
                        })
                    }
                    Op::Relu => arg(0).map(|v| v.max(0.0)),
                    Op::Sigmoid => arg(0).map(sigmoid),
                    Op::Affine => affine(arg(0), arg(1), arg(2))?,
                    Op::Add => arg(0).zip_map(arg(1), |a, b| a + b)?,
                    Op::Sub => arg(0).zip_map(arg(1), |a, b| a - b)?,
                    Op::Mul => arg(0).zip_map(arg(1), |a, b| a * b)?,
                    Op::Div => arg(0).zip_map(arg(1), |a, b| a / b)?,
                    Op::Scale(f) => arg(0).map(|v| v * f),
                    Op::Shift(s) => arg(0).map(|v| v + s),
                    Op::Sum => Tensor::scalar(arg(0).sum()),
                    Op::Mean => {
                        let x = arg(0);
                        if x.is_empty() {
                            return Err(shape_err("mean", "empty tensor"));
                        }
                        Tensor::scalar(x.sum() / x.len() as f64)
                    }
                    Op::Sobel(axis) => {
                        let x = arg(0);
                        let (c, _, _) = kernels::chw(x, "sobel")?;
                        kernels::conv2d(x, &kernels::sobel_weight(c, *axis), None, &kernels::sobel_spec(c))?
                    }
                    Op::Square => arg(0).map(|v| v * v),
                    Op::Sqrt { floor } => arg(0).map(|v| v.max(*floor).sqrt()),
                    Op::Clamp { lo, hi } => arg(0).map(|v| v.clamp(*lo, *hi)),
                    Op::Concat => concat(arg(0), arg(1))?,
                    Op::Upsample { factor } => kernels::upsample(arg(0), *factor)?,
                    Op::CenterCrop { height, width } => kernels::center_crop(arg(0), *height, *width)?,
                    Op::Resize { height, width } => kernels::resize(arg(0), *height, *width)?,
                }
            };
            if !value.is_finite() {
                return Err(GradError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            self.values.push(value);
            self.argmax.push(argmax);
        }
        self.forwarded = true;
        Ok(&self.values[out_id.0])
    }

    pub fn output(&self) -> Result<&Tensor> {
        if !self.forwarded {
            return Err(GradError::NoForward);
        }
        let id = self.graph.output().expect("checked in forward");
        Ok(&self.values[id.0])
    }

    /// Cached value of an intermediate node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        if !self.forwarded {
            return Err(GradError::NoForward);
        }
        Ok(&self.values[id.0])
    }

    /// Gradient of the scalar output with respect to a named input.
    pub fn backward(&self, wrt: &str) -> Result<Tensor> {
        let out = self.output()?;
        if !out.is_scalar() {
            return Err(GradError::NonScalarOutput(out.shape().to_vec()));
        }
        let seed = Tensor::full(out.shape(), 1.0);
        Ok(self.vjp(&seed, &[Wrt::Input(wrt)])?.remove(0))
    }

    /// Vector-Jacobian product of the output against `seed`, for each target.
    pub fn vjp(&self, seed: &Tensor, targets: &[Wrt<'_>]) -> Result<Vec<Tensor>> {
        let out = self.output()?;
        if seed.shape() != out.shape() {
            return Err(shape_err(
                "vjp",
                format!("seed {:?} vs output {:?}", seed.shape(), out.shape()),
            ));
        }
        let mut target_ids = Vec::with_capacity(targets.len());
        for t in targets {
            let id = match t {
                Wrt::Input(name) => self
                    .graph
                    .input_node(name)
                    .ok_or_else(|| GradError::UnknownInput(name.to_string()))?,
                Wrt::Param(name) => self.graph.param_node(
                    self.graph
                        .param_slot_of(name)
                        .ok_or_else(|| GradError::UnknownParam(name.to_string()))?,
                ),
            };
            target_ids.push(id);
        }

        let nodes = self.graph.nodes();
        // A node needs a gradient if some target is upstream of it.
        let mut needs = vec![false; nodes.len()];
        for &id in &target_ids {
            needs[id.0] = true;
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.inputs.iter().any(|j| needs[j.0]) {
                needs[i] = true;
            }
        }

        let out_id = self.graph.output().expect("checked in forward");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if needs[out_id.0] {
            grads[out_id.0] = Some(seed.clone());
        }
        for i in (0..nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.inputs.is_empty() {
                grads[i] = Some(gy);
                continue;
            }
            let want: Vec<bool> = node.inputs.iter().map(|j| needs[j.0]).collect();
            let input_grads = self.node_backward(i, &gy, &want)?;
            for (k, g) in input_grads.into_iter().enumerate() {
                let j = node.inputs[k].0;
                let Some(g) = g.filter(|_| needs[j]) else { continue };
                match &mut grads[j] {
                    Some(acc) => acc.accumulate(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        Ok(target_ids
            .iter()
            .map(|id| {
                grads[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.values[id.0].shape()))
            })
            .collect())
    }

    fn node_backward(&self, i: usize, gy: &Tensor, want: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let node = &self.graph.nodes()[i];
        let arg = |k: usize| &self.values[node.inputs[k].0];
        let y = &self.values[i];
        let one = |t: Tensor| vec![Some(t)];
        Ok(match &node.op {
            Op::Input(_) | Op::Param(_) => vec![],
            Op::Conv2d(spec) => {
                let need = [want[0], want[1], want.get(2).copied().unwrap_or(false)];
                let g = kernels::conv2d_backward(arg(0), arg(1), gy, spec, need)?;
                let mut v = vec![g.x, g.w];
                if node.inputs.len() == 3 {
                    v.push(g.b);
                }
                v
            }
            Op::MaxPool2d { .. } => {
                let idx = self.argmax[i].as_ref().expect("argmax cached by forward");
                let mut gx = Tensor::zeros(arg(0).shape());
                let d = gx.data_mut();
                for (o, &src) in idx.iter().enumerate() {
                    d[src] += gy.data()[o];
                }
                one(gx)
            }
            Op::AvgPool2d { kernel, stride } => {
                one(kernels::avg_pool_backward(arg(0).shape(), gy, *kernel, *stride)?)
            }
            Op::GlobalAvgPool => {
                let x = arg(0);
                let (_, h, w) = kernels::chw(x, "global_avg_pool")?;
                let per = h * w;
                one(Tensor::from_fn(x.shape(), |j| gy.data()[j / per] / per as f64))
            }
            Op::Relu => one(arg(0).zip_map(gy, |x, g| if x > 0.0 { g } else { 0.0 })?),
            Op::Sigmoid => one(y.zip_map(gy, |s, g| g * s * (1.0 - s))?),
            Op::Affine => {
                let (x, w) = (arg(0), arg(1));
                let (m, n) = (w.shape()[0], w.shape()[1]);
                let gx = want[0].then(|| {
                    let mut gx = vec![0.0; n];
                    for r in 0..m {
                        let g = gy.data()[r];
                        for (c, v) in gx.iter_mut().enumerate() {
                            *v += w.data()[r * n + c] * g;
                        }
                    }
                    Tensor::new(x.shape().to_vec(), gx).expect("affine input size checked")
                });
                let gw = want[1].then(|| {
                    Tensor::from_fn(&[m, n], |k| gy.data()[k / n] * x.data()[k % n])
                });
                let gb = want[2].then(|| gy.clone());
                vec![gx, gw, gb]
            }
            Op::Add => vec![Some(gy.clone()), Some(gy.clone())],
            Op::Sub => vec![Some(gy.clone()), Some(gy.map(|g| -g))],
            Op::Mul => vec![
                want[0].then(|| arg(1).zip_map(gy, |b, g| b * g)).transpose()?,
                want[1].then(|| arg(0).zip_map(gy, |a, g| a * g)).transpose()?,
            ],
            Op::Div => {
                let (a, b) = (arg(0), arg(1));
                vec![
                    want[0].then(|| b.zip_map(gy, |b, g| g / b)).transpose()?,
                    want[1]
                        .then(|| {
                            let ab = a.zip_map(b, |a, b| a / (b * b))?;
                            ab.zip_map(gy, |q, g| -g * q)
                        })
                        .transpose()?,
                ]
            }
            Op::Scale(f) => one(gy.map(|g| g * f)),
            Op::Shift(_) => one(gy.clone()),
            Op::Sum => {
                let g = gy.data()[0];
                one(Tensor::full(arg(0).shape(), g))
            }
            Op::Mean => {
                let x = arg(0);
                let g = gy.data()[0] / x.len() as f64;
                one(Tensor::full(x.shape(), g))
            }
            Op::Sobel(axis) => {
                let x = arg(0);
                let (c, _, _) = kernels::chw(x, "sobel")?;
                let w = kernels::sobel_weight(c, *axis);
                let g = kernels::conv2d_backward(x, &w, gy, &kernels::sobel_spec(c), [true, false, false])?;
                vec![g.x]
            }
            Op::Square => one(arg(0).zip_map(gy, |x, g| 2.0 * x * g)?),
            Op::Sqrt { floor } => {
                let x = arg(0);
                let mut gx = y.zip_map(gy, |s, g| 0.5 * g / s)?;
                for (v, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if xv <= *floor {
                        *v = 0.0;
                    }
                }
                one(gx)
            }
            Op::Clamp { lo, hi } => one(arg(0).zip_map(gy, |x, g| {
                if x > *lo && x < *hi {
                    g
                } else {
                    0.0
                }
            })?),
            Op::Concat => {
                let (a, b) = (arg(0), arg(1));
                let na = a.len();
                let ga = Tensor::new(a.shape().to_vec(), gy.data()[..na].to_vec())?;
                let gb = Tensor::new(b.shape().to_vec(), gy.data()[na..].to_vec())?;
                vec![Some(ga), Some(gb)]
            }
            Op::Upsample { factor } => one(kernels::upsample_backward(arg(0).shape(), gy, *factor)?),
            Op::CenterCrop { .. } => one(kernels::center_crop_backward(arg(0).shape(), gy)?),
            Op::Resize { .. } => one(kernels::resize_backward(arg(0).shape(), gy)?),
        })
    }

    /// Hash of every discrete branch taken during the last forward pass: ReLU
    /// masks, max-pool selections, clamp regions and sqrt-floor regions.
    ///
    /// Two points with equal signatures lie in the same smooth piece of a
    /// piecewise-smooth graph, so central differences between them are valid.
    pub fn branch_signature(&self) -> Result<u64> {
        if !self.forwarded {
            return Err(GradError::NoForward);
        }
        let mut h = DefaultHasher::new();
        for (i, node) in self.graph.nodes().iter().enumerate() {
            let arg = |k: usize| &self.values[node.inputs[k].0];
            match &node.op {
                Op::Relu => {
                    i.hash(&mut h);
                    for &x in arg(0).data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool2d { .. } => {
                    i.hash(&mut h);
                    self.argmax[i].hash(&mut h);
                }
                Op::Clamp { lo, hi } => {
                    i.hash(&mut h);
                    for &x in arg(0).data() {
                        let region: u8 = if x <= *lo {
                            0
                        } else if x >= *hi {
                            2
                        } else {
                            1
                        };
                        region.hash(&mut h);
                    }
                }
                Op::Sqrt { floor } => {
                    i.hash(&mut h);
                    for &x in arg(0).data() {
                        (x > *floor).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        Ok(h.finish())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, n] = *w.shape() else {
        return Err(shape_err("affine", format!("weight must be 2-D, got {:?}", w.shape())));
    };
    if x.len() != n || b.len() != m {
        return Err(shape_err(
            "affine",
            format!("input {} values, weight {m}x{n}, bias {}", x.len(), b.len()),
        ));
    }
    let xd = x.data();
    Ok(Tensor::from_fn(&[m], |r| {
        b.data()[r]
            + w.data()[r * n..(r + 1) * n]
                .iter()
                .zip(xd)
                .map(|(a, v)| a * v)
                .sum::<f64>()
    }))
}

fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = kernels::chw(a, "concat")?;
    let (cb, hb, wb) = kernels::chw(b, "concat")?;
    if (ha, wa) != (hb, wb) {
        return Err(shape_err("concat", format!("{ha}x{wa} vs {hb}x{wb}")));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, ha, wa], data)
}

/// Convenience: forward then backward with respect to one input.
pub fn value_and_grad(graph: &Graph, inputs: &[(&str, &Tensor)], wrt: &str) -> Result<(f64, Tensor)> {
    let mut ctx = EvalContext::new(graph);
    let out = ctx.forward(inputs)?;
    let value = out
        .item()
        .ok_or_else(|| GradError::NonScalarOutput(out.shape().to_vec()))?;
    let grad = ctx.backward(wrt)?;
    Ok((value, grad))
}
