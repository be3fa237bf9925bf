//! Explicit op graphs.
//!
//! A [`Graph`] is an append-only list of nodes. Every node can only reference
//! nodes created before it, so the node order is already a topological order
//! and the graph is acyclic by construction. Feature maps use a `[C, H, W]`
//! layout; convolution weights are `[C_out, C_in / groups, K_h, K_w]`.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    #[default]
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1 with reflect padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            pad_mode: PadMode::Reflect,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad_mode(mut self, mode: PadMode) -> Self {
        self.pad_mode = mode;
        self
    }

    pub fn depthwise(mut self, channels: usize) -> Self {
        self.groups = channels;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobelAxis {
    /// Horizontal derivative (responds to vertical edges).
    Horizontal,
    /// Vertical derivative (responds to horizontal edges).
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input(String),
    Param(usize),
    /// Inputs: `x`, `weight`, optional `bias`.
    Conv2d(ConvSpec),
    MaxPool2d { kernel: usize, stride: usize },
    AvgPool2d { kernel: usize, stride: usize },
    /// `[C, H, W] -> [C]`
    GlobalAvgPool,
    Relu,
    Sigmoid,
    /// Inputs: `x` (flattened), `weight [out, in]`, `bias [out]`.
    Affine,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Shift(f64),
    Sum,
    Mean,
    Sobel(SobelAxis),
    Square,
    Sqrt { floor: f64 },
    /// Straight-through inside `(lo, hi)`, zero gradient at and beyond the bounds.
    Clamp { lo: f64, hi: f64 },
    /// Channel concatenation of two `[C, H, W]` maps.
    Concat,
    Upsample { factor: usize },
    CenterCrop { height: usize, width: usize },
    /// Bilinear resize with half-pixel centers.
    Resize { height: usize, width: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Conv2d(_) => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Affine => "affine",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::Shift(_) => "shift",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Sobel(_) => "sobel",
            Op::Square => "square",
            Op::Sqrt { .. } => "sqrt",
            Op::Clamp { .. } => "clamp",
            Op::Concat => "concat",
            Op::Upsample { .. } => "upsample",
            Op::CenterCrop { .. } => "center_crop",
            Op::Resize { .. } => "resize",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// A named trainable or loadable tensor owned by a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    /// Layer role, e.g. `conv2d.weight`. Recorded in weight manifests.
    pub kind: String,
    pub initializer: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<ParamEntry>,
    param_nodes: Vec<NodeId>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.check(id);
        self.output = Some(id);
    }

    pub fn params(&self) -> &[ParamEntry] {
        &self.params
    }

    pub fn find_param(&self, name: &str) -> Option<&ParamEntry> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Replaces a parameter value. The shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> crate::Result<()> {
        let entry = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| crate::GradError::UnknownParam(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(crate::error::shape_err(
                "set_param",
                format!("{name}: {:?} vs {:?}", entry.value.shape(), value.shape()),
            ));
        }
        entry.value = value;
        Ok(())
    }

    pub(crate) fn param_slot_value(&self, slot: usize) -> &Tensor {
        &self.params[slot].value
    }

    pub(crate) fn param_slot_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub(crate) fn param_node(&self, slot: usize) -> NodeId {
        self.param_nodes[slot]
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn input_node(&self, name: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| matches!(&n.op, Op::Input(x) if x == name))
            .map(NodeId)
    }

    fn check(&self, id: NodeId) {
        assert!(
            id.0 < self.nodes.len(),
            "node id {} does not belong to this graph",
            id.0
        );
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        for &i in &inputs {
            self.check(i);
        }
        self.nodes.push(Node { op, inputs });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        assert!(
            self.input_node(name).is_none(),
            "duplicate input name `{name}`"
        );
        self.push(Op::Input(name.to_string()), vec![])
    }

    pub fn param(&mut self, name: &str, kind: &str, initializer: &str, value: Tensor) -> NodeId {
        assert!(
            self.param_slot_of(name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.params.push(ParamEntry {
            name: name.to_string(),
            kind: kind.to_string(),
            initializer: initializer.to_string(),
            value,
        });
        let id = self.push(Op::Param(self.params.len() - 1), vec![]);
        self.param_nodes.push(id);
        id
    }

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>, spec: ConvSpec) -> NodeId {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(Op::Conv2d(spec), inputs)
    }

    pub fn max_pool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> NodeId {
        self.push(Op::MaxPool2d { kernel, stride }, vec![x])
    }

    pub fn avg_pool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> NodeId {
        self.push(Op::AvgPool2d { kernel, stride }, vec![x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push(Op::GlobalAvgPool, vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![x])
    }

    pub fn affine(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::Affine, vec![x, weight, bias])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div, vec![a, b])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(factor), vec![x])
    }

    pub fn shift(&mut self, x: NodeId, offset: f64) -> NodeId {
        self.push(Op::Shift(offset), vec![x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, vec![x])
    }

    pub fn sobel(&mut self, x: NodeId, axis: SobelAxis) -> NodeId {
        self.push(Op::Sobel(axis), vec![x])
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Square, vec![x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sqrt { floor: crate::SQRT_FLOOR }, vec![x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi, "clamp bounds must satisfy lo < hi");
        self.push(Op::Clamp { lo, hi }, vec![x])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat, vec![a, b])
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> NodeId {
        self.push(Op::Upsample { factor }, vec![x])
    }

    pub fn center_crop(&mut self, x: NodeId, height: usize, width: usize) -> NodeId {
        self.push(Op::CenterCrop { height, width }, vec![x])
    }

    pub fn resize(&mut self, x: NodeId, height: usize, width: usize) -> NodeId {
        self.push(Op::Resize { height, width }, vec![x])
    }
}
