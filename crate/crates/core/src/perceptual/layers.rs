//! Parameterized layers shared by the autoencoder and the temporal extractor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::{uniform_vec, SeededRng};
use crate::tensor::{Graph, NodeId, Op, Param, Tensor};

fn uniform_param(rng: &mut SeededRng, shape: &[usize], fan_in: usize) -> Param {
    let n = shape.iter().product();
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Param::new(Tensor::new(shape.to_vec(), uniform_vec(rng, n, bound)).expect("shape matches data"))
}

/// Dense layer `x [R, in] · w [in, out] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    weight: NodeId,
    bias: NodeId,
}

impl Linear {
    pub fn new(rng: &mut SeededRng, input: usize, output: usize) -> Self {
        Self { weight: uniform_param(rng, &[input, output], input), bias: uniform_param(rng, &[output], input) }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLinear {
        BoundLinear {
            weight: g.leaf(self.weight.value.clone(), trainable),
            bias: g.leaf(self.bias.value.clone(), trainable),
        }
    }

    pub fn forward(g: &mut Graph, b: &BoundLinear, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, b.weight)?;
        g.add_bias(y, b.bias)
    }
}

impl BoundLinear {
    pub fn nodes(&self) -> [NodeId; 2] {
        [self.weight, self.bias]
    }
}

/// 2-D convolution with bias (`weight [O, C, K, K]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

/// Transposed 2-D convolution with bias (`weight [Ci, Co, K, K]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    weight: NodeId,
    bias: NodeId,
}

impl BoundConv {
    pub fn nodes(&self) -> [NodeId; 2] {
        [self.weight, self.bias]
    }
}

impl Conv {
    pub fn new(rng: &mut SeededRng, input: usize, output: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let fan_in = input * kernel * kernel;
        Self {
            weight: uniform_param(rng, &[output, input, kernel, kernel], fan_in),
            bias: uniform_param(rng, &[output], fan_in),
            stride,
            padding,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundConv {
        BoundConv {
            weight: g.leaf(self.weight.value.clone(), trainable),
            bias: g.leaf(self.bias.value.clone(), trainable),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &BoundConv, x: NodeId) -> Result<NodeId> {
        g.apply(Op::Conv2d { stride: self.stride, padding: self.padding }, &[x, b.weight, b.bias])
    }
}

impl ConvTranspose {
    pub fn new(
        rng: &mut SeededRng,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: (usize, usize),
    ) -> Self {
        let fan_in = output * kernel * kernel;
        Self {
            weight: uniform_param(rng, &[input, output, kernel, kernel], fan_in),
            bias: uniform_param(rng, &[output], fan_in),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundConv {
        BoundConv {
            weight: g.leaf(self.weight.value.clone(), trainable),
            bias: g.leaf(self.bias.value.clone(), trainable),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &BoundConv, x: NodeId) -> Result<NodeId> {
        g.apply(
            Op::ConvTranspose2d { stride: self.stride, padding: self.padding, output_padding: self.output_padding },
            &[x, b.weight, b.bias],
        )
    }
}

/// Affine parameters of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Param,
    pub beta: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundNorm {
    gamma: NodeId,
    beta: NodeId,
}

impl BoundNorm {
    pub fn nodes(&self) -> [NodeId; 2] {
        [self.gamma, self.beta]
    }
}

impl Norm {
    pub const EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::new([dim], vec![1.0; dim]).expect("positive dim")),
            beta: Param::new(Tensor::zeros([dim])),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundNorm {
        BoundNorm {
            gamma: g.leaf(self.gamma.value.clone(), trainable),
            beta: g.leaf(self.beta.value.clone(), trainable),
        }
    }

    pub fn forward(g: &mut Graph, b: &BoundNorm, x: NodeId) -> Result<NodeId> {
        g.layer_norm(x, b.gamma, b.beta, Self::EPS)
    }
}

/// Named view of a parameter, in a model's canonical order.
pub type NamedParam<'a> = (String, &'a Param);

pub(crate) fn push_named<'a>(out: &mut Vec<NamedParam<'a>>, prefix: &str, items: [(&str, &'a Param); 2]) {
    for (name, p) in items {
        out.push((alloc::format!("{prefix}.{name}"), p));
    }
}
