use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{push_named, BoundLinear, BoundNorm, Linear, NamedParam, Norm};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Graph, NodeId, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorDims {
    pub input_t: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub mlp_hidden: usize,
    pub d_z: usize,
}

impl ExtractorDims {
    pub fn new(input_t: usize, d_z: usize) -> Self {
        Self { input_t, d_model: 64, heads: 4, ff_hidden: 256, mlp_hidden: 256, d_z }
    }
}

/// One pre-norm transformer encoder block over scalar token embeddings,
/// mean-pooled over time and projected to `d_z` by a two-layer MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub embed: Linear,
    pub norm_attn: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub norm_ff: Norm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub head_in: Linear,
    pub head_out: Linear,
    dims: ExtractorDims,
    positions: Tensor,
}

pub struct BoundExtractor {
    embed: BoundLinear,
    norm_attn: BoundNorm,
    query: BoundLinear,
    key: BoundLinear,
    value: BoundLinear,
    attn_out: BoundLinear,
    norm_ff: BoundNorm,
    ff_in: BoundLinear,
    ff_out: BoundLinear,
    head_in: BoundLinear,
    head_out: BoundLinear,
    positions: NodeId,
}

impl BoundExtractor {
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut v = Vec::new();
        v.extend(self.embed.nodes());
        v.extend(self.norm_attn.nodes());
        for l in [&self.query, &self.key, &self.value, &self.attn_out] {
            v.extend(l.nodes());
        }
        v.extend(self.norm_ff.nodes());
        for l in [&self.ff_in, &self.ff_out, &self.head_in, &self.head_out] {
            v.extend(l.nodes());
        }
        v
    }
}

/// Sinusoidal position table `[T, d]`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64 * 2.0;
            let angle = pos as f64 / libm::pow(10_000.0, pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    Tensor::new([t, d], data).expect("positive dims")
}

impl ExtractorParams {
    pub fn new(rng: &mut SeededRng, dims: ExtractorDims) -> Result<Self> {
        let ExtractorDims { input_t, d_model, heads, ff_hidden, mlp_hidden, d_z } = dims;
        if input_t == 0 || d_z == 0 || heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!("invalid extractor dims {dims:?}")));
        }
        Ok(Self {
            embed: Linear::new(rng, 1, d_model),
            norm_attn: Norm::new(d_model),
            query: Linear::new(rng, d_model, d_model),
            key: Linear::new(rng, d_model, d_model),
            value: Linear::new(rng, d_model, d_model),
            attn_out: Linear::new(rng, d_model, d_model),
            norm_ff: Norm::new(d_model),
            ff_in: Linear::new(rng, d_model, ff_hidden),
            ff_out: Linear::new(rng, ff_hidden, d_model),
            head_in: Linear::new(rng, d_model, mlp_hidden),
            head_out: Linear::new(rng, mlp_hidden, d_z),
            dims,
            positions: positional_encoding(input_t, d_model),
        })
    }

    pub fn dims(&self) -> ExtractorDims {
        self.dims
    }

    pub fn input_t(&self) -> usize {
        self.dims.input_t
    }

    pub fn d_z(&self) -> usize {
        self.dims.d_z
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundExtractor {
        BoundExtractor {
            embed: self.embed.bind(g, trainable),
            norm_attn: self.norm_attn.bind(g, trainable),
            query: self.query.bind(g, trainable),
            key: self.key.bind(g, trainable),
            value: self.value.bind(g, trainable),
            attn_out: self.attn_out.bind(g, trainable),
            norm_ff: self.norm_ff.bind(g, trainable),
            ff_in: self.ff_in.bind(g, trainable),
            ff_out: self.ff_out.bind(g, trainable),
            head_in: self.head_in.bind(g, trainable),
            head_out: self.head_out.bind(g, trainable),
            positions: g.constant(self.positions.clone()),
        }
    }

    /// `series [T, 1] → features [d_z]`.
    pub fn forward(&self, g: &mut Graph, b: &BoundExtractor, series: NodeId) -> Result<NodeId> {
        let t = self.dims.input_t;
        if g.shape(series) != [t, 1] {
            return Err(Error::ShapeMismatch {
                op: "extract_temporal",
                got: vec![g.shape(series).to_vec()],
                expected: format!("[{t}, 1]"),
            });
        }
        let (d, heads) = (self.dims.d_model, self.dims.heads);
        let dh = d / heads;

        let tokens = Linear::forward(g, &b.embed, series)?;
        let h0 = g.add(tokens, b.positions)?;

        let a = Norm::forward(g, &b.norm_attn, h0)?;
        let q = Linear::forward(g, &b.query, a)?;
        let k = Linear::forward(g, &b.key, a)?;
        let v = Linear::forward(g, &b.value, a)?;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (lo, hi) = (hd * dh, (hd + 1) * dh);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let weights = g.softmax(scores, 1)?;
            outs.push(g.matmul(weights, vh)?);
        }
        let attn = g.concat(&outs, 1)?;
        let attn = Linear::forward(g, &b.attn_out, attn)?;
        let h1 = g.add(h0, attn)?;

        let f = Norm::forward(g, &b.norm_ff, h1)?;
        let f = Linear::forward(g, &b.ff_in, f)?;
        let f = g.relu(f)?;
        let f = Linear::forward(g, &b.ff_out, f)?;
        let h2 = g.add(h1, f)?;

        let pooled = g.mean_axis(h2, 0)?;
        let pooled = g.reshape(pooled, [1, d])?;
        let m = Linear::forward(g, &b.head_in, pooled)?;
        let m = g.relu(m)?;
        let z = Linear::forward(g, &b.head_out, m)?;
        g.reshape(z, [self.dims.d_z])
    }

    /// Features of one series (inference, no gradients).
    pub fn extract_temporal(&self, series: &[f64]) -> Result<Vec<f64>> {
        if series.len() != self.dims.input_t {
            return Err(Error::ShapeMismatch {
                op: "extract_temporal",
                got: vec![vec![series.len()]],
                expected: format!("length {}", self.dims.input_t),
            });
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(Tensor::new([series.len(), 1], series.to_vec())?);
        let z = self.forward(&mut g, &b, x)?;
        Ok(g.value(z).to_vec())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![&mut self.embed.weight, &mut self.embed.bias];
        v.extend([&mut self.norm_attn.gamma, &mut self.norm_attn.beta]);
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.attn_out] {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.extend([&mut self.norm_ff.gamma, &mut self.norm_ff.beta]);
        for l in [&mut self.ff_in, &mut self.ff_out, &mut self.head_in, &mut self.head_out] {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    pub fn named_params(&self) -> Vec<NamedParam<'_>> {
        let mut out = Vec::new();
        push_named(&mut out, "ex.embed", [("weight", &self.embed.weight), ("bias", &self.embed.bias)]);
        push_named(&mut out, "ex.norm_attn", [("gamma", &self.norm_attn.gamma), ("beta", &self.norm_attn.beta)]);
        for (name, l) in [
            ("ex.query", &self.query),
            ("ex.key", &self.key),
            ("ex.value", &self.value),
            ("ex.attn_out", &self.attn_out),
        ] {
            push_named(&mut out, name, [("weight", &l.weight), ("bias", &l.bias)]);
        }
        push_named(&mut out, "ex.norm_ff", [("gamma", &self.norm_ff.gamma), ("beta", &self.norm_ff.beta)]);
        for (name, l) in [
            ("ex.ff_in", &self.ff_in),
            ("ex.ff_out", &self.ff_out),
            ("ex.head_in", &self.head_in),
            ("ex.head_out", &self.head_out),
        ] {
            push_named(&mut out, name, [("weight", &l.weight), ("bias", &l.bias)]);
        }
        out
    }
}
