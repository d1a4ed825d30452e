use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{push_named, BoundConv, BoundLinear, Conv, ConvTranspose, Linear, NamedParam};
use crate::error::{Error, Result};
use crate::image::ChannelImage;
use crate::rng::SeededRng;
use crate::tensor::{Graph, NodeId, Param, Tensor};

/// Encoder channel plan; every layer is kernel 3, stride 2, padding 1.
pub const ENCODER_CHANNELS: [usize; 5] = [1, 16, 32, 64, 128];
const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;

fn down(len: usize) -> usize {
    (len + 2 * PADDING - KERNEL) / STRIDE + 1
}

/// Convolutional image autoencoder over single-channel renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: Vec<Conv>,
    pub encoder_fc: Linear,
    pub decoder_fc: Linear,
    pub decoder: Vec<ConvTranspose>,
    d_z: usize,
    input_h: usize,
    input_w: usize,
    grid: (usize, usize),
}

pub struct BoundAutoencoder {
    encoder: Vec<BoundConv>,
    encoder_fc: BoundLinear,
    decoder_fc: BoundLinear,
    decoder: Vec<BoundConv>,
}

impl BoundAutoencoder {
    pub fn encoder_nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.encoder.iter().flat_map(|c| c.nodes()).collect();
        v.extend(self.encoder_fc.nodes());
        v
    }

    /// Every parameter node, in [`AutoencoderParams::params_mut`] order.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut v = self.encoder_nodes();
        v.extend(self.decoder_fc.nodes());
        v.extend(self.decoder.iter().flat_map(|c| c.nodes()));
        v
    }
}

impl AutoencoderParams {
    pub fn new(rng: &mut SeededRng, input_h: usize, input_w: usize, d_z: usize) -> Result<Self> {
        if input_h == 0 || input_w == 0 || d_z == 0 {
            return Err(Error::InvalidArgument(format!(
                "autoencoder dims must be positive (h={input_h}, w={input_w}, d_z={d_z})"
            )));
        }
        let mut dims = vec![(input_h, input_w)];
        for _ in 0..4 {
            let (h, w) = *dims.last().unwrap();
            dims.push((down(h), down(w)));
        }
        let encoder =
            ENCODER_CHANNELS.windows(2).map(|c| Conv::new(rng, c[0], c[1], KERNEL, STRIDE, PADDING)).collect();
        let grid = dims[4];
        let flat = ENCODER_CHANNELS[4] * grid.0 * grid.1;
        let encoder_fc = Linear::new(rng, flat, d_z);
        let decoder_fc = Linear::new(rng, d_z, flat);
        let decoder = (0..4)
            .map(|i| {
                let (cin, cout) = (ENCODER_CHANNELS[4 - i], ENCODER_CHANNELS[3 - i]);
                let (ih, iw) = dims[4 - i];
                let (th, tw) = dims[3 - i];
                let op = (th + 1 - 2 * ih, tw + 1 - 2 * iw);
                ConvTranspose::new(rng, cin, cout, KERNEL, STRIDE, PADDING, op)
            })
            .collect();
        Ok(Self { encoder, encoder_fc, decoder_fc, decoder, d_z, input_h, input_w, grid })
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_h, self.input_w)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundAutoencoder {
        BoundAutoencoder {
            encoder: self.encoder.iter().map(|c| c.bind(g, trainable)).collect(),
            encoder_fc: self.encoder_fc.bind(g, trainable),
            decoder_fc: self.decoder_fc.bind(g, trainable),
            decoder: self.decoder.iter().map(|c| c.bind(g, trainable)).collect(),
        }
    }

    /// `images [B, 1, H, W] → latents [B, d_z]`.
    pub fn encode(&self, g: &mut Graph, b: &BoundAutoencoder, images: NodeId) -> Result<NodeId> {
        let batch = g.shape(images)[0];
        let mut h = images;
        for (layer, bound) in self.encoder.iter().zip(&b.encoder) {
            let c = layer.forward(g, bound, h)?;
            h = g.relu(c)?;
        }
        let flat = g.reshape(h, [batch, ENCODER_CHANNELS[4] * self.grid.0 * self.grid.1])?;
        Linear::forward(g, &b.encoder_fc, flat)
    }

    /// `latents [B, d_z] → reconstructions [B, 1, H, W]`.
    pub fn decode(&self, g: &mut Graph, b: &BoundAutoencoder, z: NodeId) -> Result<NodeId> {
        let batch = g.shape(z)[0];
        let seed = Linear::forward(g, &b.decoder_fc, z)?;
        let seed = g.relu(seed)?;
        let mut h = g.reshape(seed, [batch, ENCODER_CHANNELS[4], self.grid.0, self.grid.1])?;
        let last = self.decoder.len() - 1;
        for (i, (layer, bound)) in self.decoder.iter().zip(&b.decoder).enumerate() {
            h = layer.forward(g, bound, h)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn check_image(&self, img: &ChannelImage) -> Result<()> {
        if img.dims() != (self.input_h, self.input_w) {
            return Err(Error::ShapeMismatch {
                op: "encode_image",
                got: vec![vec![img.height(), img.width()]],
                expected: format!("{}x{} image", self.input_h, self.input_w),
            });
        }
        Ok(())
    }

    /// Stacks images into a `[B, 1, H, W]` tensor.
    pub fn batch_tensor(&self, images: &[&ChannelImage]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(images.len() * self.input_h * self.input_w);
        for img in images {
            self.check_image(img)?;
            data.extend_from_slice(img.pixels());
        }
        Tensor::new([images.len(), 1, self.input_h, self.input_w], data)
    }

    /// Latent vector of one image (inference, no gradients).
    pub fn encode_image(&self, img: &ChannelImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(self.batch_tensor(&[img])?);
        let z = self.encode(&mut g, &b, x)?;
        Ok(g.value(z).to_vec())
    }

    /// Reconstruction of one image (inference).
    pub fn reconstruct(&self, img: &ChannelImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(self.batch_tensor(&[img])?);
        let z = self.encode(&mut g, &b, x)?;
        let r = self.decode(&mut g, &b, z)?;
        Ok(g.value(r).to_vec())
    }

    pub fn encoder_params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.encoder.iter().flat_map(|c| [&c.weight, &c.bias]).collect();
        v.extend([&self.encoder_fc.weight, &self.encoder_fc.bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        for c in &mut self.encoder {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.push(&mut self.encoder_fc.weight);
        v.push(&mut self.encoder_fc.bias);
        v.push(&mut self.decoder_fc.weight);
        v.push(&mut self.decoder_fc.bias);
        for c in &mut self.decoder {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v
    }

    pub fn named_params(&self) -> Vec<NamedParam<'_>> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter().enumerate() {
            push_named(&mut out, &format!("enc.conv{i}"), [("weight", &c.weight), ("bias", &c.bias)]);
        }
        push_named(&mut out, "enc.fc", [("weight", &self.encoder_fc.weight), ("bias", &self.encoder_fc.bias)]);
        push_named(&mut out, "dec.fc", [("weight", &self.decoder_fc.weight), ("bias", &self.decoder_fc.bias)]);
        for (i, c) in self.decoder.iter().enumerate() {
            push_named(&mut out, &format!("dec.deconv{i}"), [("weight", &c.weight), ("bias", &c.bias)]);
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }
}
