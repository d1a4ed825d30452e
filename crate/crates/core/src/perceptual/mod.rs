//! Two-stage perceptual feature pipeline.
//!
//! Stage one trains a convolutional autoencoder on rendered series images.
//! Stage two trains a transformer extractor that maps the raw series straight
//! to the encoder's latent, so the image geometry can be compared without
//! rendering inside the training loop.

mod autoencoder;
mod extractor;
mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use autoencoder::{AutoencoderParams, BoundAutoencoder, ENCODER_CHANNELS};
pub use extractor::{positional_encoding, BoundExtractor, ExtractorDims, ExtractorParams};
pub use layers::{BoundConv, BoundLinear, BoundNorm, Conv, ConvTranspose, Linear, NamedParam, Norm};

use crate::error::{invalid, Error, Result};
use crate::image::{render_series, ChannelImage, RenderConfig};
use crate::rng::{derive, permutation, seeded};
use crate::series::TimeSeries;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, NodeId, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub render: RenderConfig,
    pub d_z: usize,
    pub autoencoder_epochs: usize,
    pub extractor_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig { height: 64, expansion: 32, downscale_window: 10 },
            d_z: 128,
            autoencoder_epochs: 30,
            extractor_epochs: 10,
            lr: 1e-3,
            batch: 16,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        if self.d_z == 0 || self.batch == 0 {
            return Err(invalid("d_z and batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive (got {})", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub curve: Vec<f64>,
    pub final_loss: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Largest gradient norm observed on parameters that must stay frozen.
    pub frozen_grad_norm: f64,
}

/// Trained autoencoder and extractor plus how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualBundle {
    pub autoencoder: AutoencoderParams,
    pub extractor: ExtractorParams,
    pub render: RenderConfig,
    pub seed: u64,
    pub autoencoder_report: TrainReport,
    pub extractor_report: TrainReport,
}

impl PerceptualBundle {
    /// Freshly initialized parameters with the given dims, ready to be
    /// overwritten from a checkpoint.
    pub fn skeleton(render: RenderConfig, input_t: usize, d_z: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let autoencoder = AutoencoderParams::new(&mut rng, render.height, input_t, d_z)?;
        let extractor = ExtractorParams::new(&mut rng, ExtractorDims::new(input_t, d_z))?;
        let empty = TrainReport {
            curve: Vec::new(),
            final_loss: None,
            seed,
            epochs: 0,
            lr: 0.0,
            batch: 0,
            frozen_grad_norm: 0.0,
        };
        Ok(Self { autoencoder, extractor, render, seed, autoencoder_report: empty.clone(), extractor_report: empty })
    }

    pub fn input_t(&self) -> usize {
        self.extractor.input_t()
    }

    pub fn d_z(&self) -> usize {
        self.extractor.d_z()
    }

    pub fn named_params(&self) -> Vec<NamedParam<'_>> {
        let mut v = self.autoencoder.named_params();
        v.extend(self.extractor.named_params());
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let mut params = self.autoencoder.params_mut();
        params.extend(self.extractor.params_mut());
        names.into_iter().zip(params).collect()
    }
}

/// Copies each bound node's gradient into its parameter.
fn collect_grads(g: &mut Graph, nodes: &[NodeId], params: &mut [&mut Param]) {
    for (node, p) in nodes.iter().zip(params.iter_mut()) {
        p.grad = Some(g.take_grad(*node).unwrap_or_else(|| vec![0.0; p.value.numel()]));
    }
}

fn states_for(params: &[&mut Param], lr: f64) -> Vec<AdamState> {
    let cfg = AdamConfig::with_lr(lr);
    params.iter().map(|p| AdamState::new(p.value.numel(), cfg)).collect()
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = seeded(derive(seed, &[epoch as u64]));
    permutation(&mut rng, n).chunks(batch).map(<[usize]>::to_vec).collect()
}

fn finish(curve: Vec<f64>, seed: u64, epochs: usize, lr: f64, batch: usize, frozen: f64) -> TrainReport {
    TrainReport { final_loss: curve.last().copied(), curve, seed, epochs, lr, batch, frozen_grad_norm: frozen }
}

/// Renders one univariate series with its own normalization.
pub fn render_sample(series: &[f64], render: &RenderConfig) -> Result<ChannelImage> {
    let ts = TimeSeries::univariate(series.to_vec())?;
    let mut img = render_series(&ts, render)?;
    Ok(img.channels.remove(0))
}

/// Stage one: per-pixel reconstruction MSE, Adam, shuffled mini-batches.
pub fn train_autoencoder(
    images: &[ChannelImage],
    d_z: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(AutoencoderParams, TrainReport)> {
    let first = images.first().ok_or_else(|| invalid("autoencoder dataset is empty"))?;
    if batch == 0 {
        return Err(invalid("batch must be positive"));
    }
    let (h, w) = first.dims();
    let mut rng = seeded(derive(seed, &[1]));
    let mut params = AutoencoderParams::new(&mut rng, h, w, d_z)?;
    for img in images {
        params.check_image(img)?;
    }
    let mut states = states_for(&params.params_mut(), lr);
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        for idx in batches(images.len(), batch, seed, epoch) {
            let refs: Vec<&ChannelImage> = idx.iter().map(|&i| &images[i]).collect();
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let x = g.constant(params.batch_tensor(&refs)?);
            let z = params.encode(&mut g, &bound, x)?;
            let r = params.decode(&mut g, &bound, z)?;
            let diff = g.sub(r, x)?;
            let sq = g.square(diff)?;
            let loss = g.mean(sq)?;
            total += g.item(loss) * idx.len() as f64;
            g.backward(loss)?;
            let mut ps = params.params_mut();
            collect_grads(&mut g, &bound.nodes(), &mut ps);
            adam_step(&mut ps, &mut states)?;
        }
        curve.push(total / images.len() as f64);
    }
    Ok((params, finish(curve, seed, epochs, lr, batch, 0.0)))
}

/// Stage two: fit the extractor on raw series to the frozen encoder's latent
/// of each series' rendering, with loss `‖z_time − z_img‖² / d_z`.
pub fn train_extractor(
    series: &[Vec<f64>],
    encoder: &AutoencoderParams,
    render: &RenderConfig,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(ExtractorParams, TrainReport)> {
    let t = series.first().ok_or_else(|| invalid("extractor dataset is empty"))?.len();
    if batch == 0 {
        return Err(invalid("batch must be positive"));
    }
    if encoder.input_dims() != (render.height, t) {
        return Err(Error::ShapeMismatch {
            op: "train_extractor",
            got: vec![vec![render.height, t]],
            expected: format!("{:?} renderings", encoder.input_dims()),
        });
    }
    let d_z = encoder.d_z();
    let images = series
        .iter()
        .map(|s| {
            if s.len() != t {
                return Err(invalid(format!("series length {} differs from {t}", s.len())));
            }
            render_sample(s, render)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded(derive(seed, &[2]));
    let mut params = ExtractorParams::new(&mut rng, ExtractorDims::new(t, d_z))?;
    if params.d_z() != d_z {
        return Err(invalid("extractor and encoder latent sizes differ"));
    }
    let mut states = states_for(&params.params_mut(), lr);
    let mut curve = Vec::with_capacity(epochs);
    let mut frozen = 0.0_f64;
    for epoch in 0..epochs {
        let mut total = 0.0;
        for idx in batches(series.len(), batch, seed, epoch) {
            let mut g = Graph::new();
            let enc = encoder.bind(&mut g, false);
            let refs: Vec<&ChannelImage> = idx.iter().map(|&i| &images[i]).collect();
            let imgs = g.constant(encoder.batch_tensor(&refs)?);
            let z_img = encoder.encode(&mut g, &enc, imgs)?;
            let bound = params.bind(&mut g, true);
            let mut terms = Vec::with_capacity(idx.len());
            for (row, &i) in idx.iter().enumerate() {
                let x = g.constant(Tensor::new([t, 1], series[i].clone())?);
                let z = params.forward(&mut g, &bound, x)?;
                let target = g.slice(z_img, 0, row, row + 1)?;
                let target = g.reshape(target, [d_z])?;
                let d = g.sub(z, target)?;
                let sq = g.square(d)?;
                terms.push(g.mean(sq)?);
            }
            let stacked = g.concat(&terms, 0)?;
            let loss = g.mean(stacked)?;
            total += g.item(loss) * idx.len() as f64;
            g.backward(loss)?;
            for node in enc.nodes() {
                if let Some(gr) = g.grad(node) {
                    frozen = frozen.max(libm::sqrt(gr.iter().map(|v| v * v).sum()));
                }
            }
            let mut ps = params.params_mut();
            collect_grads(&mut g, &bound.nodes(), &mut ps);
            adam_step(&mut ps, &mut states)?;
        }
        curve.push(total / series.len() as f64);
    }
    Ok((params, finish(curve, seed, epochs, lr, batch, frozen)))
}

/// Runs both stages on a set of equal-length univariate series.
pub fn train_bundle(series: &[Vec<f64>], cfg: &PipelineConfig) -> Result<PerceptualBundle> {
    cfg.validate()?;
    let images = series.iter().map(|s| render_sample(s, &cfg.render)).collect::<Result<Vec<_>>>()?;
    let (autoencoder, autoencoder_report) =
        train_autoencoder(&images, cfg.d_z, cfg.autoencoder_epochs, cfg.lr, cfg.batch, cfg.seed)?;
    let (extractor, extractor_report) =
        train_extractor(series, &autoencoder, &cfg.render, cfg.extractor_epochs, cfg.lr, cfg.batch, cfg.seed)?;
    Ok(PerceptualBundle {
        autoencoder,
        extractor,
        render: cfg.render,
        seed: cfg.seed,
        autoencoder_report,
        extractor_report,
    })
}
