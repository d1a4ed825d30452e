//! Flat run configuration shared by every subcommand.
//!
//! Resolution order: built-in defaults, then an optional TOML file, then
//! flags given on the command line. The resolved value is written into each
//! run directory as `config.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tsgeo_core::forecast::BenchmarkConfig;
use tsgeo_core::image::RenderConfig;
use tsgeo_core::perceptual::PipelineConfig;
use tsgeo_core::satl::LossWeights;
use tsgeo_core::tgsi::TgsiConfig;
use tsgeo_core::validation::SweepConfig;

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,

    pub height: usize,
    pub expand: usize,
    pub downscale: usize,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub k_ratio: f64,

    pub pipeline_height: usize,
    pub pipeline_expand: usize,
    pub epochs_ae: usize,
    pub epochs_ex: usize,
    pub lr: f64,
    pub batch: usize,
    pub dz: usize,
    pub bundle_samples: usize,

    pub length: usize,
    pub p_steps: usize,
    pub seeds_per_point: usize,
    pub d: Vec<usize>,

    pub t_in: usize,
    pub t_out: usize,
    pub epochs: usize,
    pub forecast_lr: f64,
    pub forecast_batch: usize,
    pub runs: usize,
    pub data_length: usize,
    pub data_noise: f64,
    pub n_tones: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let render = RenderConfig::default();
        let loss = LossWeights::default();
        let pipe = PipelineConfig::default();
        let sweep = SweepConfig::default();
        let bench = BenchmarkConfig::default();
        Self {
            seed: 0,
            threads: 1,
            height: render.height,
            expand: render.expansion,
            downscale: render.downscale_window,
            alpha: loss.alpha,
            beta: loss.beta,
            gamma: loss.gamma,
            delta: loss.delta,
            k_ratio: loss.k_ratio,
            pipeline_height: pipe.render.height,
            pipeline_expand: pipe.render.expansion,
            epochs_ae: pipe.autoencoder_epochs,
            epochs_ex: pipe.extractor_epochs,
            lr: pipe.lr,
            batch: pipe.batch,
            dz: pipe.d_z,
            bundle_samples: bench.bundle_samples,
            length: sweep.t,
            p_steps: sweep.p_grid.len(),
            seeds_per_point: sweep.seeds_per_point,
            d: sweep.d_list,
            t_in: bench.t_in,
            t_out: bench.t_out,
            epochs: bench.epochs,
            forecast_lr: bench.lr,
            forecast_batch: bench.batch,
            runs: bench.seeds,
            data_length: bench.length,
            data_noise: bench.noise_sigma,
            n_tones: bench.n_tones,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), msg: e.message().to_owned() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn tgsi(&self) -> TgsiConfig {
        TgsiConfig::with_render(RenderConfig {
            height: self.height,
            expansion: self.expand,
            downscale_window: self.downscale,
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma, delta: self.delta, k_ratio: self.k_ratio }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            render: RenderConfig {
                height: self.pipeline_height,
                expansion: self.pipeline_expand,
                downscale_window: self.downscale,
            },
            d_z: self.dz,
            autoencoder_epochs: self.epochs_ae,
            extractor_epochs: self.epochs_ex,
            lr: self.lr,
            batch: self.batch,
            seed: self.seed,
        }
    }

    pub fn sweep(&self) -> Result<SweepConfig> {
        if self.p_steps < 2 {
            return Err(Error::Usage(format!("p-steps must be at least 2 (got {})", self.p_steps)));
        }
        let last = (self.p_steps - 1) as f64;
        Ok(SweepConfig {
            seed: self.seed,
            t: self.length,
            p_grid: (0..self.p_steps).map(|i| i as f64 / last).collect(),
            d_list: self.d.clone(),
            seeds_per_point: self.seeds_per_point,
            render: RenderConfig { height: self.height, expansion: self.expand, downscale_window: self.downscale },
            ..SweepConfig::default()
        })
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            data_seed: self.seed,
            length: self.data_length,
            n_tones: self.n_tones,
            noise_sigma: self.data_noise,
            t_in: self.t_in,
            t_out: self.t_out,
            seeds: self.runs,
            epochs: self.epochs,
            lr: self.forecast_lr,
            batch: self.forecast_batch,
            bundle_samples: self.bundle_samples,
        }
    }
}
