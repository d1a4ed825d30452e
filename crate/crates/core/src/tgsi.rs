//! Temporal Geometric Structure Index.
//!
//! `TGSI = l · s` per channel, where `l` compares mean brightness of the two
//! full-resolution renderings and `s` is a stabilized correlation of their
//! downscaled pixels. Statistics are global over the image and use the
//! population (divide-by-count) convention.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{render_pair, ChannelImage, RenderConfig};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TgsiConfig {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of pixel intensities.
    pub dynamic_range: f64,
    pub render: RenderConfig,
}

impl Default for TgsiConfig {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03, dynamic_range: 1.0, render: RenderConfig::default() }
    }
}

impl TgsiConfig {
    pub fn with_render(render: RenderConfig) -> Self {
        Self { render, ..Self::default() }
    }

    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.dynamic_range;
        v * v / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "K1, K2 and L must be positive (got {}, {}, {})",
                self.k1, self.k2, self.dynamic_range
            )));
        }
        self.render.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelScore {
    pub luminance: f64,
    pub covariance: f64,
    pub tgsi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TgsiReport {
    pub channels: Vec<ChannelScore>,
    /// Unweighted mean of the per-channel scores.
    pub aggregate: f64,
    pub config: TgsiConfig,
}

fn same_dims(a: &ChannelImage, b: &ChannelImage, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        let (ah, aw) = a.dims();
        let (bh, bw) = b.dims();
        return Err(Error::ShapeMismatch {
            op,
            got: alloc::vec![alloc::vec![ah, aw], alloc::vec![bh, bw]],
            expected: "identical image dims".into(),
        });
    }
    Ok(())
}

/// `(2μxμy + C1) / (μx² + μy² + C1)` on full-resolution means.
pub fn luminance(x: &ChannelImage, y: &ChannelImage, cfg: &TgsiConfig) -> Result<f64> {
    same_dims(x, y, "luminance")?;
    let (mx, my) = (x.mean(), y.mean());
    let c1 = cfg.c1();
    Ok((2.0 * mx * my + c1) / (mx * mx + my * my + c1))
}

/// `(σxy + C2) / (σxσy + C2)` on downscaled images.
///
/// The pooling window is clamped to the image width, so series shorter than
/// the configured window still produce a score.
pub fn covariance_component(x: &ChannelImage, y: &ChannelImage, cfg: &TgsiConfig) -> Result<f64> {
    same_dims(x, y, "covariance_component")?;
    let window = cfg.render.downscale_window.min(x.width()).min(x.height()).max(1);
    let (dx, dy) = (x.downscale(window)?, y.downscale(window)?);
    let (px, py) = (dx.pixels(), dy.pixels());
    let n = px.len() as f64;
    let (mx, my) = (dx.mean(), dy.mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in px.iter().zip(py) {
        let (ca, cb) = (a - mx, b - my);
        sxy += ca * cb;
        sxx += ca * ca;
        syy += cb * cb;
    }
    let (sxy, sx, sy) = (sxy / n, libm::sqrt(sxx / n), libm::sqrt(syy / n));
    let c2 = cfg.c2();
    Ok((sxy + c2) / (sx * sy + c2))
}

/// Scores one pair of already-rendered channel images.
pub fn score_images(x: &ChannelImage, y: &ChannelImage, cfg: &TgsiConfig) -> Result<ChannelScore> {
    let l = luminance(x, y, cfg)?;
    let s = covariance_component(x, y, cfg)?;
    Ok(ChannelScore { luminance: l, covariance: s, tgsi: l * s })
}

/// Normalizes, renders and scores two `T × N` series.
pub fn tgsi(x: &TimeSeries, y: &TimeSeries, cfg: &TgsiConfig) -> Result<TgsiReport> {
    cfg.validate()?;
    let (ix, iy) = render_pair(x, y, &cfg.render)?;
    let channels =
        ix.channels.iter().zip(&iy.channels).map(|(a, b)| score_images(a, b, cfg)).collect::<Result<Vec<_>>>()?;
    let aggregate = channels.iter().map(|c| c.tgsi).sum::<f64>() / channels.len() as f64;
    Ok(TgsiReport { channels, aggregate, config: *cfg })
}
