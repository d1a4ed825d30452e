//! Time-series to image transform.
//!
//! Each timestep becomes one column. The (normalized) value picks a center
//! row and a stripe of `d` pixels above and below it is lit with linearly
//! decaying intensity `(d+1−Δ)/(d+1)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderConfig {
    pub height: usize,
    /// Vertical expansion `d` in pixels on each side of the center row.
    pub expansion: usize,
    pub downscale_window: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { height: 200, expansion: 100, downscale_window: 10 }
    }
}

impl RenderConfig {
    pub fn with_expansion(self, expansion: usize) -> Self {
        Self { expansion, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 {
            return Err(invalid("render height must be at least 2"));
        }
        if self.expansion >= self.height {
            return Err(invalid(format!("expansion {} must be below height {}", self.expansion, self.height)));
        }
        if self.downscale_window == 0 || self.downscale_window > self.height {
            return Err(invalid(format!("downscale window {} must be in 1..={}", self.downscale_window, self.height)));
        }
        Ok(())
    }
}

/// Affine normalization bounds of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds { min: 0.0, max: 1.0 };

    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    /// Inverse of [`Bounds::normalize`]; a degenerate range maps back to `min`.
    pub fn denormalize(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + u * (self.max - self.min)
        }
    }
}

/// One `height × width` grayscale plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ChannelImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "channel_image",
                got: vec![vec![pixels.len()]],
                expected: format!("{height}x{width} pixels"),
            });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Non-overlapping `window × window` average pooling; partial windows at
    /// the trailing edges average what they contain.
    pub fn downscale(&self, window: usize) -> Result<ChannelImage> {
        if window == 0 || window > self.height.min(self.width) {
            return Err(invalid(format!(
                "downscale window {window} exceeds image dims {}x{}",
                self.height, self.width
            )));
        }
        let oh = self.height.div_ceil(window);
        let ow = self.width.div_ceil(window);
        let mut out = vec![0.0; oh * ow];
        for by in 0..oh {
            let rows = by * window..((by + 1) * window).min(self.height);
            for bx in 0..ow {
                let cols = bx * window..((bx + 1) * window).min(self.width);
                let mut s = 0.0;
                for r in rows.clone() {
                    s += self.pixels[r * self.width + cols.start..r * self.width + cols.end].iter().sum::<f64>();
                }
                out[by * ow + bx] = s / (rows.len() * cols.len()) as f64;
            }
        }
        Ok(ChannelImage { height: oh, width: ow, pixels: out })
    }
}

/// Rendered series: one plane per channel plus the normalization it used.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesImage {
    pub channels: Vec<ChannelImage>,
    pub bounds: Vec<Bounds>,
    pub config: RenderConfig,
}

impl SeriesImage {
    pub fn width(&self) -> usize {
        self.channels.first().map_or(0, ChannelImage::width)
    }

    pub fn downscale(&self, window: usize) -> Result<SeriesImage> {
        Ok(SeriesImage {
            channels: self.channels.iter().map(|c| c.downscale(window)).collect::<Result<_>>()?,
            bounds: self.bounds.clone(),
            config: self.config,
        })
    }
}

/// Per-channel bounds over the union of both series.
pub fn shared_bounds(x: &TimeSeries, y: &TimeSeries) -> Result<Vec<Bounds>> {
    x.ensure_same_shape(y, "normalize_pair")?;
    x.ensure_finite()?;
    y.ensure_finite()?;
    Ok((0..x.channels())
        .map(|ch| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in 0..x.len() {
                for v in [x.get(t, ch), y.get(t, ch)] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            Bounds { min: lo, max: hi }
        })
        .collect())
}

fn apply_bounds(s: &TimeSeries, bounds: &[Bounds]) -> TimeSeries {
    let n = s.channels();
    let data = s.data().iter().enumerate().map(|(i, &v)| bounds[i % n].normalize(v)).collect();
    TimeSeries::new(s.len(), n, data).expect("shape preserved")
}

/// Maps both series into `[0,1]` with bounds shared per channel, so the
/// vertical offset between them survives normalization.
pub fn normalize_pair(x: &TimeSeries, y: &TimeSeries) -> Result<(TimeSeries, TimeSeries, Vec<Bounds>)> {
    let bounds = shared_bounds(x, y)?;
    Ok((apply_bounds(x, &bounds), apply_bounds(y, &bounds), bounds))
}

/// Normalizes a single series by its own per-channel range.
pub fn normalize(x: &TimeSeries) -> Result<(TimeSeries, Vec<Bounds>)> {
    let bounds = shared_bounds(x, x)?;
    Ok((apply_bounds(x, &bounds), bounds))
}

/// Inverse map used to check round trips.
pub fn denormalize(x: &TimeSeries, bounds: &[Bounds]) -> TimeSeries {
    let n = x.channels();
    let data = x.data().iter().enumerate().map(|(i, &u)| bounds[i % n].denormalize(u)).collect();
    TimeSeries::new(x.len(), n, data).expect("shape preserved")
}

/// Center row of a normalized value.
pub fn center_row(v: f64, height: usize) -> usize {
    libm::round((1.0 - v) * (height - 1) as f64) as usize
}

/// Renders one normalized channel.
pub fn render_channel(values: &[f64], cfg: &RenderConfig) -> Result<ChannelImage> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(invalid("cannot render an empty series"));
    }
    let (h, w, d) = (cfg.height, values.len(), cfg.expansion);
    let mut px = vec![0.0; h * w];
    let profile: Vec<f64> = (0..=d).map(|delta| (d + 1 - delta) as f64 / (d + 1) as f64).collect();
    for (t, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("value {v} at timestep {t} outside [0,1]")));
        }
        let r = center_row(v, h);
        for (delta, &level) in profile.iter().enumerate() {
            if let Some(up) = r.checked_sub(delta) {
                let p = &mut px[up * w + t];
                *p = f64::max(*p, level);
            }
            let down = r + delta;
            if delta > 0 && down < h {
                let p = &mut px[down * w + t];
                *p = f64::max(*p, level);
            }
        }
    }
    ChannelImage::new(h, w, px)
}

/// Renders every channel of a series already normalized into `[0,1]`.
pub fn render(series_norm: &TimeSeries, cfg: &RenderConfig) -> Result<SeriesImage> {
    let channels = (0..series_norm.channels())
        .map(|ch| render_channel(&series_norm.channel(ch), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeriesImage { bounds: vec![Bounds::UNIT; channels.len()], channels, config: *cfg })
}

/// Normalizes the pair with shared bounds and renders both.
pub fn render_pair(x: &TimeSeries, y: &TimeSeries, cfg: &RenderConfig) -> Result<(SeriesImage, SeriesImage)> {
    let (xn, yn, bounds) = normalize_pair(x, y)?;
    let mut ix = render(&xn, cfg)?;
    let mut iy = render(&yn, cfg)?;
    ix.bounds.clone_from(&bounds);
    iy.bounds = bounds;
    Ok((ix, iy))
}

/// Renders a single series normalized by its own range.
pub fn render_series(x: &TimeSeries, cfg: &RenderConfig) -> Result<SeriesImage> {
    let (xn, bounds) = normalize(x)?;
    let mut img = render(&xn, cfg)?;
    img.bounds = bounds;
    Ok(img)
}
