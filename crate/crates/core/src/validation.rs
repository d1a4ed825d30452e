//! Metric validation: controlled deformations of a synthetic base sequence,
//! the similarity sweep over expansion widths, and the equal-MSE
//! counterexample.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::image::RenderConfig;
use crate::rng::{derive, gaussian_vec, seeded};
use crate::series::{mse, TimeSeries};
use crate::tgsi::{tgsi, TgsiConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeformationKind {
    AmplitudeScale,
    ConstantOffset,
    NoiseInject,
}

impl DeformationKind {
    pub const ALL: [DeformationKind; 3] =
        [DeformationKind::AmplitudeScale, DeformationKind::ConstantOffset, DeformationKind::NoiseInject];

    pub fn name(self) -> &'static str {
        match self {
            DeformationKind::AmplitudeScale => "amplitude_scale",
            DeformationKind::ConstantOffset => "constant_offset",
            DeformationKind::NoiseInject => "noise_inject",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationSpec {
    pub kind: DeformationKind,
    /// Similarity level; `p = 1` is the identity.
    pub p: f64,
    pub c: f64,
    pub seed: u64,
}

impl DeformationSpec {
    pub fn new(kind: DeformationKind, p: f64, seed: u64) -> Self {
        Self { kind, p, c: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(format!("similarity level p={} outside [0,1]", self.p)));
        }
        if !self.c.is_finite() {
            return Err(invalid("offset constant must be finite"));
        }
        Ok(())
    }
}

/// Standardized sum of `n_tones` sinusoids at distinct integer bins plus
/// Gaussian noise.
pub fn gen_base_sequence(seed: u64, t: usize, n_tones: usize, noise_sigma: f64) -> Result<TimeSeries> {
    if t < 16 {
        return Err(invalid(format!("base sequence needs T >= 16 (got {t})")));
    }
    let max_bin = (t / 4).max(n_tones + 1);
    if n_tones == 0 || n_tones >= max_bin {
        return Err(invalid(format!("cannot place {n_tones} distinct tones below bin {max_bin}")));
    }
    let mut rng = seeded(derive(seed, &[0x7a5e]));
    let bins = draw_bins(&mut rng, n_tones, max_bin);
    let tones: Vec<(f64, f64, f64)> =
        bins.iter().map(|&b| (b as f64, rng.random_range(0.5..1.5), rng.random_range(0.0..2.0 * PI))).collect();
    let noise = gaussian_vec(&mut rng, t, noise_sigma);
    let mut v: Vec<f64> = (0..t)
        .map(|i| {
            let s: f64 = tones.iter().map(|&(f, a, ph)| a * libm::sin(2.0 * PI * f * i as f64 / t as f64 + ph)).sum();
            s + noise[i]
        })
        .collect();
    standardize(&mut v);
    TimeSeries::univariate(v)
}

/// Frequency bins of the tones in [`gen_base_sequence`] for the same arguments.
pub fn base_sequence_bins(seed: u64, t: usize, n_tones: usize) -> Vec<usize> {
    let max_bin = (t / 4).max(n_tones + 1);
    draw_bins(&mut seeded(derive(seed, &[0x7a5e])), n_tones, max_bin)
}

fn draw_bins(rng: &mut crate::rng::SeededRng, n_tones: usize, max_bin: usize) -> Vec<usize> {
    let mut bins = Vec::with_capacity(n_tones);
    while bins.len() < n_tones {
        let b = rng.random_range(1..max_bin);
        if !bins.contains(&b) {
            bins.push(b);
        }
    }
    bins
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    for x in v.iter_mut() {
        *x = (*x - m) / sd;
    }
}

/// Applies one deformation operator.
pub fn deform(y: &TimeSeries, spec: &DeformationSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let p = spec.p;
    match spec.kind {
        DeformationKind::AmplitudeScale => Ok(y.map(|v| p * v)),
        DeformationKind::ConstantOffset => Ok(y.map(|v| v + (1.0 - p) * spec.c)),
        DeformationKind::NoiseInject => {
            if p == 1.0 {
                return Ok(y.clone());
            }
            let mut rng = seeded(spec.seed);
            let noise = gaussian_vec(&mut rng, y.data().len(), 1.0 - p);
            let data = y.data().iter().zip(&noise).map(|(a, b)| a + b).collect();
            TimeSeries::new(y.len(), y.channels(), data)
        }
    }
}

/// Pearson correlation; constant input is an error rather than NaN.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid(format!("pearson needs equal lengths >= 2 (got {} and {})", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("pearson input is constant".into()));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub seed: u64,
    pub t: usize,
    pub p_grid: Vec<f64>,
    pub d_list: Vec<usize>,
    pub seeds_per_point: usize,
    pub n_tones: usize,
    pub noise_sigma: f64,
    pub offset: f64,
    pub render: RenderConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            t: 512,
            p_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            d_list: vec![0, 10, 100],
            seeds_per_point: 20,
            n_tones: 3,
            noise_sigma: 0.1,
            offset: 1.0,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub p: f64,
    pub kind: DeformationKind,
    pub seed: u64,
    pub tgsi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub d: usize,
    /// Mean TGSI per grid point over operators and seeds.
    pub mean_tgsi: Vec<f64>,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub p_grid: Vec<f64>,
    pub curves: Vec<SweepCurve>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn curve(&self, d: usize) -> Option<&SweepCurve> {
        self.curves.iter().find(|c| c.d == d)
    }
}

/// TGSI of deformed copies against their base sequence over a grid of
/// similarity levels, one curve per expansion width.
///
/// Seed `j` of the sweep uses the same base sequence and noise draws for
/// every `d`, so curves differ only by the rendering.
pub fn similarity_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    if cfg.p_grid.is_empty() || cfg.d_list.is_empty() || cfg.seeds_per_point == 0 {
        return Err(invalid("sweep needs a nonempty p grid, d list and seed count"));
    }
    if cfg.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid("p grid must lie in [0,1]"));
    }
    let bases = (0..cfg.seeds_per_point)
        .map(|j| {
            let s = derive(cfg.seed, &[j as u64]);
            gen_base_sequence(s, cfg.t, cfg.n_tones, cfg.noise_sigma).map(|y| (s, y))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut curves = Vec::with_capacity(cfg.d_list.len());
    for &d in &cfg.d_list {
        let tcfg = TgsiConfig::with_render(cfg.render.with_expansion(d));
        tcfg.validate()?;
        let mut mean_tgsi = Vec::with_capacity(cfg.p_grid.len());
        for (pi, &p) in cfg.p_grid.iter().enumerate() {
            let mut acc = 0.0;
            for (s, y) in &bases {
                for kind in DeformationKind::ALL {
                    let spec = DeformationSpec { kind, p, c: cfg.offset, seed: derive(*s, &[pi as u64, kind as u64]) };
                    let x = deform(y, &spec)?;
                    let v = tgsi(y, &x, &tcfg)?.aggregate;
                    rows.push(SweepRow { d, p, kind, seed: *s, tgsi: v });
                    acc += v;
                }
            }
            mean_tgsi.push(acc / (3 * bases.len()) as f64);
        }
        let r = pearson(&cfg.p_grid, &mean_tgsi)?;
        curves.push(SweepCurve { d, mean_tgsi, pearson: r });
    }
    Ok(SweepResult { p_grid: cfg.p_grid.clone(), curves, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlindnessReport {
    pub y: TimeSeries,
    pub x1: TimeSeries,
    pub x2: TimeSeries,
    pub offset: f64,
    pub mse_pair1: f64,
    pub mse_pair2: f64,
    pub tgsi_pair1: f64,
    pub tgsi_pair2: f64,
}

/// Target mean square of the periodic reference.
pub const BLINDNESS_MSE: f64 = 0.79;
const BLINDNESS_LEN: usize = 96;
const BLINDNESS_NOISE: f64 = 0.2;

/// Equal-MSE pair: `x1` is an offset noisy copy of periodic `y` and `x2` is
/// all zeros. The offset is bisected until both pairs have the same MSE.
pub fn mse_blindness_demo(seed: u64) -> Result<BlindnessReport> {
    let mut rng = seeded(derive(seed, &[0xb11d]));
    let periods = rng.random_range(2..=4) as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let raw: Vec<f64> =
        (0..BLINDNESS_LEN).map(|i| libm::sin(2.0 * PI * periods * i as f64 / BLINDNESS_LEN as f64 + phase)).collect();
    let ms = raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64;
    let scale = libm::sqrt(BLINDNESS_MSE / ms);
    let y = TimeSeries::univariate(raw.iter().map(|v| v * scale).collect())?;
    let x2 = TimeSeries::univariate(vec![0.0; BLINDNESS_LEN])?;
    let target = mse(&y, &x2)?;
    let noise = gaussian_vec(&mut rng, BLINDNESS_LEN, BLINDNESS_NOISE);
    let shifted = |offset: f64| -> Result<TimeSeries> {
        TimeSeries::univariate(y.data().iter().zip(&noise).map(|(v, n)| v + offset + n).collect())
    };
    let gap = |offset: f64| -> Result<f64> { Ok(mse(&y, &shifted(offset)?)? - target) };

    let (mut lo, mut hi) = (0.0, 1.0);
    if gap(lo)? > 0.0 {
        return Err(Error::Convergence("noise alone exceeds the target MSE".into()));
    }
    while gap(hi)? < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Convergence("offset range exhausted".into()));
        }
    }
    let mut offset = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = gap(mid)?;
        offset = mid;
        if gm.abs() < 1e-12 {
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x1 = shifted(offset)?;
    let mse_pair1 = mse(&y, &x1)?;
    if (mse_pair1 - target).abs() >= 1e-6 {
        return Err(Error::Convergence(format!("bisection stalled at MSE gap {}", mse_pair1 - target)));
    }
    let cfg = TgsiConfig::default();
    let tgsi_pair1 = tgsi(&y, &x1, &cfg)?.aggregate;
    let tgsi_pair2 = tgsi(&y, &x2, &cfg)?.aggregate;
    Ok(BlindnessReport { y, x1, x2, offset, mse_pair1, mse_pair2: target, tgsi_pair1, tgsi_pair2 })
}
