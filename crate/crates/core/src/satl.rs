//! Shape-aware temporal loss.
//!
//! All components take graph nodes of shape `[T, N]` (prediction `x`,
//! ground truth `y`), reduce with an unweighted mean over channels, and
//! return a scalar node. Gradients flow to `x`; the dominant-bin selection
//! and perceptual targets are computed from the value of `y` and treated as
//! constants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::perceptual::ExtractorParams;
use crate::spectral::{self, top_k_bins};
use crate::tensor::{Graph, NodeId, Tensor};

/// Weights of `α·diff + β·freq + γ·perceptual + δ·MSE`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Fraction of the sequence length kept as dominant bins.
    pub k_ratio: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.2, gamma: 0.1, delta: 0.5, k_ratio: 0.1 }
    }
}

impl LossWeights {
    /// Plain MSE expressed as a weight set.
    pub fn mse_only() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.beta, self.gamma, self.delta];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if !(self.k_ratio > 0.0 && self.k_ratio <= 1.0) {
            return Err(invalid(format!("k_ratio must be in (0,1], got {}", self.k_ratio)));
        }
        Ok(())
    }

    /// `max(1, ⌊k_ratio·T⌋)`.
    pub fn k(&self, t: usize) -> usize {
        (libm::floor(self.k_ratio * t as f64) as usize).max(1)
    }
}

fn pair_shape(g: &Graph, x: NodeId, y: NodeId, op: &'static str) -> Result<(usize, usize)> {
    let (sx, sy) = (g.shape(x), g.shape(y));
    if sx != sy || sx.len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            got: vec![sx.to_vec(), sy.to_vec()],
            expected: "identical [T, N] shapes".into(),
        });
    }
    Ok((sx[0], sx[1]))
}

/// Mean squared error over all entries.
pub fn mse_loss(g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId> {
    pair_shape(g, x, y, "mse_loss")?;
    let d = g.sub(x, y)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Squared error between first differences, averaged over `T−1` steps and channels.
pub fn diff_loss(g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId> {
    let (t, _) = pair_shape(g, x, y, "diff_loss")?;
    if t < 2 {
        return Err(invalid("diff_loss requires T >= 2"));
    }
    let first_diff = |g: &mut Graph, v: NodeId| -> Result<NodeId> {
        let hi = g.slice(v, 0, 1, t)?;
        let lo = g.slice(v, 0, 0, t - 1)?;
        g.sub(hi, lo)
    };
    let dx = first_diff(g, x)?;
    let dy = first_diff(g, y)?;
    let e = g.sub(dx, dy)?;
    let sq = g.square(e)?;
    g.mean(sq)
}

/// Per-channel dominant bins of the ground truth.
pub fn dominant_masks(y: &[f64], t: usize, n: usize, k: usize) -> Result<Vec<spectral::DominantSet>> {
    (0..n)
        .map(|ch| {
            let col: Vec<f64> = (0..t).map(|i| y[i * n + ch]).collect();
            top_k_bins(&spectral::rfft(&col)?, k)
        })
        .collect()
}

/// `(1/√T)·(Σ_dom |X_f − Y_f| + Σ_rest |X_f|)` per channel, mean over channels.
///
/// Both sums fold into `Σ_f |X_f − m_f·Y_f|` with `m` the dominant-bin
/// indicator, which is how it is evaluated.
pub fn freq_loss(g: &mut Graph, x: NodeId, y: NodeId, weights: &LossWeights) -> Result<NodeId> {
    let (t, n) = pair_shape(g, x, y, "freq_loss")?;
    if t < 2 {
        return Err(invalid("freq_loss requires T >= 2"));
    }
    let nb = spectral::bin_count(t);
    let yv = g.value(y).to_vec();
    let masks = dominant_masks(&yv, t, n, weights.k(t))?;
    let mut target = vec![0.0; nb * n * 2];
    for (ch, set) in masks.iter().enumerate() {
        let col: Vec<f64> = (0..t).map(|i| yv[i * n + ch]).collect();
        let spec = spectral::rfft(&col)?;
        for &f in set.indices() {
            target[(f * n + ch) * 2] = spec.bins()[f].re;
            target[(f * n + ch) * 2 + 1] = spec.bins()[f].im;
        }
    }
    let target = g.constant(Tensor::new([nb, n, 2], target)?);
    let xs = g.rfft(x)?;
    let d = g.sub(xs, target)?;
    let m = g.complex_abs(d)?;
    let s = g.sum(m)?;
    g.scale(s, 1.0 / (libm::sqrt(t as f64) * n as f64))
}

/// Extractor features of every channel of `y`, for reuse as fixed targets.
pub fn perceptual_targets(y: &[f64], t: usize, n: usize, extractor: &ExtractorParams) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|ch| {
            let col: Vec<f64> = (0..t).map(|i| y[i * n + ch]).collect();
            extractor.extract_temporal(&col)
        })
        .collect()
}

/// `(1/d_z)·‖f(x) − z_y‖²` against precomputed target features, mean over channels.
pub fn perceptual_loss_with_targets(
    g: &mut Graph,
    x: NodeId,
    targets: &[Vec<f64>],
    extractor: &ExtractorParams,
) -> Result<NodeId> {
    let (t, n) = (g.shape(x)[0], *g.shape(x).get(1).unwrap_or(&1));
    if g.shape(x).len() != 2 || targets.len() != n {
        return Err(Error::ShapeMismatch {
            op: "perceptual_loss",
            got: vec![g.shape(x).to_vec(), vec![targets.len()]],
            expected: "[T, N] prediction with one target per channel".into(),
        });
    }
    if t != extractor.input_t() {
        return Err(invalid(format!("series length {t} differs from extractor length {}", extractor.input_t())));
    }
    let bound = extractor.bind(g, false);
    let mut total: Option<NodeId> = None;
    for (ch, target) in targets.iter().enumerate() {
        let col = g.slice(x, 1, ch, ch + 1)?;
        let z = extractor.forward(g, &bound, col)?;
        let zt = g.constant(Tensor::new([target.len()], target.clone())?);
        let d = g.sub(z, zt)?;
        let sq = g.square(d)?;
        let term = g.mean(sq)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let total = total.expect("at least one channel");
    g.scale(total, 1.0 / n as f64)
}

/// Perceptual feature loss between `x` and `y` through a frozen extractor.
pub fn perceptual_loss(g: &mut Graph, x: NodeId, y: NodeId, extractor: &ExtractorParams) -> Result<NodeId> {
    let (t, n) = pair_shape(g, x, y, "perceptual_loss")?;
    let targets = perceptual_targets(g.value(y), t, n, extractor)?;
    perceptual_loss_with_targets(g, x, &targets, extractor)
}

/// `α·diff + β·freq + γ·perceptual + δ·MSE`. Components with zero weight
/// are skipped, so `γ = 0` needs no extractor.
pub fn satl_total(
    g: &mut Graph,
    x: NodeId,
    y: NodeId,
    weights: &LossWeights,
    extractor: Option<&ExtractorParams>,
) -> Result<NodeId> {
    let targets = match (weights.gamma > 0.0, extractor) {
        (true, Some(e)) => {
            let (t, n) = pair_shape(g, x, y, "satl_total")?;
            Some(perceptual_targets(g.value(y), t, n, e)?)
        }
        (true, None) => return Err(invalid("gamma > 0 requires a trained extractor")),
        _ => None,
    };
    satl_total_with_targets(g, x, y, weights, extractor.zip(targets.as_deref()))
}

/// [`satl_total`] with perceptual targets supplied by the caller.
pub fn satl_total_with_targets(
    g: &mut Graph,
    x: NodeId,
    y: NodeId,
    weights: &LossWeights,
    perceptual: Option<(&ExtractorParams, &[Vec<f64>])>,
) -> Result<NodeId> {
    weights.validate()?;
    pair_shape(g, x, y, "satl_total")?;
    let mut terms: Vec<NodeId> = Vec::with_capacity(4);
    if weights.alpha > 0.0 {
        let l = diff_loss(g, x, y)?;
        terms.push(g.scale(l, weights.alpha)?);
    }
    if weights.beta > 0.0 {
        let l = freq_loss(g, x, y, weights)?;
        terms.push(g.scale(l, weights.beta)?);
    }
    if weights.gamma > 0.0 {
        let (e, targets) = perceptual.ok_or_else(|| invalid("gamma > 0 requires a trained extractor"))?;
        let l = perceptual_loss_with_targets(g, x, targets, e)?;
        terms.push(g.scale(l, weights.gamma)?);
    }
    if weights.delta > 0.0 {
        let l = mse_loss(g, x, y)?;
        terms.push(if weights.delta == 1.0 { l } else { g.scale(l, weights.delta)? });
    }
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => {
            let l = mse_loss(g, x, y)?;
            return g.scale(l, 0.0);
        }
    };
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Values of the four components, evaluated independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub diff: f64,
    pub freq: f64,
    pub perceptual: f64,
    pub mse: f64,
}

impl LossBreakdown {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.alpha * self.diff + w.beta * self.freq + w.gamma * self.perceptual + w.delta * self.mse
    }
}

pub fn breakdown(
    x: &Tensor,
    y: &Tensor,
    weights: &LossWeights,
    extractor: Option<&ExtractorParams>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let yi = g.constant(y.clone());
    let diff = diff_loss(&mut g, xi, yi)?;
    let freq = freq_loss(&mut g, xi, yi, weights)?;
    let mse = mse_loss(&mut g, xi, yi)?;
    let perceptual = match extractor {
        Some(e) => {
            let p = perceptual_loss(&mut g, xi, yi, e)?;
            g.item(p)
        }
        None => 0.0,
    };
    Ok(LossBreakdown { diff: g.item(diff), freq: g.item(freq), perceptual, mse: g.item(mse) })
}
