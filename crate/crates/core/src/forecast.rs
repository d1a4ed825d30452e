//! Direct multi-step linear forecaster trained with either plain MSE or the
//! shape-aware loss, plus the sliding-window data protocol around it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::perceptual::{render_sample, PerceptualBundle};
use crate::rng::{derive, permutation, seeded, uniform_vec};
use crate::satl::{perceptual_targets, satl_total_with_targets, LossWeights};
use crate::series::TimeSeries;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Param, Tensor};
use crate::tgsi::{tgsi, TgsiConfig};
use crate::validation::gen_base_sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Offset of the input's first timestep in the source series.
    pub start: usize,
    pub input: TimeSeries,
    pub target: TimeSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub t_in: usize,
    pub t_out: usize,
    pub channels: usize,
    pub source_len: usize,
    /// Half-open source ranges of the train, val and test splits.
    pub bounds: [(usize, usize); 3],
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

impl WindowDataset {
    pub fn split(&self, s: Split) -> &[Window] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Stride-1 windows inside chronological train/val/test segments.
///
/// A split with fraction 0 is empty. A split with a positive fraction that
/// is too short to hold one window is an error.
pub fn make_windows(series: &TimeSeries, t_in: usize, t_out: usize, splits: (f64, f64, f64)) -> Result<WindowDataset> {
    if t_in == 0 || t_out == 0 {
        return Err(invalid("t_in and t_out must be at least 1"));
    }
    let span = t_in + t_out;
    let len = series.len();
    if len < span {
        return Err(invalid(format!("series of length {len} is shorter than one window ({span})")));
    }
    let f = [splits.0, splits.1, splits.2];
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions must be >= 0 and sum to 1, got {f:?}")));
    }
    let b1 = if f[1] + f[2] == 0.0 { len } else { libm::round(f[0] * len as f64) as usize };
    let b2 = if f[2] == 0.0 { len } else { libm::round((f[0] + f[1]) * len as f64) as usize };
    let bounds = [(0, b1), (b1, b2), (b2, len)];
    let mut out: [Vec<Window>; 3] = Default::default();
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if f[i] == 0.0 {
            continue;
        }
        if hi - lo < span {
            let name = [Split::Train, Split::Val, Split::Test][i].name();
            return Err(invalid(format!("{name} split has {} steps, fewer than one window ({span})", hi - lo)));
        }
        for start in lo..=hi - span {
            out[i].push(Window {
                start,
                input: series.window(start, start + t_in)?,
                target: series.window(start + t_in, start + span)?,
            });
        }
    }
    let [train, val, test] = out;
    Ok(WindowDataset { t_in, t_out, channels: series.channels(), source_len: len, bounds, train, val, test })
}

/// Per-channel `y = W·x + b`, stored transposed as `[T_in, T_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterParams {
    pub weights: Vec<Param>,
    pub biases: Vec<Param>,
    pub t_in: usize,
    pub t_out: usize,
}

impl ForecasterParams {
    pub fn new(seed: u64, t_in: usize, t_out: usize, channels: usize) -> Result<Self> {
        if t_in == 0 || t_out == 0 || channels == 0 {
            return Err(invalid("forecaster dims must be positive"));
        }
        let mut rng = seeded(derive(seed, &[0xf0]));
        let bound = 1.0 / libm::sqrt(t_in as f64);
        let mut weights = Vec::with_capacity(channels);
        let mut biases = Vec::with_capacity(channels);
        for _ in 0..channels {
            weights.push(Param::new(Tensor::new([t_in, t_out], uniform_vec(&mut rng, t_in * t_out, bound))?));
            biases.push(Param::new(Tensor::new([t_out], uniform_vec(&mut rng, t_out, bound))?));
        }
        Ok(Self { weights, biases, t_in, t_out })
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn predict(&self, input: &TimeSeries) -> Result<TimeSeries> {
        if input.shape() != (self.t_in, self.channels()) {
            return Err(Error::ShapeMismatch {
                op: "predict",
                got: vec![vec![input.len(), input.channels()]],
                expected: format!("[{}, {}]", self.t_in, self.channels()),
            });
        }
        let mut cols = Vec::with_capacity(self.channels());
        for (ch, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = input.channel(ch);
            let mut y = b.value.data().to_vec();
            for (i, xi) in x.iter().enumerate() {
                crate::tensor::kernels::axpy(*xi, &w.value.data()[i * self.t_out..(i + 1) * self.t_out], &mut y);
            }
            cols.push(y);
        }
        TimeSeries::from_columns(&cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    Mse,
    Satl,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Mse => "mse",
            LossMode::Satl => "satl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_tgsi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub model: ForecasterParams,
    pub history: Vec<EpochMetrics>,
    pub mode: LossMode,
    /// Digest of everything except the loss: data, initialization and
    /// optimizer settings. Equal across modes of one comparison.
    pub shared_digest: u64,
    /// `shared_digest` extended with the loss mode and weights.
    pub run_digest: u64,
}

/// 64-bit FNV-1a over little-endian words.
#[derive(Debug, Clone, Copy)]
pub struct Digest(u64);

impl Default for Digest {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Digest {
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self
    }

    pub fn word(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn floats(&mut self, v: &[f64]) -> &mut Self {
        for x in v {
            self.word(x.to_bits());
        }
        self
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

fn dataset_digest(d: &mut Digest, ds: &WindowDataset) {
    d.word(ds.t_in as u64).word(ds.t_out as u64).word(ds.channels as u64);
    for w in ds.train.iter().chain(&ds.val) {
        d.word(w.start as u64).floats(w.input.data()).floats(w.target.data());
    }
}

/// Trains a forecaster. `Mse` mode ignores `weights` and uses plain MSE, so
/// the two modes differ only in the loss.
pub fn train_forecaster(
    ds: &WindowDataset,
    mode: LossMode,
    weights: &LossWeights,
    bundle: Option<&PerceptualBundle>,
    settings: &TrainSettings,
    tgsi_cfg: &TgsiConfig,
) -> Result<ForecastRun> {
    if ds.train.is_empty() {
        return Err(invalid("training split is empty"));
    }
    if settings.batch == 0 {
        return Err(invalid("batch must be positive"));
    }
    let w = match mode {
        LossMode::Mse => LossWeights::mse_only(),
        LossMode::Satl => *weights,
    };
    w.validate()?;
    let extractor = match (w.gamma > 0.0, bundle) {
        (false, _) => None,
        (true, None) => return Err(invalid("gamma > 0 requires a perceptual bundle")),
        (true, Some(b)) if b.input_t() != ds.t_out => {
            return Err(invalid(format!("bundle input length {} differs from t_out {}", b.input_t(), ds.t_out)))
        }
        (true, Some(b)) => Some(&b.extractor),
    };
    let targets = match extractor {
        Some(e) => Some(
            ds.train
                .iter()
                .map(|win| perceptual_targets(win.target.data(), ds.t_out, ds.channels, e))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let mut model = ForecasterParams::new(settings.seed, ds.t_in, ds.t_out, ds.channels)?;
    let mut shared = Digest::default();
    dataset_digest(&mut shared, ds);
    shared.word(settings.epochs as u64).word(settings.lr.to_bits()).word(settings.batch as u64).word(settings.seed);
    for p in model.params_mut() {
        shared.floats(p.value.data());
    }
    let shared_digest = shared.finish();
    let mut full = shared;
    full.bytes(mode.name().as_bytes()).floats(&[w.alpha, w.beta, w.gamma, w.delta, w.k_ratio]);
    let run_digest = full.finish();

    let adam = AdamConfig::with_lr(settings.lr);
    let mut states: Vec<AdamState> = model.params_mut().iter().map(|p| AdamState::new(p.value.numel(), adam)).collect();
    let (t_in, t_out, n) = (ds.t_in, ds.t_out, ds.channels);
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut rng = seeded(derive(settings.seed, &[0xe0, epoch as u64]));
        let order = permutation(&mut rng, ds.train.len());
        let mut total = 0.0;
        for idx in order.chunks(settings.batch) {
            let mut g = Graph::new();
            let bound: Vec<_> = model
                .weights
                .iter()
                .zip(&model.biases)
                .map(|(wp, bp)| (g.variable(wp.value.clone()), g.variable(bp.value.clone())))
                .collect();
            let mut outs = Vec::with_capacity(n);
            for (ch, &(wn, bn)) in bound.iter().enumerate() {
                let mut xs = Vec::with_capacity(idx.len() * t_in);
                for &i in idx {
                    xs.extend(ds.train[i].input.channel(ch));
                }
                let x = g.constant(Tensor::new([idx.len(), t_in], xs)?);
                let y = g.matmul(x, wn)?;
                outs.push(g.add_bias(y, bn)?);
            }
            let mut losses = Vec::with_capacity(idx.len());
            for (row, &i) in idx.iter().enumerate() {
                let cols = outs
                    .iter()
                    .map(|&o| {
                        let r = g.slice(o, 0, row, row + 1)?;
                        g.reshape(r, [t_out, 1])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pred = if n == 1 { cols[0] } else { g.concat(&cols, 1)? };
                let truth = g.constant(Tensor::new([t_out, n], ds.train[i].target.data().to_vec())?);
                let perceptual = match (extractor, &targets) {
                    (Some(e), Some(t)) => Some((e, t[i].as_slice())),
                    _ => None,
                };
                let l = satl_total_with_targets(&mut g, pred, truth, &w, perceptual)?;
                losses.push(g.reshape(l, [1])?);
            }
            let stacked = g.concat(&losses, 0)?;
            let loss = g.mean(stacked)?;
            total += g.item(loss) * idx.len() as f64;
            g.backward(loss)?;
            let mut params = model.params_mut();
            for (k, &(wn, bn)) in bound.iter().enumerate() {
                params[2 * k].grad = g.take_grad(wn);
                params[2 * k + 1].grad = g.take_grad(bn);
            }
            adam_step(&mut params, &mut states)?;
        }
        let (val_mse, val_tgsi) = if ds.val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = evaluate(&model, &ds.val, tgsi_cfg)?;
            (m.mse, m.tgsi)
        };
        history.push(EpochMetrics { train_loss: total / ds.train.len() as f64, val_mse, val_tgsi });
    }
    Ok(ForecastRun { model, history, mode, shared_digest, run_digest })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean over windows of the channel-mean TGSI.
    pub tgsi: f64,
}

/// Scores predictions against targets window by window.
pub fn score_predictions(preds: &[TimeSeries], truths: &[TimeSeries], cfg: &TgsiConfig) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(invalid(format!("{} predictions for {} targets", preds.len(), truths.len())));
    }
    let (mut se, mut ae, mut count, mut ts) = (0.0, 0.0, 0usize, 0.0);
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "evaluate",
                got: vec![vec![p.len(), p.channels()], vec![t.len(), t.channels()]],
                expected: "equal shapes".into(),
            });
        }
        for (a, b) in p.data().iter().zip(t.data()) {
            se += (a - b) * (a - b);
            ae += libm::fabs(a - b);
        }
        count += p.data().len();
        ts += tgsi(p, t, cfg)?.aggregate;
    }
    Ok(Metrics { mse: se / count as f64, mae: ae / count as f64, tgsi: ts / preds.len() as f64 })
}

pub fn predict_windows(model: &ForecasterParams, windows: &[Window]) -> Result<Vec<TimeSeries>> {
    windows.iter().map(|w| model.predict(&w.input)).collect()
}

pub fn evaluate(model: &ForecasterParams, windows: &[Window], cfg: &TgsiConfig) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(invalid("evaluation split is empty"));
    }
    let preds = predict_windows(model, windows)?;
    let truths: Vec<TimeSeries> = windows.iter().map(|w| w.target.clone()).collect();
    score_predictions(&preds, &truths, cfg)
}

/// Synthetic periodic benchmark for the MSE-vs-SATL comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub data_seed: u64,
    pub length: usize,
    pub n_tones: usize,
    pub noise_sigma: f64,
    pub t_in: usize,
    pub t_out: usize,
    pub seeds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Number of train-split target windows used to fit the perceptual bundle.
    pub bundle_samples: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            data_seed: 0,
            length: 1920,
            n_tones: 3,
            noise_sigma: 0.3,
            t_in: 96,
            t_out: 96,
            seeds: 20,
            epochs: 2,
            lr: 1e-2,
            batch: 16,
            bundle_samples: 64,
        }
    }
}

impl BenchmarkConfig {
    pub fn series(&self) -> Result<TimeSeries> {
        gen_base_sequence(self.data_seed, self.length, self.n_tones, self.noise_sigma)
    }

    pub fn dataset(&self) -> Result<WindowDataset> {
        make_windows(&self.series()?, self.t_in, self.t_out, (0.7, 0.1, 0.2))
    }
}

/// Evenly spaced univariate target windows of the train split.
pub fn bundle_training_series(ds: &WindowDataset, samples: usize) -> Result<Vec<Vec<f64>>> {
    if ds.train.is_empty() || samples == 0 {
        return Err(invalid("need a nonempty train split and sample count"));
    }
    let mut out = Vec::with_capacity(samples * ds.channels);
    let n = ds.train.len();
    for s in 0..samples {
        let win = &ds.train[s * n / samples];
        for ch in 0..ds.channels {
            out.push(win.target.channel(ch));
        }
    }
    Ok(out)
}

/// Checks that a rendering of each training target matches the bundle.
pub fn check_bundle_render(bundle: &PerceptualBundle, ds: &WindowDataset) -> Result<()> {
    let sample = ds.train.first().ok_or_else(|| invalid("training split is empty"))?;
    let img = render_sample(&sample.target.channel(0), &bundle.render)?;
    bundle.autoencoder.check_image(&img)
}
