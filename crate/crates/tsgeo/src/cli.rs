//! `tsgeo` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use tsgeo_core::forecast::{
    bundle_training_series, check_bundle_render, make_windows, predict_windows, score_predictions, train_forecaster,
    ForecastRun, LossMode, Metrics, TrainSettings, WindowDataset,
};
use tsgeo_core::image::{render_series, RenderConfig};
use tsgeo_core::perceptual::train_bundle;
use tsgeo_core::validation::similarity_sweep;
use tsgeo_core::{tgsi, PerceptualBundle, TimeSeries};

use crate::bundle_io::{load_bundle, save_bundle};
use crate::config::RunConfig;
use crate::csv_io::{read_csv, write_rows, write_text};
use crate::error::{io_err, Error, Result};
use crate::image_io::{export_series_image, ImageFormat};

const SPLITS: (f64, f64, f64) = (0.7, 0.1, 0.2);

fn defaults() -> RunConfig {
    RunConfig::default()
}

#[derive(Debug, Parser)]
#[command(name = "tsgeo", version, about = "Geometric-structure similarity and shape-aware losses for time series")]
struct Cli {
    /// TOML file with run settings; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = defaults().seed)]
    seed: u64,
    /// Worker threads for independent training runs.
    #[arg(long, global = true, default_value_t = defaults().threads)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render each channel of a CSV series to a grayscale image.
    Render(RenderArgs),
    /// Score a prediction CSV against a ground-truth CSV.
    Tgsi(TgsiArgs),
    /// Train the autoencoder and temporal extractor and save a bundle.
    TrainPerceptual(TrainArgs),
    /// Sweep deformation strength against TGSI for several expansion widths.
    ValidateMetric(ValidateArgs),
    /// Train linear forecasters with MSE and with the shape-aware loss.
    DemoForecast(DemoArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = defaults().height)]
    height: usize,
    #[arg(long, default_value_t = defaults().expand)]
    expand: usize,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long, default_value = "pgm")]
    format: ImageFormat,
}

#[derive(Debug, Args)]
struct TgsiArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = defaults().height)]
    height: usize,
    #[arg(long, default_value_t = defaults().expand)]
    expand: usize,
    #[arg(long, default_value_t = defaults().downscale)]
    downscale: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// CSV whose training split supplies the sample windows.
    #[arg(long)]
    data: PathBuf,
    /// Window length the bundle will score.
    #[arg(long, default_value_t = defaults().t_out)]
    t_out: usize,
    #[arg(long, default_value_t = defaults().epochs_ae)]
    epochs_ae: usize,
    #[arg(long, default_value_t = defaults().epochs_ex)]
    epochs_ex: usize,
    #[arg(long, default_value_t = defaults().lr)]
    lr: f64,
    #[arg(long, default_value_t = defaults().batch)]
    batch: usize,
    #[arg(long, default_value_t = defaults().dz)]
    dz: usize,
    #[arg(long, default_value_t = defaults().pipeline_height)]
    pipeline_height: usize,
    #[arg(long, default_value_t = defaults().pipeline_expand)]
    pipeline_expand: usize,
    /// Number of training windows.
    #[arg(long, default_value_t = defaults().bundle_samples)]
    bundle_samples: usize,
    /// Bundle output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = defaults().length)]
    length: usize,
    /// Comma-separated expansion widths.
    #[arg(long, value_delimiter = ',', default_value = "0,10,100")]
    d: Vec<usize>,
    #[arg(long, default_value_t = defaults().p_steps)]
    p_steps: usize,
    #[arg(long, default_value_t = defaults().seeds_per_point)]
    seeds_per_point: usize,
    #[arg(long, default_value_t = defaults().height)]
    height: usize,
    #[arg(long, default_value_t = defaults().downscale)]
    downscale: usize,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Mse,
    Satl,
    Both,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = defaults().t_in)]
    t_in: usize,
    #[arg(long, default_value_t = defaults().t_out)]
    t_out: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Both)]
    loss: LossArg,
    #[arg(long, default_value_t = defaults().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = defaults().beta)]
    beta: f64,
    #[arg(long, default_value_t = defaults().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = defaults().delta)]
    delta: f64,
    #[arg(long, default_value_t = defaults().k_ratio)]
    k_ratio: f64,
    /// Pretrained perceptual bundle; one is trained on the fly when omitted.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long, default_value_t = defaults().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = defaults().forecast_lr)]
    forecast_lr: f64,
    #[arg(long, default_value_t = defaults().forecast_batch)]
    forecast_batch: usize,
    /// Number of training seeds, starting at --seed.
    #[arg(long, default_value_t = defaults().runs)]
    runs: usize,
    /// CSV dataset; a synthetic periodic series is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = defaults().bundle_samples)]
    bundle_samples: usize,
    /// Render height for scoring.
    #[arg(long, default_value_t = defaults().height)]
    height: usize,
    #[arg(long, default_value_t = defaults().expand)]
    expand: usize,
    #[arg(long, default_value_t = defaults().downscale)]
    downscale: usize,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

macro_rules! overlay {
    ($m:expr, $cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(if explicit($m, stringify!($field)) {
            $cfg.$field = $args.$field.clone();
        })*
    };
}

/// Parses `argv` (including the program name) and runs one subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(argv, &mut out, &mut err)
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = Cli::command().try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m).map(|c| (m, c)));
    let (matches, cli) = match parsed {
        Ok(v) => v,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return if code == 0 { 0 } else { 1 };
        }
    };
    match dispatch(&matches, cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, Error::Usage(_)) {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(matches: &ArgMatches, cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overlay!(matches, cfg, cli; seed, threads);
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Command::Render(a) => {
            overlay!(sub, cfg, a; height, expand);
            cmd_render(&cfg, &a, name, out)
        }
        Command::Tgsi(a) => {
            overlay!(sub, cfg, a; height, expand, downscale);
            cmd_tgsi(&cfg, &a, out)
        }
        Command::TrainPerceptual(a) => {
            overlay!(sub, cfg, a; t_out, epochs_ae, epochs_ex, lr, batch, dz, pipeline_height, pipeline_expand, bundle_samples);
            cmd_train(&cfg, &a, name, out)
        }
        Command::ValidateMetric(a) => {
            overlay!(sub, cfg, a; length, d, p_steps, seeds_per_point, height, downscale);
            cmd_validate(&cfg, &a, name, out)
        }
        Command::DemoForecast(a) => {
            overlay!(sub, cfg, a; t_in, t_out, alpha, beta, gamma, delta, k_ratio, epochs, forecast_lr, forecast_batch, runs, bundle_samples, height, expand, downscale);
            cmd_demo(&cfg, &a, name, out)
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    io_err("<stdout>")(e)
}

fn run_dir(base: &Path, name: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = base.join(format!("{name}-seed{}", cfg.seed));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    echo_config(&dir.join("config.toml"), name, cfg)?;
    Ok(dir)
}

fn echo_config(path: &Path, name: &str, cfg: &RunConfig) -> Result<()> {
    write_text(path, &format!("# tsgeo {name}\n{}", cfg.to_toml()))
}

fn cmd_render(cfg: &RunConfig, a: &RenderArgs, name: &str, out: &mut dyn Write) -> Result<()> {
    let series = read_csv(&a.input)?;
    let render = RenderConfig { height: cfg.height, expansion: cfg.expand, downscale_window: cfg.downscale };
    let img = render_series(&series, &render)?;
    let dir = run_dir(&a.out_dir, name, cfg)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    for p in export_series_image(&dir, stem, &img, a.format)? {
        writeln!(out, "{}", p.display()).map_err(io_out)?;
    }
    Ok(())
}

fn cmd_tgsi(cfg: &RunConfig, a: &TgsiArgs, out: &mut dyn Write) -> Result<()> {
    let pred = read_csv(&a.pred)?;
    let truth = read_csv(&a.truth)?;
    let tcfg = cfg.tgsi();
    tcfg.validate()?;
    let report = tgsi(&pred, &truth, &tcfg)?;
    let mut cells: Vec<String> = report.channels.iter().map(|c| c.tgsi.to_string()).collect();
    cells.push(report.aggregate.to_string());
    writeln!(out, "{}", cells.join(",")).map_err(io_out)
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, name: &str, out: &mut dyn Write) -> Result<()> {
    let series = read_csv(&a.data)?;
    let samples = train_split_windows(&series, cfg.t_out, cfg.bundle_samples)?;
    let bundle = train_bundle(&samples, &cfg.pipeline())?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_bundle(&bundle, &a.out)?;
    echo_config(&a.out.with_extension("config.toml"), name, cfg)?;
    write_report_csv(&a.out.with_extension("report.csv"), &bundle)?;
    writeln!(
        out,
        "autoencoder loss {} -> {}; extractor loss {} -> {}",
        fmt_opt(bundle.autoencoder_report.curve.first()),
        fmt_opt(bundle.autoencoder_report.final_loss.as_ref()),
        fmt_opt(bundle.extractor_report.curve.first()),
        fmt_opt(bundle.extractor_report.final_loss.as_ref()),
    )
    .map_err(io_out)
}

/// Evenly spaced length-`t` single-channel windows from the training split.
fn train_split_windows(series: &TimeSeries, t: usize, samples: usize) -> Result<Vec<Vec<f64>>> {
    let n_train = (SPLITS.0 * series.len() as f64).round() as usize;
    if t == 0 || samples == 0 || n_train < t {
        return Err(Error::Usage(format!(
            "training split of {n_train} steps cannot supply {samples} windows of length {t}"
        )));
    }
    let count = n_train - t + 1;
    let mut out = Vec::with_capacity(samples * series.channels());
    for s in 0..samples {
        let start = s * count / samples;
        for ch in 0..series.channels() {
            out.push(series.channel(ch)[start..start + t].to_vec());
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<&f64>) -> String {
    v.map_or_else(|| "-".into(), f64::to_string)
}

fn write_report_csv(path: &Path, b: &PerceptualBundle) -> Result<()> {
    let stage = |label: &'static str, curve: &[f64]| {
        curve
            .iter()
            .enumerate()
            .map(move |(i, v)| vec![label.to_owned(), (i + 1).to_string(), v.to_string()])
            .collect::<Vec<_>>()
    };
    let mut rows = stage("autoencoder", &b.autoencoder_report.curve);
    rows.extend(stage("extractor", &b.extractor_report.curve));
    write_rows(path, &["stage", "epoch", "loss"], rows)
}

fn cmd_validate(cfg: &RunConfig, a: &ValidateArgs, name: &str, out: &mut dyn Write) -> Result<()> {
    let sweep = cfg.sweep()?;
    let res = similarity_sweep(&sweep)?;
    let dir = run_dir(&a.out_dir, name, cfg)?;
    write_rows(
        &dir.join("sweep.csv"),
        &["d", "p", "operator", "seed", "tgsi"],
        res.rows.iter().map(|r| {
            vec![r.d.to_string(), r.p.to_string(), r.kind.name().into(), r.seed.to_string(), r.tgsi.to_string()]
        }),
    )?;
    let mut agg = Vec::new();
    for c in &res.curves {
        for (p, m) in res.p_grid.iter().zip(&c.mean_tgsi) {
            agg.push(vec![c.d.to_string(), p.to_string(), m.to_string()]);
        }
    }
    write_rows(&dir.join("aggregate.csv"), &["d", "p", "mean_tgsi"], agg)?;
    let pearson: Vec<Vec<String>> = res.curves.iter().map(|c| vec![c.d.to_string(), c.pearson.to_string()]).collect();
    write_rows(&dir.join("pearson.csv"), &["d", "pearson"], pearson.clone())?;
    writeln!(out, "d,pearson").map_err(io_out)?;
    for row in pearson {
        writeln!(out, "{}", row.join(",")).map_err(io_out)?;
    }
    Ok(())
}

struct SeedResult {
    seed: u64,
    runs: Vec<(ForecastRun, Metrics, Vec<TimeSeries>)>,
}

fn cmd_demo(cfg: &RunConfig, a: &DemoArgs, name: &str, out: &mut dyn Write) -> Result<()> {
    if cfg.runs == 0 || cfg.threads == 0 {
        return Err(Error::Usage("--runs and --threads must be positive".into()));
    }
    let weights = cfg.loss_weights();
    weights.validate()?;
    let tcfg = cfg.tgsi();
    tcfg.validate()?;
    let modes: &[LossMode] = match a.loss {
        LossArg::Mse => &[LossMode::Mse],
        LossArg::Satl => &[LossMode::Satl],
        LossArg::Both => &[LossMode::Mse, LossMode::Satl],
    };
    let ds = match &a.data {
        Some(p) => make_windows(&read_csv(p)?, cfg.t_in, cfg.t_out, SPLITS)?,
        None => cfg.benchmark().dataset()?,
    };
    let dir = run_dir(&a.out_dir, name, cfg)?;

    let bundle = if weights.gamma > 0.0 && modes.contains(&LossMode::Satl) {
        let b = match &a.bundle {
            Some(p) => load_bundle(p)?,
            None => {
                let samples = bundle_training_series(&ds, cfg.bundle_samples)?;
                let b = train_bundle(&samples, &cfg.pipeline())?;
                save_bundle(&b, &dir.join("bundle.tsgeo"))?;
                b
            }
        };
        check_bundle_render(&b, &ds)?;
        Some(b)
    } else {
        None
    };

    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| cfg.seed + r).collect();
    let job = |seed: u64| -> Result<SeedResult> {
        let settings = TrainSettings { epochs: cfg.epochs, lr: cfg.forecast_lr, batch: cfg.forecast_batch, seed };
        let mut runs = Vec::with_capacity(modes.len());
        for &mode in modes {
            let run = train_forecaster(&ds, mode, &weights, bundle.as_ref(), &settings, &tcfg)?;
            let preds = predict_windows(&run.model, &ds.test)?;
            let truths: Vec<TimeSeries> = ds.test.iter().map(|w| w.target.clone()).collect();
            let m = score_predictions(&preds, &truths, &tcfg)?;
            runs.push((run, m, preds));
        }
        Ok(SeedResult { seed, runs })
    };
    let results = run_parallel(&seeds, cfg.threads, &job)?;

    write_demo_outputs(&dir, &ds, &results)?;
    writeln!(out, "mode,mean_mse,mean_mae,mean_tgsi").map_err(io_out)?;
    for (i, mode) in modes.iter().enumerate() {
        let n = results.len() as f64;
        let mean = |f: fn(&Metrics) -> f64| results.iter().map(|r| f(&r.runs[i].1)).sum::<f64>() / n;
        writeln!(out, "{},{},{},{}", mode.name(), mean(|m| m.mse), mean(|m| m.mae), mean(|m| m.tgsi))
            .map_err(io_out)?;
    }
    Ok(())
}

/// Runs `job` for every seed on up to `threads` workers; results keep seed order.
fn run_parallel<F>(seeds: &[u64], threads: usize, job: &F) -> Result<Vec<SeedResult>>
where
    F: Fn(u64) -> Result<SeedResult> + Sync,
{
    if threads <= 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let chunk = seeds.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| job(s)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut all = Vec::with_capacity(seeds.len());
        for h in handles {
            all.extend(h.join().expect("worker panicked")?);
        }
        Ok(all)
    })
}

fn write_demo_outputs(dir: &Path, ds: &WindowDataset, results: &[SeedResult]) -> Result<()> {
    let mut metrics = Vec::new();
    let mut digests = Vec::new();
    let mut history = Vec::new();
    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;
    for r in results {
        for (run, m, preds) in &r.runs {
            let mode = run.mode.name().to_owned();
            metrics.push(vec![
                r.seed.to_string(),
                mode.clone(),
                m.mse.to_string(),
                m.mae.to_string(),
                m.tgsi.to_string(),
            ]);
            digests.push(vec![
                r.seed.to_string(),
                mode.clone(),
                format!("{:016x}", run.shared_digest),
                format!("{:016x}", run.run_digest),
            ]);
            for (e, h) in run.history.iter().enumerate() {
                history.push(vec![
                    r.seed.to_string(),
                    mode.clone(),
                    (e + 1).to_string(),
                    h.train_loss.to_string(),
                    h.val_mse.to_string(),
                    h.val_tgsi.to_string(),
                ]);
            }
            let mut rows = Vec::new();
            for (w, (win, pred)) in ds.test.iter().zip(preds).enumerate() {
                for t in 0..pred.len() {
                    for c in 0..pred.channels() {
                        rows.push(vec![
                            w.to_string(),
                            (win.start + ds.t_in + t).to_string(),
                            c.to_string(),
                            pred.get(t, c).to_string(),
                            win.target.get(t, c).to_string(),
                        ]);
                    }
                }
            }
            write_rows(
                &pred_dir.join(format!("{mode}_seed{}.csv", r.seed)),
                &["window", "t", "channel", "pred", "truth"],
                rows,
            )?;
        }
    }
    write_rows(&dir.join("metrics.csv"), &["seed", "mode", "mse", "mae", "tgsi"], metrics)?;
    write_rows(&dir.join("digests.csv"), &["seed", "mode", "shared_digest", "run_digest"], digests)?;
    write_rows(&dir.join("history.csv"), &["seed", "mode", "epoch", "train_loss", "val_mse", "val_tgsi"], history)
}
