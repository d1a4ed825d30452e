//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Criteria run one after another so the timing budgets are measured on an
//! otherwise idle process.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use support::{grad_suite, naive_dft, rand_tensor, rng};
use tsgeo::cli::run_with;
use tsgeo_core::forecast::{
    bundle_training_series, evaluate, train_forecaster, BenchmarkConfig, LossMode, TrainSettings,
};
use tsgeo_core::perceptual::{render_sample, train_autoencoder, train_extractor, PerceptualBundle, PipelineConfig};
use tsgeo_core::satl::{diff_loss, freq_loss, mse_loss, satl_total, LossWeights};
use tsgeo_core::spectral::{rfft, rfft_adjoint, Complex64};
use tsgeo_core::tensor::{Graph, NodeId, Tensor};
use tsgeo_core::validation::{mse_blindness_demo, similarity_sweep, SweepConfig};
use tsgeo_core::{tgsi, TgsiConfig, TimeSeries};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn metric_identity() -> Outcome {
    let cfg = TgsiConfig::default();
    let mut r = rng(0xacc1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = r.random_range(16..=720);
        let n = r.random_range(1..=7);
        let x = TimeSeries::new(t, n, rand_tensor(&mut r, &[t * n]).into_data()).map_err(|e| e.to_string())?;
        let v = tgsi(&x, &x, &cfg).map_err(|e| e.to_string())?.aggregate;
        worst = worst.max((v - 1.0).abs());
    }
    ensure(worst <= 1e-9, format!("max |tgsi(x,x) - 1| = {worst:e}"))?;
    Ok(format!("max |tgsi(x,x) - 1| = {worst:e} over 100 series"))
}

fn sweep_reproduction() -> Outcome {
    let res = similarity_sweep(&SweepConfig::default()).map_err(|e| e.to_string())?;
    let r = |d| res.curve(d).map(|c| c.pearson).ok_or(format!("no curve for d={d}"));
    let (r0, r10, r100) = (r(0)?, r(10)?, r(100)?);
    let detail = format!("r(d=0)={r0:.4} r(d=10)={r10:.4} r(d=100)={r100:.4}");
    ensure(r100 >= 0.9, format!("r(d=100) < 0.9; {detail}"))?;
    ensure(r0.abs() <= 0.3, format!("|r(d=0)| > 0.3; {detail}"))?;
    ensure(r100 >= r10 && r10 >= r0, format!("ordering r(100) >= r(10) >= r(0) violated; {detail}"))?;
    Ok(detail)
}

fn blindness() -> Outcome {
    let mut wins = 0;
    let mut worst_gap: f64 = 0.0;
    let (mut t1, mut t2) = (0.0, 0.0);
    for seed in 0..20 {
        let rep = mse_blindness_demo(seed).map_err(|e| e.to_string())?;
        worst_gap = worst_gap.max((rep.mse_pair1 - rep.mse_pair2).abs());
        wins += usize::from(rep.tgsi_pair1 > rep.tgsi_pair2);
        t1 += rep.tgsi_pair1 / 20.0;
        t2 += rep.tgsi_pair2 / 20.0;
    }
    let detail = format!("{wins}/20 seeds, max MSE gap {worst_gap:e}, mean TGSI {t1:.4} vs {t2:.4}");
    ensure(worst_gap < 1e-6 && wins >= 19, detail.clone())?;
    Ok(detail)
}

fn gradient_suite() -> Outcome {
    let mut failed = Vec::new();
    for (name, suite) in grad_suite::ALL {
        if catch_unwind(suite).is_err() {
            failed.push(*name);
        }
    }
    ensure(failed.is_empty(), format!("failing suites: {failed:?}"))?;
    Ok(format!("{} suites, 20 cases per operator", grad_suite::ALL.len()))
}

fn spectral_oracle() -> Outcome {
    let mut lengths: Vec<usize> = (2..=64).collect();
    lengths.extend([96, 128, 336, 512, 720]);
    let mut worst: f64 = 0.0;
    for &t in &lengths {
        let s = rand_tensor(&mut rng(0x5bec + t as u64), &[t]).into_data();
        let fast = rfft(&s).map_err(|e| e.to_string())?;
        for (a, (re, im)) in fast.bins().iter().zip(naive_dft(&s)) {
            worst = worst.max((a.re - re).abs()).max((a.im - im).abs());
        }
    }
    let mut worst_adj: f64 = 0.0;
    for case in 0..50u64 {
        let mut r = rng(0xad10 + case);
        let t = lengths[r.random_range(0..lengths.len())];
        let s = rand_tensor(&mut r, &[t]).into_data();
        let c: Vec<Complex64> =
            rand_tensor(&mut r, &[t / 2 + 1, 2]).data().chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        let lhs: f64 = rfft(&s).unwrap().bins().iter().zip(&c).map(|(x, y)| x.re * y.re + x.im * y.im).sum();
        let rhs: f64 = s.iter().zip(rfft_adjoint(&c, t).unwrap()).map(|(a, b)| a * b).sum();
        worst_adj = worst_adj.max((lhs - rhs).abs());
    }
    let detail = format!("max DFT error {worst:e}, max adjoint gap {worst_adj:e}");
    ensure(worst < 1e-9 && worst_adj < 1e-10, detail.clone())?;
    Ok(detail)
}

fn col(v: &[f64]) -> Tensor {
    Tensor::new([v.len(), 1], v.to_vec()).unwrap()
}

fn eval2(x: &Tensor, y: &Tensor, f: impl Fn(&mut Graph, NodeId, NodeId) -> tsgeo_core::Result<NodeId>) -> f64 {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let l = f(&mut g, a, b).unwrap();
    g.item(l)
}

fn loss_algebra() -> Outcome {
    let mut r = rng(0xa16e);
    for _ in 0..50 {
        let t = r.random_range(2..64);
        let y: Vec<f64> = (0..t).map(|_| r.random_range(-64i32..64) as f64 / 8.0).collect();
        let c = r.random_range(-64i32..64) as f64 / 4.0;
        let x: Vec<f64> = y.iter().map(|v| v + c).collect();
        let d = eval2(&col(&x), &col(&y), diff_loss);
        ensure(d == 0.0, format!("diff_loss of offset copy = {d:e}"))?;
    }
    let w = LossWeights { k_ratio: 0.25, ..LossWeights::default() };
    let f = eval2(&col(&[0.0; 4]), &col(&[1.0, -1.0, 1.0, -1.0]), |g, a, b| freq_loss(g, a, b, &w));
    ensure((f - 2.0).abs() < 1e-12, format!("freq_loss hand case = {f}"))?;
    let w = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 1.0, k_ratio: 0.1 };
    for case in 0..20 {
        let mut r = rng(0xb17 + case);
        let x = rand_tensor(&mut r, &[24, 3]);
        let y = rand_tensor(&mut r, &[24, 3]);
        let total = eval2(&x, &y, |g, a, b| satl_total(g, a, b, &w, None));
        let mse = eval2(&x, &y, mse_loss);
        ensure(total.to_bits() == mse.to_bits(), format!("satl_total {total} != mse {mse}"))?;
    }
    Ok("offset diff exactly 0; freq hand case 2.0; MSE reduction bit-exact".into())
}

/// Criterion 7 trains the bundle that criterion 8 then uses.
fn pipeline(bundle_out: &mut Option<PerceptualBundle>) -> Outcome {
    let bench = BenchmarkConfig::default();
    let ds = bench.dataset().map_err(|e| e.to_string())?;
    let series = bundle_training_series(&ds, bench.bundle_samples).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let images: Vec<_> = series.iter().map(|s| render_sample(s, &cfg.render).unwrap()).collect();
    let (ae, ae_rep) = train_autoencoder(&images, cfg.d_z, cfg.autoencoder_epochs, cfg.lr, cfg.batch, cfg.seed)
        .map_err(|e| e.to_string())?;
    let before = ae.clone();
    let (ex, ex_rep) = train_extractor(&series, &ae, &cfg.render, cfg.extractor_epochs, cfg.lr, cfg.batch, cfg.seed)
        .map_err(|e| e.to_string())?;
    let (a0, a1) = (ae_rep.curve[0], *ae_rep.curve.last().unwrap());
    let (e0, e1) = (ex_rep.curve[0], *ex_rep.curve.last().unwrap());
    let drop = 1.0 - a1 / a0;
    let detail = format!(
        "{} samples; stage one {a0:.4} -> {a1:.4} ({:.0}% drop); stage two {e0:.4} -> {e1:.4}; encoder grad norm {}",
        series.len(),
        drop * 100.0,
        ex_rep.frozen_grad_norm
    );
    ensure(drop >= 0.5, format!("stage-one drop below 50%; {detail}"))?;
    ensure(e1 < e0, format!("stage-two loss did not fall; {detail}"))?;
    ensure(ex_rep.frozen_grad_norm == 0.0 && before == ae, format!("encoder not frozen; {detail}"))?;
    *bundle_out = Some(PerceptualBundle {
        autoencoder: ae,
        extractor: ex,
        render: cfg.render,
        seed: cfg.seed,
        autoencoder_report: ae_rep,
        extractor_report: ex_rep,
    });
    Ok(detail)
}

fn forecast_direction(bundle: Option<&PerceptualBundle>) -> Outcome {
    let bundle = bundle.ok_or("criterion 7 produced no bundle")?;
    let bench = BenchmarkConfig::default();
    let ds = bench.dataset().map_err(|e| e.to_string())?;
    let cfg = TgsiConfig::default();
    let w = LossWeights::default();
    let (mut mse_mean, mut satl_mean) = (0.0, 0.0);
    let mut satl_wins = 0;
    for seed in 0..bench.seeds as u64 {
        let st = TrainSettings { epochs: bench.epochs, lr: bench.lr, batch: bench.batch, seed };
        let m = train_forecaster(&ds, LossMode::Mse, &w, Some(bundle), &st, &cfg).map_err(|e| e.to_string())?;
        let s = train_forecaster(&ds, LossMode::Satl, &w, Some(bundle), &st, &cfg).map_err(|e| e.to_string())?;
        ensure(m.shared_digest == s.shared_digest, format!("seed {seed}: config digests differ"))?;
        let em = evaluate(&m.model, &ds.test, &cfg).map_err(|e| e.to_string())?;
        let es = evaluate(&s.model, &ds.test, &cfg).map_err(|e| e.to_string())?;
        mse_mean += em.tgsi / bench.seeds as f64;
        satl_mean += es.tgsi / bench.seeds as f64;
        satl_wins += usize::from(es.tgsi >= em.tgsi);
    }
    let detail = format!(
        "mean test TGSI satl {satl_mean:.4} vs mse {mse_mean:.4}; satl >= mse on {satl_wins}/{} seeds; digests equal",
        bench.seeds
    );
    ensure(satl_mean >= mse_mean, detail.clone())?;
    Ok(detail)
}

fn cli(args: &[String]) -> Result<(), String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(std::iter::once("tsgeo".to_owned()).chain(args.iter().cloned()), &mut out, &mut err);
    ensure(code == 0, format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data.csv");
    let mut csv = String::from("date,a,b\n");
    for i in 0..480 {
        let t = i as f64;
        csv.push_str(&format!("t{i},{},{}\n", (t / 6.0).sin() + 0.05 * ((i * 37) % 11) as f64, (t / 9.0).cos()));
    }
    fs::write(&data, csv).map_err(|e| e.to_string())?;
    let d = data.display().to_string();
    let once = |tag: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let base = dir.path().join(tag);
        let b = base.display().to_string();
        let bundle = format!("{b}/bundle.tsgeo");
        let runs = [
            format!("render --input {d} --out-dir {b} --format png"),
            format!("validate-metric --seed 3 --length 64 --p-steps 5 --seeds-per-point 3 --out-dir {b}"),
            format!("train-perceptual --data {d} --t-out 24 --epochs-ae 2 --epochs-ex 2 --dz 16 --pipeline-height 32 --pipeline-expand 8 --bundle-samples 8 --out {bundle} --seed 4"),
            format!("demo-forecast --data {d} --t-in 24 --t-out 24 --bundle {bundle} --runs 2 --epochs 2 --seed 4 --out-dir {b}"),
            format!("demo-forecast --t-in 24 --t-out 24 --gamma 0 --runs 2 --epochs 1 --seed 9 --out-dir {b}"),
        ];
        for r in runs {
            cli(&r.split(' ').map(str::to_owned).collect::<Vec<_>>())?;
        }
        Ok(tree(&base))
    };
    let a = once("a")?;
    let b = once("b")?;
    ensure(a.keys().eq(b.keys()), "file sets differ")?;
    let differing: Vec<_> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure(differing.is_empty(), format!("differing files: {differing:?}"))?;
    Ok(format!("{} output files identical across reruns of all five subcommands", a.len()))
}

fn main() {
    let mut bundle = None;
    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let mut results = Vec::new();
    {
        let criteria: Vec<(u32, &str, u64, Check)> = vec![
            (1, "metric identity", 10, Box::new(metric_identity)),
            (2, "similarity sweep", 300, Box::new(sweep_reproduction)),
            (3, "MSE blindness", 60, Box::new(blindness)),
            (4, "gradient suite", 300, Box::new(gradient_suite)),
            (5, "spectral oracle", 60, Box::new(spectral_oracle)),
            (6, "loss algebra", 60, Box::new(loss_algebra)),
            (7, "pipeline training", 600, Box::new(|| pipeline(&mut bundle))),
        ];
        for (n, name, budget, check) in criteria {
            results.push(run_one(n, name, budget, check));
        }
    }
    results.push(run_one(8, "forecast direction", 600, Box::new(|| forecast_direction(bundle.as_ref()))));
    results.push(run_one(9, "CLI determinism", 600, Box::new(determinism)));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn run_one(n: u32, name: &str, budget_s: u64, check: Box<dyn FnOnce() -> Outcome + '_>) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    let took = start.elapsed();
    let over = took > Duration::from_secs(budget_s);
    let (ok, detail) = match outcome {
        Ok(d) if !over => (true, d),
        Ok(d) => (false, format!("{d}; over the {budget_s} s budget")),
        Err(d) => (false, d),
    };
    println!("criterion {n} {}: {name}: {detail} [{:.1} s]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    ok
}
