use tsgeo_core::forecast::{
    evaluate, make_windows, predict_windows, score_predictions, train_forecaster, LossMode, TrainSettings,
};
use tsgeo_core::perceptual::PerceptualBundle;
use tsgeo_core::satl::LossWeights;
use tsgeo_core::tgsi::{tgsi, TgsiConfig};
use tsgeo_core::validation::gen_base_sequence;
use tsgeo_core::TimeSeries;

fn settings(epochs: usize, seed: u64) -> TrainSettings {
    TrainSettings { epochs, lr: 1e-2, batch: 8, seed }
}

#[test]
fn windows_reassemble_source() {
    let s = gen_base_sequence(1, 300, 3, 0.2).unwrap();
    let ds = make_windows(&s, 12, 6, (0.7, 0.1, 0.2)).unwrap();
    let mut rebuilt = vec![f64::NAN; s.len()];
    for w in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        for (i, v) in w.input.data().iter().chain(w.target.data()).enumerate() {
            let slot = &mut rebuilt[w.start + i];
            assert!(slot.is_nan() || *slot == *v);
            *slot = *v;
        }
    }
    for (a, b) in rebuilt.iter().zip(s.data()) {
        assert_eq!(a, b);
    }
    let [(a0, a1), (b0, b1), (c0, c1)] = ds.bounds;
    assert!(a0 == 0 && a1 == b0 && b1 == c0 && c1 == 300);
}

#[test]
fn linear_trend_is_learned_exactly() {
    let s = TimeSeries::univariate((0..80).map(|t| t as f64 / 80.0).collect()).unwrap();
    let ds = make_windows(&s, 4, 2, (0.7, 0.1, 0.2)).unwrap();
    let run =
        train_forecaster(&ds, LossMode::Mse, &LossWeights::default(), None, &settings(200, 0), &TgsiConfig::default())
            .unwrap();
    let m = evaluate(&run.model, &ds.test, &TgsiConfig::default()).unwrap();
    assert!(m.mse < 1e-6, "test mse {}", m.mse);
    assert_eq!(run.history.len(), 200);
}

#[test]
fn determinism_and_digests() {
    let s = gen_base_sequence(2, 240, 3, 0.3).unwrap();
    let ds = make_windows(&s, 16, 8, (0.7, 0.1, 0.2)).unwrap();
    let cfg = TgsiConfig::default();
    let w = LossWeights { gamma: 0.0, ..LossWeights::default() };
    let a = train_forecaster(&ds, LossMode::Satl, &w, None, &settings(3, 7), &cfg).unwrap();
    let b = train_forecaster(&ds, LossMode::Satl, &w, None, &settings(3, 7), &cfg).unwrap();
    assert_eq!(a, b);
    let m = train_forecaster(&ds, LossMode::Mse, &w, None, &settings(3, 7), &cfg).unwrap();
    assert_eq!(a.shared_digest, m.shared_digest);
    assert_ne!(a.run_digest, m.run_digest);
    let other = train_forecaster(&ds, LossMode::Mse, &w, None, &settings(3, 8), &cfg).unwrap();
    assert_ne!(other.shared_digest, m.shared_digest);
}

#[test]
fn bundle_length_must_match_horizon() {
    let s = gen_base_sequence(2, 240, 3, 0.3).unwrap();
    let ds = make_windows(&s, 16, 8, (0.7, 0.1, 0.2)).unwrap();
    let bundle = PerceptualBundle::skeleton(Default::default(), 9, 4, 0).unwrap();
    let r = train_forecaster(
        &ds,
        LossMode::Satl,
        &LossWeights::default(),
        Some(&bundle),
        &settings(1, 0),
        &TgsiConfig::default(),
    );
    assert!(r.is_err());
    let empty = make_windows(&s, 16, 8, (0.0, 0.0, 1.0)).unwrap();
    assert!(train_forecaster(
        &empty,
        LossMode::Mse,
        &LossWeights::default(),
        None,
        &settings(1, 0),
        &TgsiConfig::default()
    )
    .is_err());
}

#[test]
fn metrics_recompute_from_dump() {
    let s = gen_base_sequence(4, 240, 3, 0.3).unwrap();
    let ds = make_windows(&s, 16, 8, (0.7, 0.1, 0.2)).unwrap();
    let cfg = TgsiConfig::default();
    let run = train_forecaster(&ds, LossMode::Mse, &LossWeights::default(), None, &settings(2, 1), &cfg).unwrap();
    let m = evaluate(&run.model, &ds.test, &cfg).unwrap();
    let preds = predict_windows(&run.model, &ds.test).unwrap();

    let (mut se, mut ae, mut n, mut ts) = (0.0, 0.0, 0.0, 0.0);
    for (p, w) in preds.iter().zip(&ds.test) {
        for (a, b) in p.data().iter().zip(w.target.data()) {
            se += (a - b).powi(2);
            ae += (a - b).abs();
            n += 1.0;
        }
        ts += tgsi(p, &w.target, &cfg).unwrap().aggregate;
    }
    assert!((m.mse - se / n).abs() < 1e-12);
    assert!((m.mae - ae / n).abs() < 1e-12);
    assert!((m.tgsi - ts / preds.len() as f64).abs() < 1e-12);
}

#[test]
fn zero_predictions_score_target_energy() {
    let truth = vec![TimeSeries::univariate(vec![1.0, -2.0, 3.0]).unwrap()];
    let zero = vec![TimeSeries::univariate(vec![0.0; 3]).unwrap()];
    let m = score_predictions(&zero, &truth, &TgsiConfig::default()).unwrap();
    assert_eq!(m.mse, 14.0 / 3.0);
    assert_eq!(m.mae, 2.0);
}
