use proptest::prelude::*;
use tsgeo_core::spectral::rfft;
use tsgeo_core::validation::{
    base_sequence_bins, deform, gen_base_sequence, mse_blindness_demo, pearson, similarity_sweep, DeformationKind,
    DeformationSpec, SweepConfig,
};

#[test]
fn base_sequence_peaks_at_drawn_bins() {
    for seed in 0..10 {
        let y = gen_base_sequence(seed, 256, 3, 0.0).unwrap();
        let mags = rfft(y.data()).unwrap().magnitudes();
        let bins = base_sequence_bins(seed, 256, 3);
        assert_eq!(bins.len(), 3);
        let mut order: Vec<usize> = (1..mags.len()).collect();
        order.sort_by(|a, b| mags[*b].total_cmp(&mags[*a]));
        let mut top: Vec<usize> = order[..3].to_vec();
        top.sort_unstable();
        let mut want = bins.clone();
        want.sort_unstable();
        assert_eq!(top, want, "seed {seed}");
        let mean = y.data().iter().sum::<f64>() / 256.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn pearson_against_two_pass_formula() {
    let a = [1.0, 2.0, 4.0, 7.0, 11.0];
    let b = [2.0, 1.0, 5.0, 6.0, 12.0];
    let ma = a.iter().sum::<f64>() / 5.0;
    let mb = b.iter().sum::<f64>() / 5.0;
    let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    assert!((pearson(&a, &b).unwrap() - num / (da * db).sqrt()).abs() < 1e-14);
    assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn sweep_is_perfect_at_full_similarity() {
    let cfg = SweepConfig { t: 64, p_grid: vec![0.0, 0.5, 1.0], seeds_per_point: 3, ..SweepConfig::default() };
    let res = similarity_sweep(&cfg).unwrap();
    assert_eq!(res.rows.len(), 3 * 3 * 3 * 3);
    for c in &res.curves {
        assert!((c.mean_tgsi[2] - 1.0).abs() < 1e-9, "d={} {:?}", c.d, c.mean_tgsi);
    }
    assert_eq!(similarity_sweep(&cfg).unwrap(), res);
    let bad = SweepConfig { p_grid: vec![1.5], ..cfg };
    assert!(similarity_sweep(&bad).is_err());
}

#[test]
fn blindness_demo_separates_equal_mse_pairs() {
    let mut wins = 0;
    for seed in 0..20 {
        let r = mse_blindness_demo(seed).unwrap();
        assert!((r.mse_pair1 - r.mse_pair2).abs() < 1e-6);
        assert!((r.mse_pair2 - 0.79).abs() < 1e-12);
        wins += usize::from(r.tgsi_pair1 > r.tgsi_pair2);
    }
    assert!(wins >= 19, "{wins}/20");
}

proptest! {
    #[test]
    fn deformations_are_identity_at_p_one(seed in 0u64..500, k in 0usize..3) {
        let y = gen_base_sequence(seed, 32, 2, 0.1).unwrap();
        let x = deform(&y, &DeformationSpec::new(DeformationKind::ALL[k], 1.0, seed)).unwrap();
        prop_assert_eq!(x.data(), y.data());
    }

    #[test]
    fn deformations_match_closed_forms(seed in 0u64..500, p in 0.0f64..1.0) {
        let y = gen_base_sequence(seed, 48, 3, 0.1).unwrap();
        let a = deform(&y, &DeformationSpec::new(DeformationKind::AmplitudeScale, p, 1)).unwrap();
        let o = deform(&y, &DeformationSpec::new(DeformationKind::ConstantOffset, p, 1)).unwrap();
        for ((v, s), c) in y.data().iter().zip(a.data()).zip(o.data()) {
            prop_assert!((s - p * v).abs() < 1e-12);
            prop_assert!((c - (v + 1.0 - p)).abs() < 1e-12);
        }
        let n1 = deform(&y, &DeformationSpec::new(DeformationKind::NoiseInject, p, 9)).unwrap();
        let n2 = deform(&y, &DeformationSpec::new(DeformationKind::NoiseInject, p, 9)).unwrap();
        prop_assert_eq!(n1.data(), n2.data());
    }
}
