use fidux_core::baseline::{breslow_cumulative_hazard, compute_exposures, sample_baseline, tail_rate};
use fidux_core::rng::substream;
use fidux_core::{build_risk_structure, load_dataset_path, CsvSchema};

fn example() -> fidux_core::RiskStructure {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/example6.csv");
    build_risk_structure(&load_dataset_path(path, &CsvSchema::default()).unwrap()).unwrap()
}

#[test]
fn rate_means_match_inverse_exposures() {
    let risk = example();
    let beta = [0.4, -0.3];
    let l = compute_exposures(&risk, &beta);
    let k = l.len() - 1;
    let mut rng = substream(501, 0);
    let draws = 100_000;
    let mut sums = vec![0.0; k + 1];
    for _ in 0..draws {
        let s = sample_baseline(&risk, &beta, &mut rng).unwrap();
        for (acc, r) in sums.iter_mut().zip(&s.rates) {
            *acc += r;
        }
    }
    for j in 0..k {
        let mean = sums[j] / draws as f64;
        assert!((mean * l[j] - 1.0).abs() < 0.01, "interval {j}");
    }
    let tail = sums[k] / draws as f64;
    assert!((tail * tail_rate(&l) - 1.0).abs() < 0.01);
}

#[test]
fn tail_uses_the_larger_exposure_rule() {
    let risk = example();
    let l = compute_exposures(&risk, &[0.0, 0.0]);
    let k = l.len() - 1;
    assert_eq!(tail_rate(&l), l[k - 1].max(2.0 * l[k]));
    let s = sample_baseline(&risk, &[0.0, 0.0], &mut substream(502, 0)).unwrap();
    assert_eq!(s.rates[k], -s.uniforms[k].ln() / tail_rate(&l));
}

#[test]
fn median_cumulative_hazard_tracks_breslow() {
    // with rate λ_k = Exp(1)/l_k the mean jump over an interval is |d_k|·(length)/l_k,
    // so the fiducial cumulative hazard should sit near Breslow at each failure time
    let risk = example();
    let beta = [0.2, 0.1];
    let mut rng = substream(503, 0);
    let draws = 20_000;
    let t_last = *risk.failure_times().last().unwrap();
    let mean = (0..draws)
        .map(|_| sample_baseline(&risk, &beta, &mut rng).unwrap().cumulative_hazard(t_last))
        .sum::<f64>()
        / draws as f64;
    let breslow = breslow_cumulative_hazard(&risk, &beta, t_last);
    assert!(mean > 0.0 && breslow > 0.0);
    assert!((mean / breslow).ln().abs() < 1.0, "fiducial {mean} vs Breslow {breslow}");
}
