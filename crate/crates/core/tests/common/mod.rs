#![allow(dead_code)]

use fidux_core::rng::{open_unit, FiduxRng};
use fidux_core::{build_risk_structure, RiskStructure, SubjectRecord, SurvivalDataset};
use rand::Rng;

pub fn risk_from(rows: &[(f64, bool, Vec<f64>)]) -> RiskStructure {
    let recs = rows.iter().map(|(t, d, x)| SubjectRecord::new(x.clone(), *t, *d)).collect();
    build_risk_structure(&SurvivalDataset::new(recs, None).unwrap()).unwrap()
}

/// Random dataset with at least one failure; times rounded to one decimal
/// when `ties` is set so that tie groups occur.
pub fn random_risk(rng: &mut FiduxRng, n: usize, p: usize, ties: bool) -> RiskStructure {
    loop {
        let rows: Vec<(f64, bool, Vec<f64>)> = (0..n)
            .map(|_| {
                let mut t = -open_unit(rng).ln() + 0.05;
                if ties {
                    t = (t * 10.0).round() / 10.0;
                }
                let x = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
                (t, rng.random::<f64>() < 0.7, x)
            })
            .collect();
        if rows.iter().any(|r| r.1) {
            return risk_from(&rows);
        }
    }
}

/// Maximizer of `f` over `[lo, hi]^2` by a dense grid refined three times.
pub fn grid_argmax_2d(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let (mut cx, mut cy, mut half) = (0.5 * (lo + hi), 0.5 * (lo + hi), 0.5 * (hi - lo));
    for _ in 0..4 {
        let steps = 240;
        let h = 2.0 * half / steps as f64;
        let mut best = (f64::NEG_INFINITY, cx, cy);
        for i in 0..=steps {
            for j in 0..=steps {
                let (x, y) = (cx - half + h * i as f64, cy - half + h * j as f64);
                let v = f(x, y);
                if v > best.0 {
                    best = (v, x, y);
                }
            }
        }
        cx = best.1;
        cy = best.2;
        half = 4.0 * h;
    }
    (cx, cy)
}
