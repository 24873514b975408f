mod common;

use common::*;
use ssmkit::approx::ApproxOptions;
use ssmkit::filter::filter;
use ssmkit::likelihood::{diffuse_columns_differ, loglik_gaussian, loglik_nongaussian, reml_variance, LogLikMethod};
use ssmkit::{Distribution, Matrix, Observations, StateSpaceModel, SystemMatrix};

#[test]
fn local_level_hand_value() {
    let ll = loglik_gaussian(&filter(&local_level_fixture()).unwrap());
    let expected = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 3f64.ln() + 0.25 / 3.0);
    assert!((ll.value - expected).abs() < 1e-12);
    assert!((ll.value + 1.50991).abs() < 1e-5);
    assert_eq!(ll.method, LogLikMethod::Diffuse);
}

#[test]
fn all_missing_is_zero() {
    let ll = loglik_gaussian(&filter(&local_level(&[None, None, None], 1.0, 1.0)).unwrap());
    assert_eq!(ll.value, 0.0);
}

#[test]
fn gaussian_models_bypass_simulation() {
    let model = local_level_fixture();
    let a = loglik_gaussian(&filter(&model).unwrap());
    for nsim in [0, 10] {
        let b = loglik_nongaussian(&model, nsim, 1, true, &ApproxOptions::default()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}

fn constant_mean(y: &[f64]) -> StateSpaceModel<f64> {
    local_level(&y.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 1.0, 0.0)
}

#[test]
fn reml_variance_of_constant_mean() {
    let s = reml_variance(&filter(&constant_mean(&[1.0, 2.0, 3.0])).unwrap()).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    let s = reml_variance(&filter(&constant_mean(&[4.0, 4.0, 4.0])).unwrap()).unwrap();
    assert!(s.abs() < 1e-12);
    assert!(reml_variance(&filter(&constant_mean(&[4.0])).unwrap()).is_err());
}

#[test]
fn reml_variance_of_regression() {
    let mut r = rng(5);
    let n = 12;
    let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let y: Vec<f64> = x.iter().map(|&v| 1.0 + 2.0 * v + 0.3 * normal(&mut r)).collect();
    let z = SystemMatrix::time_varying(x.iter().map(|&v| Matrix::from_rows(&[&[1.0, v]])).collect());
    let model = StateSpaceModel::new(
        Observations::from_series(&y),
        z,
        SystemMatrix::constant(Matrix::identity(2)),
        SystemMatrix::constant(Matrix::zeros(2, 1)),
        SystemMatrix::constant(Matrix::zeros(1, 1)),
    )
    .with_obs_cov(SystemMatrix::constant(Matrix::scalar(1.0)))
    .with_init(vec![0.0; 2], Matrix::zeros(2, 2), Matrix::identity(2));
    let s = reml_variance(&filter(&model).unwrap()).unwrap();
    // normal equations
    let (sx, sxx, sy, sxy) = x.iter().zip(&y).fold((0.0, 0.0, 0.0, 0.0), |a, (&u, &v)| (a.0 + u, a.1 + u * u, a.2 + v, a.3 + u * v));
    let nf = n as f64;
    let b = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    let a = (sy - b * sx) / nf;
    let rss: f64 = x.iter().zip(&y).map(|(&u, &v)| (v - a - b * u).powi(2)).sum();
    assert!((s - rss / (nf - 2.0)).abs() < 1e-10);
}

fn poisson_level(y: &[f64]) -> StateSpaceModel<f64> {
    local_level(&y.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 0.0, 0.05).with_distribution(vec![Distribution::Poisson])
}

fn count_series(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut level: f64 = 1.5;
    (0..n)
        .map(|_| {
            level += 0.2 * normal(&mut r);
            use rand_distr::Distribution as _;
            rand_distr::Poisson::new(level.exp()).unwrap().sample(&mut r)
        })
        .collect()
}

#[test]
fn importance_estimate_is_consistent_with_the_mode_estimate() {
    let model = poisson_level(&count_series(1, 40));
    let opts = ApproxOptions::default();
    let n0 = loglik_nongaussian(&model, 0, 1, true, &opts).unwrap();
    let is = loglik_nongaussian(&model, 1000, 1, true, &opts).unwrap();
    assert_eq!(n0.method, LogLikMethod::ApproxN0);
    assert_eq!(is.method, LogLikMethod::Importance);
    assert!(is.mc_se > 0.0);
    // the mode estimate is biased only by the small non-Gaussianity
    assert!((is.value - n0.value).abs() < 0.5, "{} vs {}", is.value, n0.value);
    let repeat = loglik_nongaussian(&model, 1000, 1, true, &opts).unwrap();
    assert_eq!(is.value.to_bits(), repeat.value.to_bits());
}

#[test]
fn monte_carlo_error_shrinks_with_draws() {
    let model = poisson_level(&count_series(2, 30));
    let opts = ApproxOptions::default();
    let run = |nsim: usize| -> (f64, f64) {
        let vals: Vec<(f64, f64)> = (0..20)
            .map(|s| {
                let l = loglik_nongaussian(&model, nsim, 100 + s, false, &opts).unwrap();
                (l.value, l.mc_se)
            })
            .collect();
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / 20.0;
        let sd = (vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        (sd, vals.iter().map(|v| v.1).sum::<f64>() / 20.0)
    };
    let (sd1, se1) = run(200);
    let (sd2, se2) = run(400);
    let ratio = se1 / se2;
    assert!(ratio > 2f64.sqrt() / 1.6 && ratio < 2f64.sqrt() * 1.6, "se ratio {ratio}");
    assert!(se1 / sd1 > 1.0 / 1.6 && se1 / sd1 < 1.6, "se {se1} vs spread {sd1}");
    assert!(se2 / sd2 > 1.0 / 1.6 && se2 / sd2 < 1.6, "se {se2} vs spread {sd2}");
}

fn trend_model(y: &[f64], h: f64, q: f64, scale: f64) -> StateSpaceModel<f64> {
    StateSpaceModel::new(
        Observations::from_series(y),
        SystemMatrix::constant(Matrix::from_rows(&[&[1.0, 0.0]])),
        SystemMatrix::constant(Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]])),
        SystemMatrix::constant(Matrix::identity(2)),
        SystemMatrix::constant(Matrix::from_diag(&[q, q / 10.0])),
    )
    .with_obs_cov(SystemMatrix::constant(Matrix::scalar(h)))
    .with_init(vec![0.0; 2], Matrix::zeros(2, 2), Matrix::identity(2).scale(scale))
}

#[test]
fn diffuse_scale_does_not_move_the_maximum() {
    let mut r = rng(8);
    let y: Vec<f64> = (0..25).map(|t| 0.3 * t as f64 + normal(&mut r)).collect();
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut shift = None;
    let mut best = [(f64::NEG_INFINITY, 0, 0); 2];
    for (a, &h) in grid.iter().enumerate() {
        for (b, &q) in grid.iter().enumerate() {
            let l1 = filter(&trend_model(&y, h, q, 1.0)).unwrap().loglik();
            let l5 = filter(&trend_model(&y, h, q, 5.0)).unwrap().loglik();
            let s = *shift.get_or_insert(l5 - l1);
            assert!((l5 - l1 - s).abs() < 1e-8);
            for (k, l) in [l1, l5].into_iter().enumerate() {
                if l > best[k].0 {
                    best[k] = (l, a, b);
                }
            }
        }
    }
    assert_eq!((best[0].1, best[0].2), (best[1].1, best[1].2));
}

#[test]
fn detects_parameters_on_diffuse_columns() {
    let a = trend_model(&[1.0, 2.0], 1.0, 1.0, 1.0);
    let mut b = a.clone();
    assert!(!diffuse_columns_differ(&a, &b));
    b.transition = SystemMatrix::constant(Matrix::from_rows(&[&[1.0, 0.9], &[0.0, 1.0]]));
    assert!(diffuse_columns_differ(&a, &b));
}

#[test]
fn count_loglik_stays_below_the_saturated_fit() {
    let y: [f64; 8] = [3.0, 0.0, 7.0, 12.0, 5.0, 1.0, 0.0, 9.0];
    // sum of log p(y | lambda = y) under Poisson
    let ln_fact = |k: f64| (1..=k as u64).map(|i| (i as f64).ln()).sum::<f64>();
    let bound: f64 = y.iter().map(|&k| if k > 0.0 { k * k.ln() - k - ln_fact(k) } else { 0.0 }).sum();
    for (q, p1) in [(1e-4, 1.0), (0.5, 1.0), (50.0, 10.0), (1e6, 1e6)] {
        let one = |v: f64| SystemMatrix::constant(Matrix::scalar(v));
        let model = StateSpaceModel::new(Observations::from_series(&y), one(1.0), one(1.0), one(1.0), one(q))
            .with_init(vec![0.0], Matrix::scalar(p1), Matrix::scalar(0.0))
            .with_distribution(vec![Distribution::Poisson]);
        let ll = loglik_nongaussian(&model, 0, 1, true, &ApproxOptions::default()).unwrap();
        assert!(ll.value <= bound, "q={q}: {} above {bound}", ll.value);
    }
}
