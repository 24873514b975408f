mod common;

use common::*;
use ssmkit::approx::ApproxOptions;
use ssmkit::builders::{
    assemble, build_arima, build_regression, build_trend, estimate_arima_coefficients, AssembledModel, Cov, ParamBlock, ParamKind, Target,
};
use ssmkit::filter::filter;
use ssmkit::inference::{
    component_signal, fit, predict, residuals, signal, FitOptions, Horizon, Optimizer, ResidualKind,
};
use ssmkit::simulation::IntervalKind;
use ssmkit::smoother::smooth_states;
use ssmkit::{Distribution, Matrix, Observations};

/// Random walk plus noise with drift.
fn trend_data(seed: u64, n: usize, h: f64, q: f64, slope: f64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut level = 50.0;
    (0..n)
        .map(|_| {
            let y = level + h.sqrt() * normal(&mut r);
            level += slope + q.sqrt() * normal(&mut r);
            y
        })
        .collect()
}

fn structural(y: &[f64]) -> AssembledModel<f64> {
    let trend = build_trend(2, vec![Cov::unknown(1), Cov::zero(1)], vec![0], false).unwrap();
    assemble(Observations::from_series(y), vec![trend], vec![Distribution::Gaussian], None, Cov::unknown(1)).unwrap()
}

fn arima_drift(y: &[f64]) -> AssembledModel<f64> {
    let n = y.len();
    let drift = Matrix::from_vec(n, 1, (1..=n).map(|t| t as f64).collect());
    let drift = build_regression(vec![drift], vec![0], false, None, None, vec!["drift".into()]).unwrap().named("drift");
    let arima = build_arima(vec![], vec![0.0], 1, Cov::unknown(1), true, vec![0], false).unwrap();
    let arima = estimate_arima_coefficients(arima, false, true).unwrap();
    assemble(Observations::from_series(y), vec![drift, arima], vec![Distribution::Gaussian], None, Cov::zero(1)).unwrap()
}

#[test]
fn structural_and_arima_fits_agree() {
    let y = trend_data(3, 60, 9.5, 4.3, 0.8);
    let a = fit(&structural(&y), &FitOptions::default()).unwrap();
    let b = fit(&arima_drift(&y), &FitOptions::default()).unwrap();
    assert!(a.converged && b.converged);
    assert!((a.loglik.value - b.loglik.value).abs() < 1e-3, "{} vs {}", a.loglik.value, b.loglik.value);
    // slope of the trend equals the drift coefficient
    assert!((a.final_state[1] - b.final_state[0]).abs() < 1e-3);
    assert!((a.final_state_sd[1] - b.final_state_sd[0]).abs() < 1e-3);
    assert!(a.loglik.value >= a.initial_loglik - 1e-9);
    // MA coefficient implied by the structural parameters
    // MA(1) implied by the structural parameters; a root and its inverse
    // give the same likelihood
    let (q, h) = (a.natural[0], a.natural[1]);
    let (ma, sigma2) = (b.natural[0], b.natural[1]);
    let rho = -h / (q + 2.0 * h);
    let implied = (1.0 - (1.0 - 4.0 * rho * rho).sqrt()) / (2.0 * rho);
    let invertible = if ma.abs() > 1.0 { 1.0 / ma } else { ma };
    assert!((invertible - implied).abs() < 1e-3, "{ma} vs {implied}");
    assert!((ma * sigma2 + h).abs() < 1e-2 * h);
}

#[test]
fn refit_from_optimum_is_stable_and_optimizers_agree() {
    let y = trend_data(4, 80, 2.0, 0.5, 0.0);
    let model = structural(&y);
    let first = fit(&model, &FitOptions::default()).unwrap();
    let again = fit(&model, &FitOptions { starts: vec![first.params.clone()], ..FitOptions::default() }).unwrap();
    assert!((again.loglik.value - first.loglik.value).abs() < 1e-6);
    let bfgs = fit(&model, &FitOptions { optimizer: Optimizer::Bfgs, ..FitOptions::default() }).unwrap();
    assert!((bfgs.loglik.value - first.loglik.value).abs() < 1e-5);
    let multi = fit(&model, &FitOptions { starts: vec![vec![3.0, -3.0], vec![-2.0, 2.0]], ..FitOptions::default() }).unwrap();
    assert!((multi.loglik.value - first.loglik.value).abs() < 1e-6);
}

#[test]
fn fixed_model_skips_optimization() {
    let y = trend_data(5, 20, 1.0, 1.0, 0.0);
    let trend = build_trend(1, vec![Cov::variance(1.0)], vec![0], false).unwrap();
    let m = assemble(Observations::from_series(&y), vec![trend], vec![Distribution::Gaussian], None, Cov::variance(1.0)).unwrap();
    let f = fit(&m, &FitOptions::default()).unwrap();
    assert!(f.converged && f.params.is_empty());
    assert_eq!(f.loglik.value, filter(&m.model).unwrap().loglik());
}

#[test]
fn random_intercept_matches_anova() {
    // groups are series, replicates are time points
    let (groups, reps) = (40, 6);
    let mut r = rng(21);
    let effects: Vec<f64> = (0..groups).map(|_| 1.5 * normal(&mut r)).collect();
    let rows: Vec<Vec<f64>> = (0..reps).map(|_| effects.iter().map(|b| 10.0 + b + normal(&mut r)).collect()).collect();
    let ones = Matrix::from_vec(reps, 1, vec![1.0; reps]);
    let index: Vec<usize> = (0..groups).collect();
    let fixed = build_regression(vec![ones.clone()], index.clone(), true, None, None, vec!["mu".into()]).unwrap().named("fixed");
    let random = build_regression(vec![ones], index, false, None, Some(Cov::variance(1.0)), vec!["b".into()]).unwrap().named("random");
    let mut m = assemble(
        Observations::from_rows(&rows),
        vec![fixed, random],
        vec![Distribution::Gaussian; groups],
        None,
        Cov::Known(Matrix::identity(groups)),
    )
    .unwrap();
    let tied = |name: &str, target: Target, offsets: Vec<usize>| ParamBlock {
        name: name.into(),
        kind: ParamKind::Diagonal {
            dim: 1,
            free: vec![0],
            targets: offsets.into_iter().map(|o| (target, o)).collect(),
        },
    };
    m.params = vec![tied("sigma2.e", Target::H, (0..groups).collect()), tied("sigma2.b", Target::P1, (1..=groups).collect())];
    let f = fit(&m, &FitOptions::default()).unwrap();
    let gm: Vec<f64> = (0..groups).map(|g| rows.iter().map(|r| r[g]).sum::<f64>() / reps as f64).collect();
    let grand = gm.iter().sum::<f64>() / groups as f64;
    let msb = reps as f64 * gm.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (groups - 1) as f64;
    let msw = rows.iter().flat_map(|r| r.iter().zip(&gm).map(|(y, m)| (y - m).powi(2))).sum::<f64>() / (groups * (reps - 1)) as f64;
    let sb = (msb - msw) / reps as f64;
    assert!((f.natural[0] / msw - 1.0).abs() < 0.02, "{} vs {msw}", f.natural[0]);
    assert!((f.natural[1] / sb - 1.0).abs() < 0.02, "{} vs {sb}", f.natural[1]);
}

#[test]
fn poisson_two_stage_fit() {
    let mut r = rng(6);
    let mut level: f64 = 1.0;
    let y: Vec<f64> = (0..60)
        .map(|_| {
            level += 0.15 * normal(&mut r);
            use rand_distr::Distribution as _;
            rand_distr::Poisson::new(level.exp()).unwrap().sample(&mut r)
        })
        .collect();
    let trend = build_trend(1, vec![Cov::unknown(1)], vec![0], false).unwrap();
    let m = assemble(Observations::from_series(&y), vec![trend], vec![Distribution::Poisson], None, Cov::zero(1)).unwrap();
    let f0 = fit(&m, &FitOptions::default()).unwrap();
    let f1 = fit(&m, &FitOptions { nsim: 50, seed: 3, ..FitOptions::default() }).unwrap();
    assert!(f0.converged && f1.converged);
    assert!(f1.loglik.mc_se > 0.0);
    assert!((f0.natural[0].ln() - f1.natural[0].ln()).abs() < 0.5);
    assert!(f1.loglik.value >= f1.initial_loglik - 1e-9);
}

#[test]
fn univariate_residual_kinds_coincide() {
    let y = trend_data(7, 40, 1.0, 0.3, 0.0);
    let mut model = local_level(&y.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 1.0, 0.3);
    model.y.set(10, 0, None);
    let opts = ApproxOptions::default();
    let rec = residuals(&model, ResidualKind::Recursive, 0, 1, &opts).unwrap();
    let chol = residuals(&model, ResidualKind::Cholesky, 0, 1, &opts).unwrap();
    let marg = residuals(&model, ResidualKind::Marginal, 0, 1, &opts).unwrap();
    assert!(rec.values[0][0].is_none());
    assert!(rec.values[10][0].is_none());
    for t in 1..40 {
        match (rec.values[t][0], chol.values[t][0], marg.values[t][0]) {
            (Some(a), Some(b), Some(c)) => assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12),
            (None, None, None) => assert_eq!(t, 10),
            other => panic!("t={t}: {other:?}"),
        }
    }
    let aux = residuals(&model, ResidualKind::Auxiliary, 0, 1, &opts).unwrap();
    assert_eq!(aux.names.len(), 2);
    assert!(aux.values[10][0].is_none() && aux.values[10][1].is_some());
}

#[test]
fn quadratic_residuals_ignore_series_order() {
    let mut r = rng(9);
    for _ in 0..10 {
        let model = random_model(&mut r, &RandomSpec { diffuse: true, full_h: true, missing: 0.1, time_varying: false });
        if model.p() < 2 {
            continue;
        }
        let mut swapped = model.clone();
        let perm = [1, 0];
        let rows: Vec<Vec<Option<f64>>> = (0..model.n()).map(|t| perm.iter().map(|&i| model.y.get(t, i)).collect()).collect();
        swapped.y = Observations::new(model.n(), 2, rows.concat());
        let all: Vec<usize> = (0..model.m()).collect();
        swapped.loadings = model.loadings.map(|z| z.select(&perm, &all));
        swapped.obs_cov = model.obs_cov.map(|h| h.select(&perm, &perm));
        let opts = ApproxOptions::default();
        let a = residuals(&model, ResidualKind::Quadratic, 0, 1, &opts).unwrap();
        let b = residuals(&swapped, ResidualKind::Quadratic, 0, 1, &opts).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            match (x[0], y[0]) {
                (Some(u), Some(v)) => assert!((u - v).abs() < 1e-10 * (1.0 + u.abs())),
                (u, v) => assert_eq!(u.is_some(), v.is_some()),
            }
        }
    }
}

#[test]
fn recursive_residuals_are_white() {
    let n = 500;
    let mut inside = 0;
    for seed in 0..50 {
        let y = trend_data(100 + seed, n, 1.0, 0.2, 0.0);
        let model = local_level(&y.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 1.0, 0.2);
        let res = residuals(&model, ResidualKind::Recursive, 0, 1, &ApproxOptions::default()).unwrap();
        let e: Vec<f64> = res.values.iter().filter_map(|r| r[0]).collect();
        let m = e.iter().sum::<f64>() / e.len() as f64;
        let c0: f64 = e.iter().map(|x| (x - m).powi(2)).sum();
        let c1: f64 = e.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        if (c1 / c0).abs() <= 2.0 / (n as f64).sqrt() {
            inside += 1;
        }
    }
    assert!(inside >= 45, "{inside} of 50");
}

#[test]
fn gaussian_prediction_intervals() {
    let y = trend_data(8, 30, 1.0, 0.5, 0.0);
    let model = local_level(&y.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 1.0, 0.5);
    let opts = ApproxOptions::default();
    let pi = predict(&model, &Horizon::steps(3), IntervalKind::Prediction, 0.95, 0, 1, &opts).unwrap();
    let ci = predict(&model, &Horizon::steps(3), IntervalKind::Confidence, 0.95, 0, 1, &opts).unwrap();
    let fr = filter(&model).unwrap();
    assert_eq!(pi.start, 30);
    let f = fr.p_star[30][(0, 0)] + 1.0;
    assert!((pi.point[0][0] - fr.a[30][0]).abs() < 1e-10);
    assert!((pi.upper[0][0] - pi.point[0][0] - 1.959963984540054 * f.sqrt()).abs() < 1e-8);
    for t in 0..3 {
        assert!(ci.upper[t][0] - ci.lower[t][0] <= pi.upper[t][0] - pi.lower[t][0]);
    }
    let narrow = predict(&model, &Horizon::steps(3), IntervalKind::Prediction, 0.5, 0, 1, &opts).unwrap();
    assert!(narrow.upper[2][0] - narrow.lower[2][0] < pi.upper[2][0] - pi.lower[2][0]);
    let insample = predict(&model, &Horizon::steps(0), IntervalKind::Confidence, 0.95, 0, 1, &opts).unwrap();
    assert_eq!(insample.point.len(), 30);
}

#[test]
fn nongaussian_horizon_needs_exposure() {
    let model = local_level(&[Some(2.0), Some(3.0), Some(1.0)], 0.0, 0.1).with_distribution(vec![Distribution::Poisson]);
    let opts = ApproxOptions::default();
    assert!(predict(&model, &Horizon::steps(2), IntervalKind::Prediction, 0.9, 100, 1, &opts).is_err());
    let h = Horizon { obs_param: Some(Matrix::from_vec(2, 1, vec![1.0, 1.0])), ..Horizon::steps(2) };
    let f = predict(&model, &h, IntervalKind::Prediction, 0.9, 200, 1, &opts).unwrap();
    assert!(f.lower[1][0] <= f.point[1][0] && f.point[1][0] <= f.upper[1][0]);
    let g = predict(&model, &h, IntervalKind::Prediction, 0.9, 200, 1, &opts).unwrap();
    assert_eq!(f.upper, g.upper);
}

#[test]
fn signal_subsets() {
    let y = trend_data(9, 25, 1.0, 0.5, 0.3);
    let m = structural(&y);
    let fr = filter(&m.model).unwrap();
    let sm = smooth_states(&fr, &m.model).unwrap();
    let all = signal(&m.model, &sm, &[0, 1]).unwrap();
    for t in 0..25 {
        assert!((all.mean[t][0] - sm.thetahat[t][0]).abs() < 1e-12);
        assert!((all.var[t][0] - sm.v_theta[t][0]).abs() < 1e-12);
    }
    let none = signal(&m.model, &sm, &[]).unwrap();
    assert!(none.mean.iter().all(|r| r[0] == 0.0) && none.var.iter().all(|r| r[0] == 0.0));
    let trend = component_signal(&m, &m.model, &sm, &["trend"]).unwrap();
    assert_eq!(trend.mean, all.mean);
    assert!(component_signal(&m, &m.model, &sm, &["nothing"]).is_err());
}
