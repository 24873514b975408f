mod common;

use common::*;
use rand::Rng;
use ssmkit::builders::*;
use ssmkit::filter::filter;
use ssmkit::{Distribution, Matrix, Observations, SystemMatrix};

fn y1(n: usize) -> Observations<f64> {
    Observations::from_series(&(0..n).map(|t| (t as f64 * 0.7).sin() + 0.1 * t as f64).collect::<Vec<_>>())
}

fn one(spec: ComponentSpec<f64>, n: usize) -> AssembledModel<f64> {
    assemble(y1(n), vec![spec], vec![Distribution::Gaussian], None, Cov::variance(1.0)).unwrap()
}

#[test]
fn local_linear_trend_matrices() {
    let a = one(build_trend(2, vec![Cov::unknown(1), Cov::zero(1)], vec![0], false).unwrap(), 10);
    let m = &a.model;
    assert_eq!(m.m(), 2);
    assert_eq!(*m.transition.at(0), Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]));
    assert_eq!(*m.selection.at(0), Matrix::identity(2));
    assert_eq!(*m.state_cov.at(0), Matrix::from_diag(&[1.0, 0.0]));
    assert_eq!(m.init_diffuse, Matrix::identity(2));
    assert_eq!(m.state_names, vec!["level", "slope"]);
    assert_eq!(a.param_names(), vec!["Q.trend.level"]);

    let manual = build_custom(
        SystemMatrix::constant(Matrix::from_rows(&[&[1.0, 0.0]])),
        SystemMatrix::constant(Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]])),
        SystemMatrix::constant(Matrix::from_rows(&[&[1.0], &[0.0]])),
        Cov::variance(0.3),
        None,
        CustomP1::Known(Matrix::zeros(2, 2)),
        Some(Matrix::identity(2)),
        vec![0],
    )
    .unwrap();
    let b = one(manual, 10);
    let fitted = a.update(&[0.3f64.ln()]).unwrap();
    let l1 = filter(&fitted).unwrap().loglik();
    let l2 = filter(&b.model).unwrap().loglik();
    assert!((l1 - l2).abs() < 1e-12);
}

#[test]
fn trend_degree_one_zero_variance_and_errors() {
    let a = one(build_trend(1, vec![Cov::zero(1)], vec![0], false).unwrap(), 5);
    assert_eq!(a.model.m(), 1);
    assert_eq!(a.model.state_cov.at(0)[(0, 0)], 0.0);
    assert_eq!(a.n_params(), 0);
    assert!(build_trend::<f64>(0, vec![], vec![0], false).is_err());
}

#[test]
fn distinct_bivariate_trend() {
    let y = Observations::from_rows(&[vec![1.0, 2.0], vec![1.5, 2.5], vec![2.0, 2.7]]);
    let spec = build_trend(2, vec![Cov::Full(2), Cov::zero(2)], vec![0, 1], false).unwrap();
    let a = assemble(y, vec![spec], vec![Distribution::Gaussian; 2], None, Cov::unknown(2)).unwrap();
    assert_eq!(a.model.m(), 4);
    assert_eq!(a.model.state_names, vec!["level.1", "level.2", "slope.1", "slope.2"]);
    assert_eq!(a.n_params(), 3 + 2);
    let th = [0.1, -0.2, 0.5, 0.0, 0.0];
    let m = a.update(&th).unwrap();
    // U = [[e^.1, .5],[0, e^-.2]] -> U^T U
    let u = Matrix::from_rows(&[&[0.1f64.exp(), 0.5], &[0.0, (-0.2f64).exp()]]);
    let s = u.t_matmul(&u);
    assert!(m.state_cov.at(0).block(0, 0, 2, 2).max_abs_diff(&s) < 1e-14);
    assert!(m.state_cov.at(0)[(0, 1)] != 0.0);
    assert_eq!(m.loadings.at(0)[(0, 0)], 1.0);
    assert_eq!(m.loadings.at(0)[(1, 1)], 1.0);
    assert_eq!(m.loadings.at(0)[(0, 1)], 0.0);
    let back = a.initial_params();
    let m2 = a.update(&a.natural_params(&th).iter().map(|_| 0.0).collect::<Vec<_>>()).unwrap();
    assert!(m2.state_cov.at(0).block(0, 0, 2, 2).max_abs_diff(&Matrix::identity(2)) < 1e-14);
    assert_eq!(back.len(), 5);
}

#[test]
fn dummy_seasonal_recursion() {
    let a = one(build_seasonal(4, false, Cov::zero(1), vec![0], false).unwrap(), 8);
    let t = a.model.transition.at(0);
    assert_eq!(*t, Matrix::from_rows(&[&[-1.0, -1.0, -1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]));
    // gamma_{t+1} = -(gamma_t + gamma_{t-1} + gamma_{t-2}): any 4 consecutive sum to zero
    let mut s = vec![0.3, -1.2, 0.5];
    let mut path = vec![0.5, -1.2, 0.3];
    for _ in 0..12 {
        s = t.mul_vec(&s);
        path.push(s[0]);
    }
    for w in path.windows(4) {
        assert!(w.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn trigonometric_seasonal() {
    let a = one(build_seasonal(4, true, Cov::zero(1), vec![0], false).unwrap(), 8);
    assert_eq!(a.model.m(), 3);
    let t = a.model.transition.at(0);
    assert!((t[(2, 2)] + 1.0).abs() < 1e-15);
    let z = a.model.loadings.at(0).row(0).to_vec();
    let mut s = vec![0.7, -0.4, 1.1];
    let mut sig = Vec::new();
    for _ in 0..12 {
        sig.push(z.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>());
        s = t.mul_vec(&s);
    }
    for i in 0..8 {
        assert!((sig[i] - sig[i + 4]).abs() < 1e-12);
    }
    assert!(sig[..4].iter().sum::<f64>().abs() < 1e-12);

    let b = one(build_seasonal(2, true, Cov::zero(1), vec![0], false).unwrap(), 4);
    assert_eq!(b.model.m(), 1);
    assert!((b.model.transition.at(0)[(0, 0)] + 1.0).abs() < 1e-15);
    for s in [5, 6, 7, 12] {
        let c = one(build_seasonal(s, true, Cov::variance(0.2), vec![0], false).unwrap(), 4);
        assert_eq!(c.model.m(), s - 1);
        assert_eq!(c.model.state_cov.at(0), &Matrix::identity(s - 1).scale(0.2));
    }
    assert!(build_seasonal::<f64>(1, true, Cov::zero(1), vec![0], false).is_err());
}

#[test]
fn cycle_rotation() {
    let a = one(build_cycle(4.0, Cov::zero(1), vec![0], false).unwrap(), 4);
    let t = a.model.transition.at(0);
    let t4 = t.matmul(t).matmul(t).matmul(t);
    assert!(t4.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    let mut s: Vec<f64> = vec![1.0, 0.0];
    let expect = [1.0, 0.0, -1.0, 0.0, 1.0];
    for e in expect {
        assert!((s[0] - e).abs() < 1e-14);
        s = t.mul_vec(&s);
    }
    let b = one(build_cycle(12.0, Cov::variance(0.5), vec![0], false).unwrap(), 4);
    let t = b.model.transition.at(0);
    assert!((t[(0, 0)] - 3f64.sqrt() / 2.0).abs() < 1e-15);
    assert!((t[(0, 1)] - 0.5).abs() < 1e-15);
    assert_eq!(*b.model.state_cov.at(0), Matrix::from_diag(&[0.5, 0.5]));
    assert!(build_cycle(2.0, Cov::zero(1), vec![0], false).is_err());
}

#[test]
fn arima_initial_covariances() {
    let a = one(build_arima(vec![0.5], vec![], 0, Cov::variance(1.0), true, vec![0], false).unwrap(), 5);
    let geom: f64 = (0..200).map(|j| 0.25f64.powi(j)).sum();
    assert!((a.model.init_cov[(0, 0)] - geom).abs() < 1e-12);
    assert!((a.model.init_cov[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);

    let b = one(build_arima(vec![], vec![0.0], 1, Cov::variance(1.0), true, vec![0], false).unwrap(), 5);
    assert_eq!(b.model.m(), 3);
    assert_eq!(b.model.init_diffuse, Matrix::from_diag(&[1.0, 0.0, 0.0]));
    assert_eq!(b.model.state_names, vec!["arima1", "arima2", "arima3"]);
    assert_eq!(b.model.loadings.at(0).row(0), &[1.0, 1.0, 0.0]);

    let c = one(build_arima(vec![], vec![0.3], 0, Cov::variance(1.0), true, vec![0], false).unwrap(), 5);
    assert_eq!(c.model.selection.at(0).col(0), vec![1.0, 0.3]);
    // MA(1) autocovariances: gamma0 = 1 + theta^2, gamma1 = theta; state 2 is theta*eta
    let s = &c.model.init_cov;
    assert!((s[(0, 0)] - 1.09).abs() < 1e-12);
    assert!((s[(0, 1)] - 0.3).abs() < 1e-12);
    assert!((s[(1, 1)] - 0.09).abs() < 1e-12);

    assert!(matches!(
        build_arima(vec![1.2], vec![], 0, Cov::variance(1.0), true, vec![0], false),
        Err(ssmkit::Error::Estimation(_))
    ));
    let d = one(build_arima(vec![1.2], vec![], 0, Cov::variance(1.0), false, vec![0], false).unwrap(), 5);
    assert_eq!(d.model.init_diffuse, Matrix::identity(1));
}

#[test]
fn arima_stationary_solve_residual() {
    let mut r = rng(42);
    for _ in 0..100 {
        let p = r.random_range(0..=3);
        let q = r.random_range(0..=3);
        let pacf: Vec<f64> = (0..p).map(|_| r.random_range(-0.95..0.95)).collect();
        let ar = pacf_to_ar(&pacf);
        let ma: Vec<f64> = (0..q).map(|_| r.random_range(-1.5..1.5)).collect();
        let (_, t, rr) = arima_matrices(&ar, &ma, 0);
        let s = stationary_cov(&t, &rr).unwrap();
        let m = t.rows();
        let lhs = Matrix::identity(m * m).sub(&t.kron(&t));
        let res: Vec<f64> = lhs.mul_vec(&s.vec_cols());
        let rhs = rr.matmul_t(&rr).vec_cols();
        let err = res.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "residual {err}");
        let back = ar_to_pacf(&ar).unwrap();
        for (a, b) in back.iter().zip(&pacf) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn arima_update_rebuilds_block() {
    let spec = estimate_arima_coefficients(
        build_arima(vec![0.2], vec![0.1], 1, Cov::unknown(1), true, vec![0], false).unwrap(),
        true,
        true,
    )
    .unwrap();
    let a = one(spec, 12);
    assert_eq!(a.param_names(), vec!["arima.ar1", "arima.ma1", "Q.arima"]);
    let th = [0.5f64.atanh(), -0.4, 2.0f64.ln()];
    let m = a.update(&th).unwrap();
    let nat = a.natural_params(&th);
    for (v, e) in nat.iter().zip([0.5, -0.4, 2.0]) {
        assert!((v - e).abs() < 1e-14);
    }
    let direct = one(build_arima(vec![0.5], vec![-0.4], 1, Cov::variance(2.0), true, vec![0], false).unwrap(), 12);
    assert!(m.transition.at(0).max_abs_diff(direct.model.transition.at(0)) < 1e-14);
    assert!(m.selection.at(0).max_abs_diff(direct.model.selection.at(0)) < 1e-14);
    assert!(m.init_cov.max_abs_diff(&direct.model.init_cov) < 1e-12);
    let theta0 = a.initial_params();
    assert!((theta0[0] - 0.2f64.atanh()).abs() < 1e-12);
}

#[test]
fn regression_blocks() {
    let n = 6;
    let x = Matrix::from_vec(n, 2, (0..n).flat_map(|t| [1.0, (t + 1) as f64]).collect());
    let a = one(build_regression(vec![x.clone()], vec![0], false, None, None, vec!["(Intercept)".into(), "drift".into()]).unwrap(), n);
    assert_eq!(a.model.m(), 2);
    assert_eq!(a.model.k(), 0);
    assert_eq!(a.model.init_diffuse, Matrix::identity(2));
    assert!(a.model.loadings.is_time_varying());
    assert_eq!(a.model.loadings.at(3).row(0), &[1.0, 4.0]);

    let b = one(
        build_regression(vec![x.clone()], vec![0], false, Some(Cov::Diagonal(vec![Some(0.0), None])), None, vec![]).unwrap(),
        n,
    );
    assert_eq!(b.model.k(), 2);
    assert_eq!(b.n_params(), 1);
    let m = b.update(&[0.0]).unwrap();
    assert_eq!(*m.state_cov.at(0), Matrix::from_diag(&[0.0, 1.0]));

    // random intercept per series, shared fixed slope
    let y = Observations::from_rows(&vec![vec![1.0, 2.0, 0.5]; n]);
    let slope = Matrix::from_vec(n, 1, (0..n).map(|t| t as f64).collect());
    let ones = Matrix::from_vec(n, 1, vec![1.0; n]);
    let fixed = build_regression(vec![slope], vec![0, 1, 2], true, None, None, vec!["days".into()]).unwrap().named("fixed");
    let random = build_regression(vec![ones], vec![0, 1, 2], false, None, Some(Cov::unknown(1)), vec!["b".into()])
        .unwrap()
        .named("random");
    let c = assemble(y, vec![fixed, random], vec![Distribution::Gaussian; 3], None, Cov::unknown(3)).unwrap();
    assert_eq!(c.model.m(), 4);
    assert_eq!(c.model.init_diffuse, Matrix::from_diag(&[1.0, 0.0, 0.0, 0.0]));
    let m = c.update(&[0.5f64.ln(), 0.0, 0.0, 0.0]).unwrap();
    assert_eq!(m.init_cov.block(1, 1, 3, 3), Matrix::identity(3).scale(0.5));
    assert_eq!(m.loadings.at(2).row(1), &[2.0, 0.0, 1.0, 0.0]);

    let bad = Matrix::from_vec(n - 1, 1, vec![1.0; n - 1]);
    let spec = build_regression(vec![bad], vec![0], false, None, None, vec![]).unwrap();
    assert!(assemble(y1(n), vec![spec], vec![Distribution::Gaussian], None, Cov::variance(1.0)).is_err());
}

#[test]
fn white_noise_custom_with_tied_p1() {
    let trend = build_trend(2, vec![Cov::unknown(1), Cov::zero(1)], vec![0], false).unwrap();
    let wn = build_custom(
        SystemMatrix::constant(Matrix::scalar(1.0)),
        SystemMatrix::constant(Matrix::scalar(0.0)),
        SystemMatrix::constant(Matrix::scalar(1.0)),
        Cov::unknown(1),
        None,
        CustomP1::SameAsQ,
        None,
        vec![0],
    )
    .unwrap();
    let u = Matrix::from_vec(10, 1, vec![2.0; 10]);
    let y = Observations::from_series(&[3.0, 4.0, 2.0, 5.0, 6.0, 4.0, 7.0, 5.0, 6.0, 8.0]);
    let a = assemble(y, vec![trend, wn], vec![Distribution::Poisson], Some(u), Cov::zero(1)).unwrap();
    assert_eq!(a.model.m(), 3);
    assert_eq!(a.param_names(), vec!["Q.trend.level", "Q.custom"]);
    let m = a.update(&[0.01f64.ln(), 0.2f64.ln()]).unwrap();
    assert!((m.state_cov.at(0)[(2, 2)] - 0.2).abs() < 1e-15);
    assert!((m.init_cov[(2, 2)] - 0.2).abs() < 1e-15);
    assert!((m.state_cov.at(0)[(0, 0)] - 0.01).abs() < 1e-15);
}

#[test]
fn multivariate_trend_plus_custom() {
    let n = 5;
    let y = Observations::from_rows(&vec![vec![1.0, 2.0, 3.0, 4.0]; n]);
    let trend = build_trend(2, vec![Cov::Full(4), Cov::zero(4)], vec![0, 1, 2, 3], false).unwrap();
    let custom = build_custom(
        SystemMatrix::constant(Matrix::identity(4)),
        SystemMatrix::constant(Matrix::zeros(4, 4)),
        SystemMatrix::constant(Matrix::identity(4)),
        Cov::Full(4),
        None,
        CustomP1::SameAsQ,
        None,
        vec![0, 1, 2, 3],
    )
    .unwrap();
    let a = assemble(y, vec![trend, custom], vec![Distribution::Poisson; 4], None, Cov::zero(4)).unwrap();
    assert_eq!(a.model.m(), 12);
    assert_eq!(a.n_params(), 20);
    let th: Vec<f64> = (0..20).map(|i| 0.05 * i as f64 - 0.3).collect();
    let m = a.update(&th).unwrap();
    assert!(m.validate().is_empty());
    assert_eq!(m.init_cov.block(8, 8, 4, 4), m.state_cov.at(0).block(8, 8, 4, 4));
}

#[test]
fn permutation_of_components_keeps_loglik() {
    let mut r = rng(3);
    let n = 30;
    let y: Vec<f64> = (0..n).map(|t| (t as f64 / 3.0).sin() * 2.0 + normal(&mut r)).collect();
    let x = Matrix::from_vec(n, 1, (0..n).map(|_| normal(&mut r)).collect());
    let comps = vec![
        build_trend(2, vec![Cov::variance(0.3), Cov::variance(0.01)], vec![0], false).unwrap(),
        build_seasonal(4, false, Cov::variance(0.1), vec![0], false).unwrap().named("sd"),
        build_seasonal(6, true, Cov::variance(0.05), vec![0], false).unwrap().named("st"),
        build_cycle(9.0, Cov::variance(0.2), vec![0], false).unwrap(),
        build_arima(vec![0.4], vec![0.2], 0, Cov::variance(0.5), true, vec![0], false).unwrap(),
        build_regression(vec![x], vec![0], false, None, None, vec![]).unwrap(),
    ];
    let ll = |cs: Vec<ComponentSpec<f64>>| {
        let a = assemble(Observations::from_series(&y), cs, vec![Distribution::Gaussian], None, Cov::variance(0.7)).unwrap();
        assert!(a.model.validate().is_empty());
        filter(&a.model).unwrap().loglik()
    };
    let base = ll(comps.clone());
    for seed in 0..10 {
        let mut cs = comps.clone();
        let mut rr = rng(seed);
        for i in (1..cs.len()).rev() {
            let j = rr.random_range(0..=i);
            cs.swap(i, j);
        }
        assert!((ll(cs) - base).abs() < 1e-10);
    }
}

#[test]
fn assembly_errors() {
    let t = build_trend(1, vec![Cov::variance(1.0)], vec![0], false).unwrap();
    assert!(assemble(y1(4), vec![], vec![Distribution::Gaussian], None, Cov::variance(1.0)).is_err());
    assert!(assemble(y1(4), vec![t.clone(), t.clone()], vec![Distribution::Gaussian], None, Cov::variance(1.0)).is_err());
    let t2 = build_trend(1, vec![Cov::variance(1.0)], vec![1], false).unwrap();
    assert!(assemble(y1(4), vec![t2], vec![Distribution::Gaussian], None, Cov::variance(1.0)).is_err());
}
