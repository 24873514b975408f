#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssmkit::{Matrix, Observations, StateSpaceModel, SystemMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * normal(r)).collect())
}

/// `A A^T + ridge I`.
pub fn random_pd(r: &mut ChaCha8Rng, n: usize, ridge: f64) -> Matrix<f64> {
    let a = random_matrix(r, n, n, 1.0);
    a.matmul_t(&a).add(&Matrix::identity(n).scale(ridge))
}

pub struct RandomSpec {
    pub diffuse: bool,
    pub full_h: bool,
    pub missing: f64,
    pub time_varying: bool,
}

/// Small random Gaussian model with positive definite H and Q.
pub fn random_model(r: &mut ChaCha8Rng, spec: &RandomSpec) -> StateSpaceModel<f64> {
    let m = r.random_range(1..=3);
    let p = r.random_range(1..=2);
    let k = r.random_range(1..=m);
    let n = r.random_range(5..=8);
    let mk_t = |r: &mut ChaCha8Rng| random_matrix(r, m, m, 0.4).add(&Matrix::identity(m).scale(0.6));
    let (z, t) = if spec.time_varying {
        (
            SystemMatrix::time_varying((0..n).map(|_| random_matrix(r, p, m, 1.0)).collect()),
            SystemMatrix::time_varying((0..n).map(|_| mk_t(r)).collect()),
        )
    } else {
        (SystemMatrix::constant(random_matrix(r, p, m, 1.0)), SystemMatrix::constant(mk_t(r)))
    };
    let h = if spec.full_h {
        random_pd(r, p, 0.2).scale(0.5)
    } else {
        Matrix::from_diag(&(0..p).map(|_| 0.2 + r.random::<f64>()).collect::<Vec<_>>())
    };
    let rsel = random_matrix(r, m, k, 1.0);
    let q = random_pd(r, k, 0.3).scale(0.5);
    let mut cells = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        if r.random::<f64>() < spec.missing {
            cells.push(None);
        } else {
            cells.push(Some(normal(r) * 2.0));
        }
    }
    let y = Observations::new(n, p, cells);
    let diff: Vec<bool> = (0..m).map(|_| spec.diffuse && r.random::<f64>() < 0.6).collect();
    let nd: Vec<usize> = (0..m).filter(|&j| !diff[j]).collect();
    let mut p1 = Matrix::zeros(m, m);
    let block = random_pd(r, nd.len(), 0.5);
    for (a, &i) in nd.iter().enumerate() {
        for (b, &j) in nd.iter().enumerate() {
            p1[(i, j)] = block[(a, b)];
        }
    }
    let p1inf = Matrix::from_diag(&diff.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let a1: Vec<f64> = (0..m).map(|j| if diff[j] { 0.0 } else { normal(r) }).collect();
    StateSpaceModel::new(y, z, t, SystemMatrix::constant(rsel), SystemMatrix::constant(q))
        .with_obs_cov(SystemMatrix::constant(h))
        .with_init(a1, p1, p1inf)
}

/// Joint Gaussian posterior of `(alpha_1, eta_1, .., eta_{n-1})` by direct
/// information-form solve. Diffuse directions carry zero prior precision.
pub struct DenseOracle {
    pub alphahat: Vec<Vec<f64>>,
    pub v: Vec<Matrix<f64>>,
    pub etahat: Vec<Vec<f64>>,
    pub v_eta: Vec<Matrix<f64>>,
    /// `false` when the posterior precision is singular (diffuse directions
    /// never identified by the data).
    pub proper: bool,
}

pub fn dense_posterior(model: &StateSpaceModel<f64>) -> DenseOracle {
    let (n, m, k) = (model.n(), model.m(), model.k());
    let dim = m + k * (n - 1);
    // alpha_t = A_t x + c_t
    let mut maps = Vec::with_capacity(n);
    let mut a = Matrix::zeros(m, dim);
    for j in 0..m {
        a[(j, j)] = 1.0;
    }
    maps.push(a.clone());
    for t in 0..n - 1 {
        let mut next = model.transition.at(t).matmul(&a);
        let rs = model.selection.at(t);
        for i in 0..m {
            for j in 0..k {
                next[(i, m + t * k + j)] += rs[(i, j)];
            }
        }
        a = next;
        maps.push(a.clone());
    }

    let mut prec = Matrix::zeros(dim, dim);
    let mut lin = vec![0.0; dim];
    let nd: Vec<usize> = (0..m).filter(|&j| model.init_diffuse[(j, j)] == 0.0).collect();
    if !nd.is_empty() {
        let pinv = model.init_cov.select(&nd, &nd).inverse().unwrap();
        let mean: Vec<f64> = nd.iter().map(|&j| model.init_mean[j]).collect();
        let pm = pinv.mul_vec(&mean);
        for (a, &i) in nd.iter().enumerate() {
            lin[i] += pm[a];
            for (b, &j) in nd.iter().enumerate() {
                prec[(i, j)] += pinv[(a, b)];
            }
        }
    }
    let qinv = model.state_cov.at(0).inverse().unwrap();
    for t in 0..n - 1 {
        let qi = if model.state_cov.is_time_varying() {
            model.state_cov.at(t).inverse().unwrap()
        } else {
            qinv.clone()
        };
        for i in 0..k {
            for j in 0..k {
                prec[(m + t * k + i, m + t * k + j)] += qi[(i, j)];
            }
        }
    }
    let all: Vec<usize> = (0..m).collect();
    for t in 0..n {
        let obs = model.observed_at(t);
        if obs.is_empty() {
            continue;
        }
        let zo = model.loadings.at(t).select(&obs, &all);
        let hinv = model.obs_cov.at(t).select(&obs, &obs).inverse().unwrap();
        let g = zo.matmul(&maps[t]);
        prec.add_assign(&g.t_matmul(&hinv.matmul(&g)));
        let yo: Vec<f64> = obs.iter().map(|&i| model.y.get(t, i).unwrap()).collect();
        let hy = hinv.mul_vec(&yo);
        let gy = g.t_mul_vec(&hy);
        for (l, x) in lin.iter_mut().zip(gy) {
            *l += x;
        }
    }
    let Some(chol) = prec.cholesky() else {
        return DenseOracle {
            alphahat: vec![],
            v: vec![],
            etahat: vec![],
            v_eta: vec![],
            proper: false,
        };
    };
    let diag_min = (0..dim).map(|i| chol[(i, i)]).fold(f64::INFINITY, f64::min);
    let diag_max = (0..dim).map(|i| chol[(i, i)]).fold(0.0, f64::max);
    if diag_min < 1e-4 * diag_max {
        return DenseOracle {
            alphahat: vec![],
            v: vec![],
            etahat: vec![],
            v_eta: vec![],
            proper: false,
        };
    }
    let cov = prec.inverse().unwrap();
    let xhat = cov.mul_vec(&lin);
    let alphahat = maps.iter().map(|a| a.mul_vec(&xhat)).collect();
    let v = maps.iter().map(|a| a.sandwich(&cov)).collect();
    let mut etahat = Vec::with_capacity(n);
    let mut v_eta = Vec::with_capacity(n);
    for t in 0..n - 1 {
        let s = m + t * k;
        etahat.push(xhat[s..s + k].to_vec());
        v_eta.push(cov.block(s, s, k, k));
    }
    etahat.push(vec![0.0; k]);
    v_eta.push(model.state_cov.at(n - 1).clone());
    DenseOracle {
        alphahat,
        v,
        etahat,
        v_eta,
        proper: true,
    }
}

/// Counts from a 3 x 3 factorial design (outcome varies fastest).
pub const COUNTS: [f64; 9] = [18.0, 17.0, 15.0, 20.0, 10.0, 20.0, 25.0, 13.0, 12.0];

/// Design matrix with intercept, outcome 2-3 and treatment 2-3 dummies.
pub fn counts_design() -> Vec<Vec<f64>> {
    (0..9)
        .map(|t| {
            let outcome = t % 3;
            let treatment = t / 3;
            vec![
                1.0,
                (outcome == 1) as u8 as f64,
                (outcome == 2) as u8 as f64,
                (treatment == 1) as u8 as f64,
                (treatment == 2) as u8 as f64,
            ]
        })
        .collect()
}

/// Poisson regression as a state space model with static diffuse
/// coefficients.
pub fn counts_model() -> StateSpaceModel<f64> {
    let x = counts_design();
    let z = SystemMatrix::time_varying(x.iter().map(|r| Matrix::from_vec(1, 5, r.clone())).collect());
    StateSpaceModel::new(
        Observations::from_series(&COUNTS),
        z,
        SystemMatrix::constant(Matrix::identity(5)),
        SystemMatrix::constant(Matrix::zeros(5, 1)),
        SystemMatrix::constant(Matrix::zeros(1, 1)),
    )
    .with_init(vec![0.0; 5], Matrix::zeros(5, 5), Matrix::identity(5))
    .with_distribution(vec![ssmkit::Distribution::Poisson])
}

/// Poisson GLM by Newton-Raphson on the normal equations. Returns
/// coefficients and standard errors.
pub fn irls_poisson(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = x[0].len();
    let mut beta = vec![0.0; k];
    beta[0] = (y.iter().sum::<f64>() / y.len() as f64).ln();
    let mut info = Matrix::zeros(k, k);
    for _ in 0..100 {
        let mut grad = vec![0.0; k];
        info = Matrix::zeros(k, k);
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = eta.exp();
            for a in 0..k {
                grad[a] += row[a] * (yi - mu);
                for b in 0..k {
                    info[(a, b)] += mu * row[a] * row[b];
                }
            }
        }
        let step = info.solve_vec(&grad).unwrap();
        let size = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-14 {
            break;
        }
    }
    let cov = info.inverse().unwrap();
    let se = (0..k).map(|j| cov[(j, j)].sqrt()).collect();
    (beta, se)
}

/// Local level model with `y = (1, 0.5)`, `H = Q = 1` and diffuse start.
pub fn local_level_fixture() -> StateSpaceModel<f64> {
    local_level(&[Some(1.0), Some(0.5)], 1.0, 1.0)
}

pub fn local_level(y: &[Option<f64>], h: f64, q: f64) -> StateSpaceModel<f64> {
    let one = |v: f64| SystemMatrix::constant(Matrix::scalar(v));
    StateSpaceModel::new(Observations::new(y.len(), 1, y.to_vec()), one(1.0), one(1.0), one(1.0), one(q))
        .with_obs_cov(one(h))
        .with_init(vec![0.0], Matrix::scalar(0.0), Matrix::scalar(1.0))
}

/// Largest relative discrepancy between analytic and finite-difference
/// derivatives over `points` random draws of every distribution. The
/// first derivative differences `log p`, the second differences `d1`,
/// both with step `1e-6`; errors are relative to `max(|analytic|, 1)`.
pub fn derivative_check(points: usize, seed: u64) -> f64 {
    use ssmkit::approx::density_eval;
    use ssmkit::Distribution::*;
    let mut r = rng(seed);
    let dists = [Gaussian, Poisson, Binomial, Gamma, NegativeBinomial];
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let dist = dists[k % dists.len()];
        let theta = r.random_range(-3.0..3.0);
        let (y, u) = match dist {
            Gaussian => (3.0 * normal(&mut r), r.random_range(0.1..5.0)),
            Poisson => (r.random_range(0..30) as f64, r.random_range(0.1..10.0)),
            Binomial => {
                let u = r.random_range(1..50) as f64;
                (r.random_range(0..=u as u32) as f64, u)
            }
            Gamma => (r.random_range(0.01..20.0), r.random_range(0.2..10.0)),
            NegativeBinomial => (r.random_range(0..30) as f64, r.random_range(0.2..10.0)),
        };
        let at = |th: f64| density_eval(dist, y, u, th).unwrap();
        let d = at(theta);
        let fd1 = (at(theta + h).logp - at(theta - h).logp) / (2.0 * h);
        let fd2 = (at(theta + h).d1 - at(theta - h).d1) / (2.0 * h);
        worst = worst.max((fd1 - d.d1).abs() / d.d1.abs().max(1.0));
        worst = worst.max((fd2 - d.d2).abs() / d.d2.abs().max(1.0));
    }
    worst
}

/// Textbook multivariate Kalman filter with a proper prior: predicted
/// means and covariances for `t = 1..n+1` and the log-likelihood.
pub struct KalmanOracle {
    pub a: Vec<Vec<f64>>,
    pub p: Vec<Matrix<f64>>,
    pub loglik: f64,
}

pub fn kalman_oracle(model: &StateSpaceModel<f64>) -> KalmanOracle {
    let (n, m) = (model.n(), model.m());
    let all: Vec<usize> = (0..m).collect();
    let mut a = model.init_mean.clone();
    let mut p = model.init_cov.clone();
    let mut out = KalmanOracle { a: vec![a.clone()], p: vec![p.clone()], loglik: 0.0 };
    for t in 0..n {
        let obs = model.observed_at(t);
        if !obs.is_empty() {
            let z = model.loadings.at(t).select(&obs, &all);
            let h = model.obs_cov.at(t).select(&obs, &obs);
            let v: Vec<f64> = obs.iter().zip(z.mul_vec(&a)).map(|(&i, za)| model.y.get(t, i).unwrap() - za).collect();
            let pz = p.matmul_t(&z);
            let f = z.matmul(&pz).add(&h);
            let finv = f.inverse().unwrap();
            let l = f.cholesky().unwrap();
            let logdet: f64 = (0..obs.len()).map(|i| 2.0 * l[(i, i)].ln()).sum();
            let fv = finv.mul_vec(&v);
            let quad: f64 = v.iter().zip(&fv).map(|(x, y)| x * y).sum();
            out.loglik -= 0.5 * (obs.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
            let gain = pz.matmul(&finv);
            let kv = gain.mul_vec(&v);
            a = a.iter().zip(&kv).map(|(x, y)| x + y).collect();
            // Joseph form keeps large-variance priors from cancelling.
            let ikz = Matrix::identity(m).sub(&gain.matmul(&z));
            p = ikz.matmul(&p).matmul_t(&ikz).add(&gain.matmul(&h).matmul_t(&gain));
        }
        let tt = model.transition.at(t);
        let r = model.selection.at(t);
        a = tt.mul_vec(&a);
        p = tt.matmul(&p).matmul_t(tt).add(&r.matmul(model.state_cov.at(t)).matmul_t(r));
        p.symmetrize();
        out.a.push(a.clone());
        out.p.push(p.clone());
    }
    out
}
