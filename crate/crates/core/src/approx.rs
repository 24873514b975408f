//! Exponential-family observation densities and the mode-matching Gaussian
//! approximation of non-Gaussian models.

use log::{debug, warn};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::filter::{filter, FilterResult};
use crate::linalg::{dot, Matrix};
use crate::model::{Distribution, ObservationTransform, Observations, StateSpaceModel, SystemMatrix};
use crate::scalar::Real;
use crate::smoother::smooth_disturbances;

/// `log p(y | theta)` with its first two derivatives in `theta` and the
/// conditional mean and variance of `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEval<T> {
    pub logp: T,
    pub d1: T,
    pub d2: T,
    pub mean: T,
    pub var: T,
}

fn lgamma<T: Real>(x: T) -> T {
    T::lit(ln_gamma(x.as_f64()))
}

/// `log(1 + e^x)` without overflow.
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(e^a + e^b)`.
fn logaddexp<T: Real>(a: T, b: T) -> T {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Checks that `y` lies in the support of `dist` with parameter `u`.
pub fn check_support<T: Real>(dist: Distribution, y: T, u: T) -> Result<()> {
    let ok = match dist {
        Distribution::Gaussian => y.is_finite() && u > T::zero(),
        Distribution::Poisson | Distribution::NegativeBinomial => y >= T::zero() && u > T::zero(),
        Distribution::Binomial => y >= T::zero() && u > T::zero() && y <= u,
        Distribution::Gamma => y > T::zero() && u > T::zero(),
    };
    if ok && y.is_finite() && u.is_finite() {
        Ok(())
    } else {
        Err(Error::Data(format!("y = {y} with u = {u} is outside the support of the {dist} distribution")))
    }
}

/// Evaluates the observation density of one cell.
///
/// `u` is the exposure (Poisson), number of trials (binomial), shape
/// (gamma), dispersion (negative binomial) or variance (Gaussian).
pub fn density_eval<T: Real>(dist: Distribution, y: T, u: T, theta: T) -> Result<DensityEval<T>> {
    check_support(dist, y, u)?;
    let two = T::lit(2.0);
    let out = match dist {
        Distribution::Gaussian => {
            let e = y - theta;
            DensityEval {
                logp: -(two * T::PI() * u).ln() / two - e * e / (two * u),
                d1: e / u,
                d2: -T::one() / u,
                mean: theta,
                var: u,
            }
        }
        Distribution::Poisson => {
            let lam = u * theta.exp();
            DensityEval {
                logp: y * (theta + u.ln()) - lam - lgamma(y + T::one()),
                d1: y - lam,
                d2: -lam,
                mean: lam,
                var: lam,
            }
        }
        Distribution::Binomial => {
            let pi = T::one() / (T::one() + (-theta).exp());
            let q = T::one() / (T::one() + theta.exp());
            let lchoose = lgamma(u + T::one()) - lgamma(y + T::one()) - lgamma(u - y + T::one());
            DensityEval {
                logp: lchoose + y * theta - u * softplus(theta),
                d1: y - u * pi,
                d2: -u * pi * q,
                mean: u * pi,
                var: u * pi * q,
            }
        }
        Distribution::Gamma => {
            let mu = theta.exp();
            let a = y * u * (-theta).exp();
            DensityEval {
                logp: u * u.ln() - u * theta + (u - T::one()) * y.ln() - a - lgamma(u),
                d1: -u + a,
                d2: -a,
                mean: mu,
                var: mu * mu / u,
            }
        }
        Distribution::NegativeBinomial => {
            let mu = theta.exp();
            let lse = logaddexp(u.ln(), theta);
            // e^theta / (u + e^theta)
            let frac = (theta - lse).exp();
            let ufrac = (u.ln() - lse).exp();
            DensityEval {
                logp: lgamma(y + u) - lgamma(u) - lgamma(y + T::one()) + u * u.ln() + y * theta - (u + y) * lse,
                d1: y - (u + y) * frac,
                d2: -(u + y) * frac * ufrac,
                mean: mu,
                var: mu + mu * mu / u,
            }
        }
    };
    Ok(out)
}

/// Controls for [`approximate`].
#[derive(Debug, Clone)]
pub struct ApproxOptions<T> {
    pub max_iter: usize,
    pub conv_tol: T,
    /// Starting signal (n x p); the data-based default is used otherwise.
    pub theta0: Option<Vec<Vec<T>>>,
}

impl<T: Real> Default for ApproxOptions<T> {
    fn default() -> Self {
        ApproxOptions {
            max_iter: 50,
            conv_tol: T::lit(1e-8),
            theta0: None,
        }
    }
}

/// Converged (or last) state of the Gaussian approximation.
#[derive(Debug, Clone)]
pub struct ApproximationResult<T> {
    /// Pseudo-observations; `None` where `y` is missing.
    pub ytilde: Vec<Vec<Option<T>>>,
    /// Pseudo-variances of non-Gaussian cells (zero elsewhere).
    pub htilde: Vec<Vec<T>>,
    pub thetahat: Vec<Vec<T>>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the approximating Gaussian model at the mode.
    pub loglik_g: T,
    /// `log p(y | thetahat) - log g(ytilde | thetahat)`.
    pub log_w_hat: T,
    /// The approximating Gaussian model.
    pub working: StateSpaceModel<T>,
    pub filtered: FilterResult<T>,
}

fn default_theta<T: Real>(model: &StateSpaceModel<T>) -> Vec<Vec<T>> {
    let (n, p) = (model.n(), model.p());
    let mut theta = vec![vec![T::zero(); p]; n];
    for i in 0..p {
        let dist = model.distribution[i];
        let vals: Vec<T> = (0..n).filter_map(|t| model.y.get(t, i)).collect();
        let mean = if vals.is_empty() {
            T::one()
        } else {
            vals.iter().copied().sum::<T>() / T::lit(vals.len() as f64)
        };
        let small = if mean > T::zero() { T::lit(0.1) * mean } else { T::lit(0.1) };
        for (t, row) in theta.iter_mut().enumerate() {
            let u = model.obs_param[(t, i)];
            let Some(y) = model.y.get(t, i) else {
                continue;
            };
            row[i] = match dist {
                Distribution::Gaussian => y,
                Distribution::Poisson => ((y + T::lit(0.5)) / u).ln(),
                Distribution::Binomial => {
                    let pi = (y + T::lit(0.5)) / (u + T::one());
                    (pi / (T::one() - pi)).ln()
                }
                Distribution::Gamma | Distribution::NegativeBinomial => y.max(small).ln(),
            };
        }
    }
    theta
}

/// Smoothed path of one iteration, stored in a form that interpolates
/// linearly: the prior penalty is `b^T Q b` with `b_t = R_t^T r_{t+1}`.
#[derive(Clone)]
struct Path<T> {
    theta: Vec<Vec<T>>,
    b: Vec<Vec<T>>,
    r_first: Vec<T>,
}

impl<T: Real> Path<T> {
    fn lerp(&self, other: &Path<T>, lam: T) -> Path<T> {
        let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x + lam * (y - x)).collect::<Vec<T>>();
        Path {
            theta: self.theta.iter().zip(&other.theta).map(|(a, b)| mix(a, b)).collect(),
            b: self.b.iter().zip(&other.b).map(|(a, b)| mix(a, b)).collect(),
            r_first: mix(&self.r_first, &other.r_first),
        }
    }
}

struct Approximator<'a, T> {
    model: &'a StateSpaceModel<T>,
    nongauss: Vec<bool>,
    gauss_obs_tr: Vec<Option<(Vec<usize>, ObservationTransform<T>)>>,
}

impl<'a, T: Real> Approximator<'a, T> {
    fn new(model: &'a StateSpaceModel<T>) -> Result<Self> {
        let p = model.p();
        let nongauss: Vec<bool> = (0..p).map(|i| !model.distribution[i].is_gaussian()).collect();
        for t in 0..model.n() {
            for i in 0..p {
                if let Some(y) = model.y.get(t, i) {
                    if nongauss[i] {
                        check_support(model.distribution[i], y, model.obs_param[(t, i)])
                            .map_err(|e| Error::Data(format!("t={}, series {}: {e}", t + 1, i + 1)))?;
                    }
                }
            }
        }
        let mut gauss_obs_tr = Vec::with_capacity(model.n());
        for t in 0..model.n() {
            let obs: Vec<usize> = (0..p).filter(|&i| !nongauss[i] && model.y.get(t, i).is_some()).collect();
            if obs.is_empty() {
                gauss_obs_tr.push(None);
            } else {
                let tr = ObservationTransform::new(model.obs_cov.at(t), &obs)?;
                gauss_obs_tr.push(Some((obs, tr)));
            }
        }
        Ok(Approximator {
            model,
            nongauss,
            gauss_obs_tr,
        })
    }

    /// `log p(y | theta)` summed over observed cells.
    fn loglik_obs(&self, theta: &[Vec<T>]) -> Result<T> {
        let m = self.model;
        let mut total = T::zero();
        let log2pi = (T::lit(2.0) * T::PI()).ln();
        for (t, th) in theta.iter().enumerate() {
            for i in 0..m.p() {
                if !self.nongauss[i] {
                    continue;
                }
                if let Some(y) = m.y.get(t, i) {
                    total += density_eval(m.distribution[i], y, m.obs_param[(t, i)], th[i])?.logp;
                }
            }
            if let Some((obs, tr)) = &self.gauss_obs_tr[t] {
                let e: Vec<T> = obs.iter().map(|&i| m.y.get(t, i).unwrap() - th[i]).collect();
                let w = tr.apply_vec(&e);
                for (wi, &d) in w.iter().zip(&tr.variances) {
                    if d > T::zero() {
                        total -= (log2pi + d.ln() + *wi * *wi / d) / T::lit(2.0);
                    }
                }
            }
        }
        Ok(total)
    }

    fn objective(&self, path: &Path<T>) -> Result<T> {
        let m = self.model;
        let mut pen = T::zero();
        for (t, b) in path.b.iter().enumerate() {
            pen += dot(b, &m.state_cov.at(t).mul_vec(b));
        }
        pen += dot(&path.r_first, &m.init_cov.mul_vec(&path.r_first));
        Ok(self.loglik_obs(&path.theta)? - pen / T::lit(2.0))
    }

    /// Working Gaussian model expanded at `theta`.
    fn working(&self, theta: &[Vec<T>]) -> Result<(StateSpaceModel<T>, Vec<Vec<Option<T>>>, Vec<Vec<T>>)> {
        let m = self.model;
        let (n, p) = (m.n(), m.p());
        let mut cells = Vec::with_capacity(n * p);
        let mut ytilde = vec![vec![None; p]; n];
        let mut htilde = vec![vec![T::zero(); p]; n];
        let mut hs = Vec::with_capacity(n);
        for t in 0..n {
            let mut h = m.obs_cov.at(t).clone();
            for i in 0..p {
                let y = m.y.get(t, i);
                if !self.nongauss[i] {
                    cells.push(y);
                    ytilde[t][i] = y;
                    continue;
                }
                match y {
                    Some(y) => {
                        let de = density_eval(m.distribution[i], y, m.obs_param[(t, i)], theta[t][i])?;
                        if !(de.d2 < T::zero()) || !de.d2.is_finite() {
                            return Err(Error::numeric_at("non-negative second derivative in approximation", t, i));
                        }
                        let ht = -T::one() / de.d2;
                        let yt = theta[t][i] + de.d1 * ht;
                        if !yt.is_finite() || !ht.is_finite() {
                            return Err(Error::numeric_at("non-finite pseudo-observation", t, i));
                        }
                        h[(i, i)] = ht;
                        htilde[t][i] = ht;
                        ytilde[t][i] = Some(yt);
                        cells.push(Some(yt));
                    }
                    None => {
                        h[(i, i)] = T::one();
                        cells.push(None);
                    }
                }
            }
            hs.push(h);
        }
        let mut w = m.clone();
        w.y = Observations::new(n, p, cells);
        w.obs_cov = SystemMatrix::time_varying(hs);
        w.distribution = vec![Distribution::Gaussian; p];
        Ok((w, ytilde, htilde))
    }

    fn smooth_path(&self, working: &StateSpaceModel<T>) -> Result<Path<T>> {
        let fr = filter(working)?;
        let sm = smooth_disturbances(&fr, working)?;
        let n = working.n();
        let b = (0..n.saturating_sub(1))
            .map(|t| working.selection.at(t).t_mul_vec(&sm.r0[t + 1]))
            .collect();
        // prior penalty on alpha_1 uses its non-diffuse part P* r0
        Ok(Path {
            theta: sm.thetahat,
            b,
            r_first: sm.r0[0].clone(),
        })
    }
}

fn relative_change<T: Real>(old: &[Vec<T>], new: &[Vec<T>]) -> T {
    let mut worst = T::zero();
    for (a, b) in old.iter().zip(new) {
        for (&x, &y) in a.iter().zip(b) {
            let c = (y - x).abs() / (y.abs() + T::lit(0.1));
            if c > worst || c.is_nan() {
                worst = c;
            }
        }
    }
    worst
}

/// Finds the Gaussian model whose smoothed signal equals the mode of
/// `p(theta | y)`.
pub fn approximate<T: Real>(model: &StateSpaceModel<T>, opts: &ApproxOptions<T>) -> Result<ApproximationResult<T>> {
    let (n, p) = (model.n(), model.p());
    if model.is_gaussian() {
        let fr = filter(model)?;
        let sm = crate::smoother::smooth_states(&fr, model)?;
        let ytilde = (0..n).map(|t| model.y.row(t).to_vec()).collect();
        return Ok(ApproximationResult {
            ytilde,
            htilde: vec![vec![T::zero(); p]; n],
            thetahat: sm.thetahat,
            iterations: 0,
            converged: true,
            loglik_g: fr.loglik(),
            log_w_hat: T::zero(),
            working: model.clone(),
            filtered: fr,
        });
    }
    let ap = Approximator::new(model)?;
    let mut theta = match &opts.theta0 {
        Some(t0) => {
            if t0.len() != n || t0.iter().any(|r| r.len() != p) {
                return Err(Error::Usage("starting signal has the wrong shape".into()));
            }
            t0.clone()
        }
        None => default_theta(model),
    };
    let mut prev: Option<(Path<T>, T)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let (w, _, _) = ap.working(&theta)?;
        let mut path = ap.smooth_path(&w)?;
        let mut obj = ap.objective(&path)?;
        if let Some((old, old_obj)) = &prev {
            let slack = T::lit(1e-10) * (T::one() + old_obj.abs());
            if !(obj >= *old_obj - slack) {
                let mut accepted = false;
                let mut lam = T::lit(0.5);
                for _ in 0..30 {
                    let cand = old.lerp(&path, lam);
                    let co = ap.objective(&cand)?;
                    if co >= *old_obj {
                        path = cand;
                        obj = co;
                        accepted = true;
                        break;
                    }
                    lam = lam / T::lit(2.0);
                }
                if !accepted {
                    debug!("approximation: no improving step at iteration {iter}; stopping");
                    path = old.clone();
                    obj = *old_obj;
                }
            }
        }
        let change = relative_change(&theta, &path.theta);
        theta = path.theta.clone();
        debug!("approximation iteration {iter}: objective {obj}, change {change}");
        if change <= opts.conv_tol {
            converged = true;
            break;
        }
        if let Some((_, old_obj)) = &prev {
            if (obj - *old_obj).abs() <= T::epsilon() * T::lit(4.0) * obj.abs() && change <= T::lit(1e-6) {
                converged = true;
                break;
            }
        }
        prev = Some((path, obj));
    }
    if !converged {
        warn!("Gaussian approximation did not converge in {} iterations", opts.max_iter);
    }
    let (working, ytilde, htilde) = ap.working(&theta)?;
    let fr = filter(&working)?;
    let log2pi = (T::lit(2.0) * T::PI()).ln();
    let mut log_p = T::zero();
    let mut log_g = T::zero();
    for t in 0..n {
        for i in 0..p {
            if !ap.nongauss[i] {
                continue;
            }
            if let (Some(y), Some(yt)) = (model.y.get(t, i), ytilde[t][i]) {
                log_p += density_eval(model.distribution[i], y, model.obs_param[(t, i)], theta[t][i])?.logp;
                let h = htilde[t][i];
                let e = yt - theta[t][i];
                log_g -= (log2pi + h.ln() + e * e / h) / T::lit(2.0);
            }
        }
    }
    Ok(ApproximationResult {
        ytilde,
        htilde,
        thetahat: theta,
        iterations,
        converged,
        loglik_g: fr.loglik(),
        log_w_hat: log_p - log_g,
        working,
        filtered: fr,
    })
}

/// `log p(y | theta) - log g(ytilde | theta)` over observed non-Gaussian
/// cells, for a signal path `theta`.
pub fn log_weight<T: Real>(model: &StateSpaceModel<T>, approx: &ApproximationResult<T>, theta: &[Vec<T>]) -> Result<T> {
    let log2pi = (T::lit(2.0) * T::PI()).ln();
    let mut total = T::zero();
    for (t, th) in theta.iter().enumerate() {
        for (i, &dist) in model.distribution.iter().enumerate() {
            if dist.is_gaussian() {
                continue;
            }
            if let (Some(y), Some(yt)) = (model.y.get(t, i), approx.ytilde[t][i]) {
                total += density_eval(dist, y, model.obs_param[(t, i)], th[i])?.logp;
                let h = approx.htilde[t][i];
                let e = yt - th[i];
                total += (log2pi + h.ln() + e * e / h) / T::lit(2.0);
            }
        }
    }
    Ok(total)
}

/// One-step-ahead moments from [`filter_nongaussian`].
#[derive(Debug, Clone)]
pub struct NonGaussianFilter<T> {
    /// `E(theta_t | y_1..y_{t-1})`, n x p.
    pub signal_mean: Vec<Vec<T>>,
    pub signal_var: Vec<Vec<T>>,
    /// `E(alpha_t | y_1..y_{t-1})`, n x m, and covariance.
    pub state_mean: Vec<Vec<T>>,
    pub state_var: Vec<Matrix<T>>,
    /// `E(mu_t | past)`, `VAR(mu_t | past)` and `E(VAR(y_t | theta_t) | past)`.
    pub mean_mean: Vec<Vec<T>>,
    pub mean_var: Vec<Vec<T>>,
    pub expected_var: Vec<Vec<T>>,
}

/// One-step-ahead prediction for each `t`, by approximating (and, with
/// `nsim > 0`, importance sampling) the model with `y_t..y_n` removed.
pub fn filter_nongaussian<T: Real>(
    model: &StateSpaceModel<T>,
    nsim: usize,
    seed: u64,
    opts: &ApproxOptions<T>,
) -> Result<NonGaussianFilter<T>> {
    let (n, p) = (model.n(), model.p());
    if model.is_gaussian() {
        let fr = filter(model)?;
        let mut out = NonGaussianFilter {
            signal_mean: Vec::with_capacity(n),
            signal_var: Vec::with_capacity(n),
            state_mean: fr.a[..n].to_vec(),
            state_var: Vec::with_capacity(n),
            mean_mean: Vec::with_capacity(n),
            mean_var: Vec::with_capacity(n),
            expected_var: Vec::with_capacity(n),
        };
        for t in 0..n {
            let z = model.loadings.at(t);
            let pt = fr.p_star[t].add(&fr.p_inf_at(t));
            let cov = z.sandwich(&pt);
            let mean = z.mul_vec(&fr.a[t]);
            let var: Vec<T> = cov.diag();
            out.expected_var.push((0..p).map(|i| model.obs_cov.at(t)[(i, i)]).collect());
            out.mean_mean.push(mean.clone());
            out.mean_var.push(var.clone());
            out.signal_mean.push(mean);
            out.signal_var.push(var);
            out.state_var.push(pt);
        }
        return Ok(out);
    }
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|t| one_step(model, t, nsim, seed.wrapping_add(t as u64), opts))
        .collect::<Result<Vec<_>>>()?;
    let mut out = NonGaussianFilter {
        signal_mean: Vec::with_capacity(n),
        signal_var: Vec::with_capacity(n),
        state_mean: Vec::with_capacity(n),
        state_var: Vec::with_capacity(n),
        mean_mean: Vec::with_capacity(n),
        mean_var: Vec::with_capacity(n),
        expected_var: Vec::with_capacity(n),
    };
    for r in rows {
        out.signal_mean.push(r.0);
        out.signal_var.push(r.1);
        out.state_mean.push(r.2);
        out.state_var.push(r.3);
        out.mean_mean.push(r.4);
        out.mean_var.push(r.5);
        out.expected_var.push(r.6);
    }
    Ok(out)
}

type StepMoments<T> = (Vec<T>, Vec<T>, Vec<T>, Matrix<T>, Vec<T>, Vec<T>, Vec<T>);

fn one_step<T: Real>(model: &StateSpaceModel<T>, t: usize, nsim: usize, seed: u64, opts: &ApproxOptions<T>) -> Result<StepMoments<T>> {
    let p = model.p();
    let mut trunc = model.clone();
    trunc.y = model.y.truncated(t + 1);
    trunc.obs_param = model.obs_param.block(0, 0, t + 1, p);
    for i in 0..p {
        trunc.y.set(t, i, None);
    }
    let mut opts = opts.clone();
    opts.theta0 = opts.theta0.map(|th| th[..t + 1].to_vec());
    let opts = &opts;
    let m = model.m();
    let has_data = (0..t).any(|s| (0..p).any(|i| model.y.get(s, i).is_some()));
    let cell = |i: usize, theta: T| -> Result<(T, T)> {
        let u = model.obs_param[(t, i)];
        let dist = model.distribution[i];
        if dist.is_gaussian() {
            Ok((theta, model.obs_cov.at(t)[(i, i)]))
        } else {
            let de = mean_var(dist, u, theta);
            Ok(de)
        }
    };
    if nsim == 0 || !has_data {
        let ap = if has_data {
            approximate(&trunc, opts)?.working
        } else {
            let mut g = trunc.clone();
            g.distribution = vec![Distribution::Gaussian; p];
            g
        };
        let fr = filter(&ap)?;
        let sm = crate::smoother::smooth_states(&fr, &ap)?;
        let z = model.loadings.at(t);
        let mean = z.mul_vec(&sm.alphahat[t]);
        let var = z.sandwich(&sm.v[t]).diag();
        let mut mm = Vec::with_capacity(p);
        let mut mv = Vec::with_capacity(p);
        let mut ev = Vec::with_capacity(p);
        for i in 0..p {
            // delta method on the mean map
            let (mu, vy) = cell(i, mean[i])?;
            let h = T::lit(1e-5);
            let slope = (cell(i, mean[i] + h)?.0 - cell(i, mean[i] - h)?.0) / (T::lit(2.0) * h);
            mm.push(mu);
            mv.push(slope * slope * var[i]);
            ev.push(vy);
        }
        return Ok((mean, var, sm.alphahat[t].clone(), sm.v[t].clone(), mm, mv, ev));
    }
    let is = crate::simulation::importance_sample(&trunc, crate::simulation::SimTarget::States, nsim, seed, true, opts)?;
    let w = is.normalized_weights();
    let z = model.loadings.at(t);
    let mut smean = vec![T::zero(); m];
    for (d, &wi) in is.draws.iter().zip(&w) {
        for (s, &x) in smean.iter_mut().zip(&d[t]) {
            *s += wi * x;
        }
    }
    let mut svar = Matrix::zeros(m, m);
    let mut sig_mean = vec![T::zero(); p];
    let mut sig_sq = vec![T::zero(); p];
    let mut mu_mean = vec![T::zero(); p];
    let mut mu_sq = vec![T::zero(); p];
    let mut ev = vec![T::zero(); p];
    for (d, &wi) in is.draws.iter().zip(&w) {
        let dev: Vec<T> = d[t].iter().zip(&smean).map(|(&a, &b)| a - b).collect();
        svar.rank1_update(wi, &dev, &dev);
        let th = z.mul_vec(&d[t]);
        for i in 0..p {
            let (mu, vy) = cell(i, th[i])?;
            sig_mean[i] += wi * th[i];
            sig_sq[i] += wi * th[i] * th[i];
            mu_mean[i] += wi * mu;
            mu_sq[i] += wi * mu * mu;
            ev[i] += wi * vy;
        }
    }
    let sig_var = (0..p).map(|i| (sig_sq[i] - sig_mean[i] * sig_mean[i]).max(T::zero())).collect();
    let mu_var = (0..p).map(|i| (mu_sq[i] - mu_mean[i] * mu_mean[i]).max(T::zero())).collect();
    Ok((sig_mean, sig_var, smean, svar, mu_mean, mu_var, ev))
}

/// Conditional mean and variance of `y` given the signal.
pub fn mean_var<T: Real>(dist: Distribution, u: T, theta: T) -> (T, T) {
    match dist {
        Distribution::Gaussian => (theta, u),
        Distribution::Poisson => {
            let l = u * theta.exp();
            (l, l)
        }
        Distribution::Binomial => {
            let pi = T::one() / (T::one() + (-theta).exp());
            (u * pi, u * pi * (T::one() - pi))
        }
        Distribution::Gamma => {
            let mu = theta.exp();
            (mu, mu * mu / u)
        }
        Distribution::NegativeBinomial => {
            let mu = theta.exp();
            (mu, mu + mu * mu / u)
        }
    }
}
