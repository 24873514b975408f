//! Simulation smoothing, antithetic variables, importance sampling and
//! simulation-based prediction intervals.
//!
//! Every base replicate `b` draws from its own ChaCha stream `(seed, b)`,
//! so results do not depend on the number of worker threads.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::approx::{approximate, log_weight, mean_var, ApproxOptions, ApproximationResult};
use crate::error::{Error, Result};
use crate::filter::{filter, FilterResult};
use crate::linalg::{dot, Matrix};
use crate::model::{Distribution, StateSpaceModel};
use crate::scalar::Real;
use crate::smoother::{smooth_disturbances, SmoothResult};

/// What a simulated path contains at each time point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTarget {
    /// `alpha_t` (m values).
    States,
    /// `Z_t alpha_t` (p values).
    Signals,
    /// `(eps_t, eta_t)` (p + k values).
    Disturbances,
    /// `y_t`, equal to the data where observed (p values).
    Observations,
}

/// Simulated paths with their stabilized log importance weights.
#[derive(Debug, Clone)]
pub struct ImportanceSample<T> {
    /// `draws[i][t]` is the value at time `t` of path `i`.
    pub draws: Vec<Vec<Vec<T>>>,
    /// `log w*_i`; identically zero for Gaussian models.
    pub log_weights: Vec<T>,
    pub what: SimTarget,
    /// Draws come in blocks of four (location and scale antithetics).
    pub antithetic: bool,
    pub seed: u64,
}

impl<T: Real> ImportanceSample<T> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Vec<T> {
        let mx = self.log_weights.iter().copied().fold(T::neg_infinity(), T::max);
        let w: Vec<T> = self.log_weights.iter().map(|&l| (l - mx).exp()).collect();
        let s: T = w.iter().copied().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// `(sum w)^2 / sum w^2`.
    pub fn effective_sample_size(&self) -> T {
        let w = self.normalized_weights();
        T::one() / w.iter().map(|&x| x * x).sum::<T>()
    }

    /// Weighted mean path.
    pub fn weighted_mean(&self) -> Vec<Vec<T>> {
        let w = self.normalized_weights();
        let mut out: Vec<Vec<T>> = self.draws[0].iter().map(|r| vec![T::zero(); r.len()]).collect();
        for (d, &wi) in self.draws.iter().zip(&w) {
            for (o, r) in out.iter_mut().zip(d) {
                for (x, &v) in o.iter_mut().zip(r) {
                    *x += wi * v;
                }
            }
        }
        out
    }

    /// Weighted variance of every element.
    pub fn weighted_var(&self) -> Vec<Vec<T>> {
        let w = self.normalized_weights();
        let mean = self.weighted_mean();
        let mut out: Vec<Vec<T>> = mean.iter().map(|r| vec![T::zero(); r.len()]).collect();
        for (d, &wi) in self.draws.iter().zip(&w) {
            for ((o, r), mr) in out.iter_mut().zip(d).zip(&mean) {
                for ((x, &v), &mv) in o.iter_mut().zip(r).zip(mr) {
                    *x += wi * (v - mv) * (v - mv);
                }
            }
        }
        out
    }
}

/// RNG for base replicate `b`.
pub fn stream_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(b);
    r
}

fn normal<T: Real, R: Rng>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

/// Conditional law of unobserved observation noise given the observed part:
/// `eps_m = B eps_o + C w`.
struct MissingNoise<T> {
    obs: Vec<usize>,
    mis: Vec<usize>,
    b: Matrix<T>,
    c: Matrix<T>,
}

/// Precomputed quantities for repeated simulation smoothing of one
/// Gaussian model.
pub struct SimulationSmoother<'a, T> {
    model: &'a StateSpaceModel<T>,
    fr: FilterResult<T>,
    sm: SmoothResult<T>,
    p1_chol: Matrix<T>,
    q_chol: Vec<Matrix<T>>,
    noise: Vec<Option<MissingNoise<T>>>,
}

/// Deviations of one base replicate from the smoothed mean.
struct BaseDraw<T> {
    alpha: Vec<Vec<T>>,
    eps: Vec<Vec<T>>,
    eta: Vec<Vec<T>>,
    /// `w^T w` and the number of standard normals used.
    c: T,
    q: usize,
}

impl<'a, T: Real> SimulationSmoother<'a, T> {
    pub fn new(model: &'a StateSpaceModel<T>) -> Result<Self> {
        let fr = filter(model)?;
        Self::with_filter(model, fr)
    }

    pub fn with_filter(model: &'a StateSpaceModel<T>, fr: FilterResult<T>) -> Result<Self> {
        let sm = smooth_disturbances(&fr, model)?;
        let tol = T::lit(1e-9);
        let p1_chol = model.init_cov.cholesky_psd(tol)?;
        let q_chol = model
            .state_cov
            .slices()
            .iter()
            .map(|q| q.cholesky_psd(tol))
            .collect::<Result<Vec<_>>>()?;
        let p = model.p();
        let mut noise = Vec::with_capacity(model.n());
        for t in 0..model.n() {
            let obs: Vec<usize> = (0..p).filter(|&i| fr.is_observed(t, i)).collect();
            let mis: Vec<usize> = (0..p).filter(|&i| !fr.is_observed(t, i)).collect();
            if mis.is_empty() {
                noise.push(None);
                continue;
            }
            let h = model.obs_cov.at(t);
            let hmm = h.select(&mis, &mis);
            let (b, cond) = if obs.is_empty() {
                (Matrix::zeros(mis.len(), 0), hmm)
            } else {
                let hoo = h.select(&obs, &obs);
                let hmo = h.select(&mis, &obs);
                let b = if hmo.is_zero() {
                    Matrix::zeros(mis.len(), obs.len())
                } else {
                    hoo.solve(&hmo.transpose())?.transpose()
                };
                let cond = hmm.sub(&b.matmul(&hmo.transpose()));
                (b, cond)
            };
            noise.push(Some(MissingNoise {
                obs,
                mis,
                b,
                c: cond.cholesky_psd(tol)?,
            }));
        }
        Ok(SimulationSmoother {
            model,
            fr,
            sm,
            p1_chol,
            q_chol,
            noise,
        })
    }

    pub fn smoothed(&self) -> &SmoothResult<T> {
        &self.sm
    }

    pub fn filtered(&self) -> &FilterResult<T> {
        &self.fr
    }

    fn q_chol(&self, t: usize) -> &Matrix<T> {
        &self.q_chol[if self.q_chol.len() == 1 { 0 } else { t }]
    }

    /// Unconditional draw of `(alpha+, y+)`; `y+` is in the working
    /// (decorrelated) space of the filter. Returns the normals' `w^T w`.
    fn unconditional<R: Rng>(&self, rng: &mut R, eta_out: &mut Vec<Vec<T>>) -> (Vec<Vec<T>>, Vec<T>, T, usize) {
        let (n, p, m, k) = (self.model.n(), self.model.p(), self.model.m(), self.model.k());
        let mut c = T::zero();
        let mut q = 0;
        let draw = |c: &mut T, q: &mut usize, rng: &mut R| {
            let x: T = normal(rng);
            *c += x * x;
            *q += 1;
            x
        };
        let w1: Vec<T> = (0..m).map(|_| draw(&mut c, &mut q, rng)).collect();
        let mut a: Vec<T> = self.p1_chol.mul_vec(&w1);
        for (x, &a1) in a.iter_mut().zip(&self.model.init_mean) {
            *x += a1;
        }
        let mut alpha = Vec::with_capacity(n);
        let mut yplus = vec![T::zero(); n * p];
        eta_out.clear();
        for t in 0..n {
            for i in 0..p {
                if self.fr.is_observed(t, i) {
                    let idx = self.fr.idx(t, i);
                    let s = self.fr.sigma2[idx].max(T::zero()).sqrt();
                    yplus[idx] = dot(self.fr.z_at(t, i), &a) + s * draw(&mut c, &mut q, rng);
                }
            }
            let we: Vec<T> = (0..k).map(|_| draw(&mut c, &mut q, rng)).collect();
            let eta = self.q_chol(t).mul_vec(&we);
            let next = {
                let mut nx = self.model.transition.at(t).mul_vec(&a);
                let re = self.model.selection.at(t).mul_vec(&eta);
                for (x, r) in nx.iter_mut().zip(re) {
                    *x += r;
                }
                nx
            };
            alpha.push(a);
            eta_out.push(eta);
            a = next;
        }
        (alpha, yplus, c, q)
    }

    /// Forward pass with the stored gains; returns predictions `a_t` and
    /// innovations.
    fn mean_filter(&self, yw: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
        let (n, p) = (self.model.n(), self.model.p());
        let mut a = self.model.init_mean.clone();
        let mut preds = Vec::with_capacity(n + 1);
        let mut v = vec![T::zero(); n * p];
        for t in 0..n {
            preds.push(a.clone());
            for i in 0..p {
                let idx = self.fr.idx(t, i);
                if !self.fr.observed[idx] || !self.fr.updated[idx] {
                    continue;
                }
                let vi = yw[idx] - dot(self.fr.z_at(t, i), &a);
                v[idx] = vi;
                if self.fr.diffuse_update[idx] {
                    let s = vi / self.fr.f_inf_at(t, i);
                    for (x, &kk) in a.iter_mut().zip(self.fr.k_inf_at(t, i)) {
                        *x += s * kk;
                    }
                } else {
                    let s = vi / self.fr.f_at(t, i);
                    for (x, &kk) in a.iter_mut().zip(self.fr.k_at(t, i)) {
                        *x += s * kk;
                    }
                }
            }
            a = self.model.transition.at(t).mul_vec(&a);
        }
        preds.push(a);
        (preds, v)
    }

    /// Backward pass for smoothed means given innovations `v`. Returns
    /// smoothed states, working-space eps and eta.
    #[allow(clippy::type_complexity)]
    fn mean_smoother(&self, preds: &[Vec<T>], v: &[T], disturbances: bool) -> (Vec<Vec<T>>, Vec<Vec<T>>, Vec<Vec<T>>) {
        let (n, p, m) = (self.model.n(), self.model.p(), self.model.m());
        let fr = &self.fr;
        let mut r0 = vec![T::zero(); m];
        let mut r1 = vec![T::zero(); m];
        let mut alpha = vec![Vec::new(); n];
        let mut eps = if disturbances { vec![vec![T::zero(); p]; n] } else { Vec::new() };
        let mut eta = if disturbances { vec![Vec::new(); n] } else { Vec::new() };
        for t in (0..n).rev() {
            if disturbances {
                let rt = self.model.selection.at(t).t_mul_vec(&r0);
                eta[t] = self.model.state_cov.at(t).mul_vec(&rt);
            }
            let tt = self.model.transition.at(t);
            r0 = tt.t_mul_vec(&r0);
            let diffuse_t = fr.is_diffuse_time(t);
            if diffuse_t {
                r1 = tt.t_mul_vec(&r1);
            }
            for i in (0..p).rev() {
                let idx = fr.idx(t, i);
                if !fr.observed[idx] || !fr.updated[idx] {
                    continue;
                }
                let z = fr.z_at(t, i);
                let ks = fr.k_at(t, i);
                let fs = fr.f_at(t, i);
                let s2 = fr.sigma2[idx];
                if fr.diffuse_update[idx] {
                    let ki = fr.k_inf_at(t, i);
                    let fi = fr.f_inf_at(t, i);
                    let kr0 = dot(ki, &r0);
                    if disturbances {
                        eps[t][i] = -s2 * kr0 / fi;
                    }
                    // c = (K_inf F* / F_inf - K*) / F_inf
                    let cr0: T = ki.iter().zip(ks).zip(&r0).map(|((&a, &b), &r)| (a * fs / fi - b) / fi * r).sum();
                    let kr1 = dot(ki, &r1);
                    for j in 0..m {
                        r1[j] = r1[j] - z[j] * kr1 / fi + z[j] * (v[idx] / fi + cr0);
                        r0[j] -= z[j] * kr0 / fi;
                    }
                } else {
                    let kr0 = dot(ks, &r0);
                    if disturbances {
                        eps[t][i] = s2 * (v[idx] - kr0) / fs;
                    }
                    for j in 0..m {
                        r0[j] += z[j] * (v[idx] - kr0) / fs;
                    }
                    if diffuse_t {
                        let kr1 = dot(ks, &r1);
                        for j in 0..m {
                            r1[j] -= z[j] * kr1 / fs;
                        }
                    }
                }
            }
            let mut ah = preds[t].clone();
            let pr = fr.p_star[t].mul_vec(&r0);
            for (x, d) in ah.iter_mut().zip(pr) {
                *x += d;
            }
            if diffuse_t {
                let pr = fr.p_inf[t].mul_vec(&r1);
                for (x, d) in ah.iter_mut().zip(pr) {
                    *x += d;
                }
            }
            alpha[t] = ah;
        }
        (alpha, eps, eta)
    }

    fn base_draw<R: Rng>(&self, rng: &mut R, disturbances: bool) -> BaseDraw<T> {
        let (n, p) = (self.model.n(), self.model.p());
        let mut eta_plus = Vec::new();
        let (alpha_plus, yplus, mut c, mut q) = self.unconditional(rng, &mut eta_plus);
        let (preds, v) = self.mean_filter(&yplus);
        let (ahat, _, etahat) = self.mean_smoother(&preds, &v, disturbances);
        let alpha: Vec<Vec<T>> = alpha_plus
            .iter()
            .zip(&ahat)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x - y).collect())
            .collect();
        let mut eps = Vec::new();
        let mut eta = Vec::new();
        if disturbances {
            eta = eta_plus
                .iter()
                .zip(&etahat)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x - y).collect())
                .collect();
            eps = vec![vec![T::zero(); p]; n];
            for t in 0..n {
                let zd = self.model.loadings.at(t).mul_vec(&alpha[t]);
                for i in 0..p {
                    if self.fr.is_observed(t, i) {
                        eps[t][i] = -zd[i];
                    }
                }
                if let Some(mn) = &self.noise[t] {
                    let w: Vec<T> = (0..mn.mis.len())
                        .map(|_| {
                            let x: T = normal(rng);
                            c += x * x;
                            q += 1;
                            x
                        })
                        .collect();
                    let eo: Vec<T> = mn.obs.iter().map(|&i| eps[t][i]).collect();
                    let mut em = mn.c.mul_vec(&w);
                    if !mn.obs.is_empty() {
                        for (x, b) in em.iter_mut().zip(mn.b.mul_vec(&eo)) {
                            *x += b;
                        }
                    }
                    for (&i, x) in mn.mis.iter().zip(em) {
                        eps[t][i] = x;
                    }
                }
            }
        }
        BaseDraw { alpha, eps, eta, c, q }
    }

    /// Value of `what` at scale `s` around the smoothed mean.
    fn materialize(&self, d: &BaseDraw<T>, s: T, what: SimTarget) -> Vec<Vec<T>> {
        let n = self.model.n();
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let alpha: Vec<T> = self.sm.alphahat[t].iter().zip(&d.alpha[t]).map(|(&a, &b)| a + s * b).collect();
            let row = match what {
                SimTarget::States => alpha,
                SimTarget::Signals => self.model.loadings.at(t).mul_vec(&alpha),
                SimTarget::Disturbances => {
                    let mut r: Vec<T> = self.sm.epshat[t].iter().zip(&d.eps[t]).map(|(&a, &b)| a + s * b).collect();
                    r.extend(self.sm.etahat[t].iter().zip(&d.eta[t]).map(|(&a, &b)| a + s * b));
                    r
                }
                SimTarget::Observations => {
                    let th = self.model.loadings.at(t).mul_vec(&alpha);
                    (0..self.model.p())
                        .map(|i| match self.model.y.get(t, i) {
                            Some(y) => y,
                            None => th[i] + self.sm.epshat[t][i] + s * d.eps[t][i],
                        })
                        .collect()
                }
            };
            out.push(row);
        }
        out
    }

    /// `nsim` base replicates; with antithetics each yields four draws.
    pub fn sample(&self, what: SimTarget, nsim: usize, seed: u64, antithetic: bool) -> Result<Vec<Vec<Vec<T>>>> {
        if nsim == 0 {
            return Err(Error::Usage("nsim must be positive".into()));
        }
        let disturbances = matches!(what, SimTarget::Disturbances | SimTarget::Observations);
        let blocks: Vec<Vec<Vec<Vec<T>>>> = (0..nsim as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(seed, b);
                let d = self.base_draw(&mut rng, disturbances);
                if !antithetic {
                    return vec![self.materialize(&d, T::one(), what)];
                }
                let s = scale_antithetic(d.c, d.q);
                vec![
                    self.materialize(&d, T::one(), what),
                    self.materialize(&d, -T::one(), what),
                    self.materialize(&d, s, what),
                    self.materialize(&d, -s, what),
                ]
            })
            .collect();
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Joint draws from `p(alpha_t | y_1..y_{t-1})` for all `t`.
    pub fn sample_predictive(&self, nsim: usize, seed: u64) -> Result<Vec<Vec<Vec<T>>>> {
        if nsim == 0 {
            return Err(Error::Usage("nsim must be positive".into()));
        }
        Ok((0..nsim as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(seed, b);
                let mut eta = Vec::new();
                let (alpha_plus, yplus, _, _) = self.unconditional(&mut rng, &mut eta);
                let (preds, _) = self.mean_filter(&yplus);
                (0..self.model.n())
                    .map(|t| {
                        (0..self.model.m())
                            .map(|j| self.fr.a[t][j] + alpha_plus[t][j] - preds[t][j])
                            .collect()
                    })
                    .collect()
            })
            .collect())
    }
}

/// Scale factor `sqrt(c~ / c)` with `c~ = F^{-1}(1 - F(c))`, `F` the
/// chi-square distribution function with `q` degrees of freedom.
pub fn scale_antithetic<T: Real>(c: T, q: usize) -> T {
    if q == 0 || !(c > T::zero()) {
        return T::one();
    }
    let chi = ChiSquared::new(q as f64).expect("positive degrees of freedom");
    let cf = c.as_f64();
    let upper = 1.0 - chi.cdf(cf);
    let ct = if upper <= 0.0 || upper >= 1.0 { cf } else { chi.inverse_cdf(upper) };
    T::lit((ct / cf).sqrt())
}

/// Draws from the Gaussian posterior of the model.
pub fn simulate_conditional<T: Real>(
    model: &StateSpaceModel<T>,
    what: SimTarget,
    nsim: usize,
    seed: u64,
    antithetic: bool,
) -> Result<ImportanceSample<T>> {
    if !model.is_gaussian() {
        return Err(Error::Usage("simulate_conditional needs a Gaussian model".into()));
    }
    let ss = SimulationSmoother::new(model)?;
    let draws = ss.sample(what, nsim, seed, antithetic)?;
    Ok(ImportanceSample {
        log_weights: vec![T::zero(); draws.len()],
        draws,
        what,
        antithetic,
        seed,
    })
}

/// Draws of the one-step-ahead predictive states, jointly over time.
pub fn simulate_predictive<T: Real>(model: &StateSpaceModel<T>, nsim: usize, seed: u64) -> Result<ImportanceSample<T>> {
    if !model.is_gaussian() {
        return Err(Error::Usage("simulate_predictive needs a Gaussian model".into()));
    }
    let ss = SimulationSmoother::new(model)?;
    let draws = ss.sample_predictive(nsim, seed)?;
    Ok(ImportanceSample {
        log_weights: vec![T::zero(); draws.len()],
        draws,
        what: SimTarget::States,
        antithetic: false,
        seed,
    })
}

/// Importance sample of states or signals for a non-Gaussian model.
pub fn importance_sample<T: Real>(
    model: &StateSpaceModel<T>,
    what: SimTarget,
    nsim: usize,
    seed: u64,
    antithetic: bool,
    opts: &ApproxOptions<T>,
) -> Result<ImportanceSample<T>> {
    if model.is_gaussian() {
        return simulate_conditional(model, what, nsim, seed, antithetic);
    }
    let approx = approximate(model, opts)?;
    importance_sample_from(model, &approx, what, nsim, seed, antithetic)
}

/// [`importance_sample`] for an already computed approximation.
pub fn importance_sample_from<T: Real>(
    model: &StateSpaceModel<T>,
    approx: &ApproximationResult<T>,
    what: SimTarget,
    nsim: usize,
    seed: u64,
    antithetic: bool,
) -> Result<ImportanceSample<T>> {
    if !matches!(what, SimTarget::States | SimTarget::Signals) {
        return Err(Error::Usage("importance sampling supports states or signals".into()));
    }
    if !approx.converged {
        return Err(Error::Approx("Gaussian approximation did not converge".into()));
    }
    let ss = SimulationSmoother::with_filter(&approx.working, approx.filtered.clone())?;
    let states = ss.sample(SimTarget::States, nsim, seed, antithetic)?;
    let n = model.n();
    let log_weights = states
        .par_iter()
        .map(|path| {
            let theta: Vec<Vec<T>> = (0..n).map(|t| model.loadings.at(t).mul_vec(&path[t])).collect();
            Ok(log_weight(model, approx, &theta)? - approx.log_w_hat)
        })
        .collect::<Result<Vec<T>>>()?;
    let draws = match what {
        SimTarget::States => states,
        _ => states
            .into_iter()
            .map(|path| (0..n).map(|t| model.loadings.at(t).mul_vec(&path[t])).collect())
            .collect(),
    };
    Ok(ImportanceSample {
        draws,
        log_weights,
        what,
        antithetic,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    /// Interval for the conditional mean `E(y_t | theta_t)`.
    Confidence,
    /// Interval for a new observation `y_t`.
    Prediction,
}

/// Point predictions and bounds, n x p.
#[derive(Debug, Clone)]
pub struct Intervals<T> {
    pub point: Vec<Vec<T>>,
    pub lower: Vec<Vec<T>>,
    pub upper: Vec<Vec<T>>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile<T: Real>(sorted: &[T], prob: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = T::lit((n - 1) as f64) * prob;
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - T::lit(lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn draw_observation<T: Real, R: Rng>(dist: Distribution, u: T, theta: T, h: T, rng: &mut R) -> T {
    let th = theta.as_f64();
    let uf = u.as_f64();
    let val = match dist {
        Distribution::Gaussian => th + h.max(T::zero()).as_f64().sqrt() * rng.sample::<f64, _>(StandardNormal),
        Distribution::Poisson => {
            let lam = uf * th.exp();
            if lam > 0.0 && lam.is_finite() {
                Poisson::new(lam).map(|d| d.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        }
        Distribution::Binomial => {
            let pi = 1.0 / (1.0 + (-th).exp());
            Binomial::new(uf.round() as u64, pi).map(|d| d.sample(rng) as f64).unwrap_or(0.0)
        }
        Distribution::Gamma => {
            let mu = th.exp();
            Gamma::new(uf, mu / uf).map(|d| d.sample(rng)).unwrap_or(mu)
        }
        Distribution::NegativeBinomial => {
            let mu = th.exp();
            let lam = Gamma::new(uf, mu / uf).map(|d| d.sample(rng)).unwrap_or(mu);
            if lam > 0.0 && lam.is_finite() {
                Poisson::new(lam).map(|d| d.sample(rng)).unwrap_or(0.0)
            } else {
                0.0
            }
        }
    };
    T::lit(val)
}

/// Simulation-based intervals: weighted signal draws, resampling by the
/// weights, optionally drawing `y | theta`, then empirical quantiles.
pub fn predict_intervals_nongaussian<T: Real>(
    model: &StateSpaceModel<T>,
    level: T,
    kind: IntervalKind,
    nsim: usize,
    seed: u64,
    opts: &ApproxOptions<T>,
) -> Result<Intervals<T>> {
    if !(level >= T::zero() && level < T::one()) {
        return Err(Error::Usage("level must lie in [0, 1)".into()));
    }
    let is = importance_sample(model, SimTarget::Signals, nsim, seed, true, opts)?;
    let total = is.len();
    if (total as f64) < 100.0 / (1.0 - level.as_f64()) {
        warn!("{total} draws are few for a {level} interval");
    }
    let w = is.normalized_weights();
    let mut rng = stream_rng(seed, u64::MAX);
    let idx = WeightedIndex::new(w.iter().map(|x| x.as_f64())).map_err(|e| Error::numeric(format!("invalid weights: {e}")))?;
    let picks: Vec<usize> = (0..total).map(|_| idx.sample(&mut rng)).collect();
    let (n, p) = (model.n(), model.p());
    let lo_p = (T::one() - level) / T::lit(2.0);
    let hi_p = (T::one() + level) / T::lit(2.0);
    let mut out = Intervals {
        point: vec![vec![T::zero(); p]; n],
        lower: vec![vec![T::zero(); p]; n],
        upper: vec![vec![T::zero(); p]; n],
    };
    let mut vals = Vec::with_capacity(total);
    for t in 0..n {
        for i in 0..p {
            let dist = model.distribution[i];
            let u = model.obs_param[(t, i)];
            let h = model.obs_cov.at(t)[(i, i)];
            let mean_of = |th: T| if dist.is_gaussian() { th } else { mean_var(dist, u, th).0 };
            out.point[t][i] = is.draws.iter().zip(&w).map(|(d, &wi)| wi * mean_of(d[t][i])).sum();
            vals.clear();
            for &k in &picks {
                let th = is.draws[k][t][i];
                vals.push(match kind {
                    IntervalKind::Confidence => mean_of(th),
                    IntervalKind::Prediction => draw_observation(dist, u, th, h, &mut rng),
                });
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            out.lower[t][i] = quantile(&vals, lo_p);
            out.upper[t][i] = quantile(&vals, hi_p);
        }
    }
    Ok(out)
}

/// Standard normal quantile.
pub fn normal_quantile<T: Real>(prob: T) -> T {
    T::lit(statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(prob.as_f64()))
}
