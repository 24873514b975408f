//! Gaussian, diffuse and importance-sampling log-likelihoods.

use std::fmt;

use log::warn;

use crate::approx::{approximate, density_eval, ApproxOptions};
use crate::error::{Error, Result};
use crate::filter::{filter, FilterResult};
use crate::model::{Distribution, StateSpaceModel};
use crate::scalar::Real;
use crate::simulation::{importance_sample_from, SimTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogLikMethod {
    Gaussian,
    Diffuse,
    /// Gaussian approximation at the mode, no simulation.
    ApproxN0,
    Importance,
}

impl LogLikMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLikMethod::Gaussian => "gaussian",
            LogLikMethod::Diffuse => "diffuse",
            LogLikMethod::ApproxN0 => "approx-N0",
            LogLikMethod::Importance => "importance",
        }
    }
}

impl fmt::Display for LogLikMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik<T> {
    pub value: T,
    pub method: LogLikMethod,
    pub nsim: usize,
    /// Monte Carlo standard error; zero unless importance sampled.
    pub mc_se: T,
}

/// `-1/2 sum w_{i,t}` from a completed filter run.
pub fn loglik_gaussian<T: Real>(fr: &FilterResult<T>) -> LogLik<T> {
    let value = fr.loglik();
    if !value.is_finite() {
        warn!("log-likelihood is not finite");
    }
    if !fr.diffuse_resolved {
        warn!("diffuse phase did not end within the data; the likelihood ignores unidentified states");
    }
    LogLik {
        value,
        method: if fr.diffuse_update_count() > 0 || fr.d > 0 {
            LogLikMethod::Diffuse
        } else {
            LogLikMethod::Gaussian
        },
        nsim: 0,
        mc_se: T::zero(),
    }
}

/// `log L_g + log w-hat + log mean w*`, with `nsim` base draws. Gaussian
/// models reduce to [`loglik_gaussian`].
pub fn loglik_nongaussian<T: Real>(
    model: &StateSpaceModel<T>,
    nsim: usize,
    seed: u64,
    antithetic: bool,
    opts: &ApproxOptions<T>,
) -> Result<LogLik<T>> {
    if model.is_gaussian() {
        return Ok(loglik_gaussian(&filter(model)?));
    }
    let ap = approximate(model, opts)?;
    if !ap.converged {
        return Err(Error::Approx(format!(
            "Gaussian approximation did not converge in {} iterations",
            ap.iterations
        )));
    }
    if !ap.filtered.diffuse_resolved {
        warn!("diffuse phase did not end within the data; the likelihood ignores unidentified states");
    }
    let base = ap.loglik_g + ap.log_w_hat;
    if let Some(bound) = saturated_bound(model) {
        if base > bound + T::lit(1e-6) * (T::one() + bound.abs()) {
            return Err(Error::numeric(format!(
                "approximate log-likelihood {} exceeds the saturated bound {}",
                base.as_f64(),
                bound.as_f64()
            )));
        }
    }
    if nsim == 0 {
        return Ok(LogLik {
            value: base,
            method: LogLikMethod::ApproxN0,
            nsim: 0,
            mc_se: T::zero(),
        });
    }
    let is = importance_sample_from(model, &ap, SimTarget::Signals, nsim, seed, antithetic)?;
    let (log_mean, mc_se) = log_mean_exp(&is.log_weights, if antithetic { 4 } else { 1 });
    Ok(LogLik {
        value: base + log_mean,
        method: LogLikMethod::Importance,
        nsim,
        mc_se,
    })
}

/// Sum over observed cells of `sup_theta log p(y | theta)`. No model
/// without Gaussian series can have a larger log-likelihood, so a larger
/// approximation signals a numerically broken mode.
fn saturated_bound<T: Real>(model: &StateSpaceModel<T>) -> Option<T> {
    if model.distribution.iter().any(|d| d.is_gaussian()) {
        return None;
    }
    let lim = T::lit(50.0);
    let mut total = T::zero();
    for t in 0..model.n() {
        for i in model.observed_at(t) {
            let dist = model.distribution[i];
            let (y, u) = (model.y.get(t, i)?, model.obs_param[(t, i)]);
            let theta = match dist {
                Distribution::Poisson => (y / u).ln(),
                Distribution::Binomial => (y / (u - y)).ln(),
                Distribution::Gamma | Distribution::NegativeBinomial => y.ln(),
                Distribution::Gaussian => return None,
            };
            total += density_eval(dist, y, u, theta.max(-lim).min(lim)).ok()?.logp;
        }
    }
    Some(total)
}

/// Log of the mean of `exp(lw)` and its delta-method standard error, with
/// draws grouped into independent blocks of `block` values.
pub fn log_mean_exp<T: Real>(lw: &[T], block: usize) -> (T, T) {
    let mx = lw.iter().copied().fold(T::neg_infinity(), T::max);
    let means: Vec<T> = lw
        .chunks(block)
        .map(|c| c.iter().map(|&l| (l - mx).exp()).sum::<T>() / T::lit(c.len() as f64))
        .collect();
    let b = T::lit(means.len() as f64);
    let mean = means.iter().copied().sum::<T>() / b;
    let se = if means.len() > 1 {
        let var = means.iter().map(|&w| (w - mean) * (w - mean)).sum::<T>() / (b - T::one());
        (var / b).sqrt() / mean
    } else {
        T::zero()
    };
    (mx + mean.ln(), se)
}

/// Variance estimate `sum v^2 / F / #steps` over non-diffuse observed steps
/// of a unit-variance run; restricted maximum likelihood for regressions.
pub fn reml_variance<T: Real>(fr: &FilterResult<T>) -> Result<T> {
    let mut sum = T::zero();
    let mut count = 0usize;
    for t in 0..fr.n {
        for i in 0..fr.p {
            let idx = fr.idx(t, i);
            if fr.observed[idx] && fr.updated[idx] && !fr.diffuse_update[idx] {
                sum += fr.v[idx] * fr.v[idx] / fr.f[idx];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Undefined("no non-diffuse prediction errors".into()));
    }
    Ok(sum / T::lit(count as f64))
}

/// True when `Z` or `T` columns of diffuse initial states differ between
/// two parameterizations of the same model; the diffuse likelihood then
/// depends on parameters in a way its value does not correct for.
pub fn diffuse_columns_differ<T: Real>(a: &StateSpaceModel<T>, b: &StateSpaceModel<T>) -> bool {
    let diffuse: Vec<usize> = (0..a.m()).filter(|&j| a.init_diffuse[(j, j)] != T::zero()).collect();
    if diffuse.is_empty() {
        return false;
    }
    let differs = |x: &crate::model::SystemMatrix<T>, y: &crate::model::SystemMatrix<T>| {
        x.slices().iter().zip(y.slices()).any(|(p, q)| {
            (0..p.rows()).any(|r| diffuse.iter().any(|&j| p[(r, j)] != q[(r, j)]))
        }) || x.len() != y.len()
    };
    differs(&a.loadings, &b.loadings) || differs(&a.transition, &b.transition)
}
