//! Sequential (univariate) Kalman filter with exact diffuse initialization.
//!
//! Each observation vector is processed one element at a time. Correlated
//! observation noise is first decorrelated with an LDL factorization of the
//! observed block of `H_t`, so every scalar update sees a diagonal variance.
//! While `P_inf` is nonzero the diffuse recursions are used; the diffuse
//! phase ends at the first time point after which `P_inf` vanishes.

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{ObservationTransform, StateSpaceModel};
use crate::scalar::Real;

/// Output of [`filter`].
///
/// Per-observation arrays are stored time-major with `p` entries per time
/// point (`m` entries per cell for gain vectors). Unobserved cells are zero
/// and flagged in `observed`. Indices are 0-based; `d` counts the time points
/// of the diffuse phase, so times `0..d` used the diffuse recursions.
#[derive(Debug, Clone)]
pub struct FilterResult<T> {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    /// One-step-ahead state predictions `a_{t,1}`, `n + 1` of them.
    pub a: Vec<Vec<T>>,
    /// `P_{*,t,1}` (equal to `P_{t,1}` after the diffuse phase), `n + 1`.
    pub p_star: Vec<Matrix<T>>,
    /// `P_{inf,t,1}` for `t = 0..=d`; the last entry is zero when the
    /// diffuse phase ended.
    pub p_inf: Vec<Matrix<T>>,
    pub v: Vec<T>,
    /// `F_{*,t,i}` during the diffuse phase, `F_{t,i}` afterwards.
    pub f: Vec<T>,
    /// `K_{*,t,i}` / `K_{t,i}`.
    pub k: Vec<T>,
    /// `F_{inf,t,i}` for diffuse times only (`d * p`).
    pub f_inf: Vec<T>,
    /// `K_{inf,t,i}` for diffuse times only (`d * p * m`).
    pub k_inf: Vec<T>,
    /// Whether the `F_inf > 0` branch was taken at (t, i).
    pub diffuse_update: Vec<bool>,
    /// Whether the scalar update at `(t, i)` changed the state (false when
    /// the prediction variance was numerically zero).
    pub updated: Vec<bool>,
    /// Working (possibly decorrelated) observations and loadings rows used in
    /// the scalar updates, plus their noise variances.
    pub y_work: Vec<T>,
    pub z_work: Vec<T>,
    pub sigma2: Vec<T>,
    pub observed: Vec<bool>,
    /// Whether the noise of time `t` was decorrelated by an LDL factor.
    pub transformed: Vec<bool>,
    /// Per-cell contributions `w_{i,t}` to `-2 log L`.
    pub loglik_terms: Vec<T>,
    pub d: usize,
    /// 1-based index (within time `d`) of the last diffuse update.
    pub j: usize,
    /// False when `P_inf` was still nonzero after the last observation.
    pub diffuse_resolved: bool,
}

impl<T: Real> FilterResult<T> {
    #[inline]
    pub fn idx(&self, t: usize, i: usize) -> usize {
        t * self.p + i
    }

    #[inline]
    pub fn v_at(&self, t: usize, i: usize) -> T {
        self.v[self.idx(t, i)]
    }

    #[inline]
    pub fn f_at(&self, t: usize, i: usize) -> T {
        self.f[self.idx(t, i)]
    }

    #[inline]
    pub fn f_inf_at(&self, t: usize, i: usize) -> T {
        if t < self.d {
            self.f_inf[self.idx(t, i)]
        } else {
            T::zero()
        }
    }

    #[inline]
    pub fn k_at(&self, t: usize, i: usize) -> &[T] {
        let s = self.idx(t, i) * self.m;
        &self.k[s..s + self.m]
    }

    #[inline]
    pub fn k_inf_at(&self, t: usize, i: usize) -> &[T] {
        let s = self.idx(t, i) * self.m;
        &self.k_inf[s..s + self.m]
    }

    #[inline]
    pub fn z_at(&self, t: usize, i: usize) -> &[T] {
        let s = self.idx(t, i) * self.m;
        &self.z_work[s..s + self.m]
    }

    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.observed[self.idx(t, i)]
    }

    #[inline]
    pub fn is_diffuse_time(&self, t: usize) -> bool {
        t < self.d
    }

    /// `P_{inf,t,1}`, zero outside the diffuse phase.
    pub fn p_inf_at(&self, t: usize) -> Matrix<T> {
        if t < self.p_inf.len() {
            self.p_inf[t].clone()
        } else {
            Matrix::zeros(self.m, self.m)
        }
    }

    /// Number of scalar updates that took the `F_inf > 0` branch.
    pub fn diffuse_update_count(&self) -> usize {
        self.diffuse_update.iter().filter(|&&b| b).count()
    }

    /// `-1/2 sum w_{i,t}`.
    pub fn loglik(&self) -> T {
        -T::lit(0.5) * self.loglik_terms.iter().copied().sum::<T>()
    }
}

/// Threshold below which a one-step prediction variance is treated as zero.
#[inline]
pub(crate) fn variance_floor<T: Real>(z: &[T], p: &Matrix<T>, sigma2: T) -> T {
    let mut s = T::zero();
    for (j, &zj) in z.iter().enumerate() {
        s += zj.abs() * p[(j, j)].abs().sqrt();
    }
    T::epsilon() * T::lit(64.0) * (s * s + sigma2.abs())
}

/// Threshold for the diffuse `F_inf` zero test.
#[inline]
pub(crate) fn diffuse_threshold<T: Real>(tol: T, z: &[T]) -> T {
    tol * T::one().max(dot(z, z))
}

/// `out = A X A^T (+ add)`, written symmetrically.
fn sandwich_into<T: Real>(a: &Matrix<T>, x: &Matrix<T>, add: Option<&Matrix<T>>, out: &mut Matrix<T>) {
    let m = a.rows();
    let ax = a.matmul(x);
    for i in 0..m {
        for j in i..m {
            let mut s = dot(ax.row(i), a.row(j));
            if let Some(c) = add {
                s += c[(i, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
}

/// Runs the sequential exact-diffuse Kalman filter.
///
/// All series must be gaussian; non-gaussian models are filtered through
/// their Gaussian approximation (see [`crate::approx`]).
pub fn filter<T: Real>(model: &StateSpaceModel<T>) -> Result<FilterResult<T>> {
    if let Some(i) = (0..model.p()).find(|&i| !model.distribution[i].is_gaussian()) {
        return Err(Error::Usage(format!(
            "series {} is {}; filter the Gaussian approximation instead",
            i + 1,
            model.distribution[i]
        )));
    }
    let (n, p, m) = (model.n(), model.p(), model.m());
    let tol = model.tol;
    let log2pi = (T::lit(2.0) * T::PI()).ln();

    let mut res = FilterResult {
        n,
        p,
        m,
        a: Vec::with_capacity(n + 1),
        p_star: Vec::with_capacity(n + 1),
        p_inf: Vec::new(),
        v: vec![T::zero(); n * p],
        f: vec![T::zero(); n * p],
        k: vec![T::zero(); n * p * m],
        f_inf: Vec::new(),
        k_inf: Vec::new(),
        diffuse_update: vec![false; n * p],
        updated: vec![false; n * p],
        y_work: vec![T::zero(); n * p],
        z_work: vec![T::zero(); n * p * m],
        sigma2: vec![T::zero(); n * p],
        observed: vec![false; n * p],
        transformed: vec![false; n],
        loglik_terms: vec![T::zero(); n * p],
        d: 0,
        j: 0,
        diffuse_resolved: true,
    };

    let mut a = model.init_mean.clone();
    let mut pstar = model.init_cov.clone();
    let mut pinf = model.init_diffuse.clone();
    let mut diffuse = pinf.max_abs() > T::zero();

    let rqr_const = if model.selection.is_time_varying() || model.state_cov.is_time_varying() {
        None
    } else {
        Some(model.selection.at(0).sandwich(model.state_cov.at(0)))
    };

    let mut kstar = vec![T::zero(); m];
    let mut kinf = vec![T::zero(); m];
    let mut next = Matrix::zeros(m, m);
    let mut cached_tr: Option<(Vec<usize>, ObservationTransform<T>)> = None;

    for t in 0..n {
        res.a.push(a.clone());
        res.p_star.push(pstar.clone());
        if diffuse {
            res.p_inf.push(pinf.clone());
            res.f_inf.extend(std::iter::repeat_n(T::zero(), p));
            res.k_inf.extend(std::iter::repeat_n(T::zero(), p * m));
        }

        let obs = model.observed_at(t);
        if !obs.is_empty() {
            let h = model.obs_cov.at(t);
            let reuse = !model.obs_cov.is_time_varying() && cached_tr.as_ref().is_some_and(|(o, _)| *o == obs);
            if !reuse {
                cached_tr = Some((obs.clone(), ObservationTransform::new(h, &obs).map_err(|e| match e {
                    Error::Numeric { message, .. } => Error::Numeric {
                        message,
                        location: Some(format!("t={}", t + 1)),
                    },
                    other => other,
                })?));
            }
            let tr = &cached_tr.as_ref().unwrap().1;
            res.transformed[t] = tr.ldl.is_some();
            let yo: Vec<T> = obs.iter().map(|&i| model.y.get(t, i).unwrap()).collect();
            let yw = tr.apply_vec(&yo);
            let zw = tr.apply_rows(model.loadings.at(t), &obs);

            for (w, &i) in obs.iter().enumerate() {
                let idx = t * p + i;
                let z = zw.row(w);
                let s2 = tr.variances[w];
                res.observed[idx] = true;
                res.y_work[idx] = yw[w];
                res.sigma2[idx] = s2;
                res.z_work[idx * m..(idx + 1) * m].copy_from_slice(z);

                let v = yw[w] - dot(z, &a);
                for (r, kr) in kstar.iter_mut().enumerate() {
                    *kr = dot(pstar.row(r), z);
                }
                let fstar = dot(z, &kstar) + s2;
                res.v[idx] = v;
                res.f[idx] = fstar;
                res.k[idx * m..(idx + 1) * m].copy_from_slice(&kstar);
                if !(v.is_finite() && fstar.is_finite()) {
                    return Err(Error::numeric_at("non-finite innovation", t, i));
                }

                if diffuse {
                    for (r, kr) in kinf.iter_mut().enumerate() {
                        *kr = dot(pinf.row(r), z);
                    }
                    let finf = dot(z, &kinf);
                    res.f_inf[idx] = finf;
                    res.k_inf[idx * m..(idx + 1) * m].copy_from_slice(&kinf);
                    if finf > diffuse_threshold(tol, z) {
                        res.diffuse_update[idx] = true;
                        res.updated[idx] = true;
                        let finv = T::one() / finf;
                        axpy(v * finv, &kinf, &mut a);
                        let c = fstar * finv * finv;
                        pstar.rank1_update(c, &kinf, &kinf);
                        pstar.rank1_update(-finv, &kstar, &kinf);
                        pstar.rank1_update(-finv, &kinf, &kstar);
                        pinf.rank1_update(-finv, &kinf, &kinf);
                        res.loglik_terms[idx] = finf.ln();
                        continue;
                    }
                }
                if fstar > variance_floor(z, &pstar, s2) {
                    res.updated[idx] = true;
                    let finv = T::one() / fstar;
                    axpy(v * finv, &kstar, &mut a);
                    pstar.rank1_update(-finv, &kstar, &kstar);
                    res.loglik_terms[idx] = log2pi + fstar.ln() + v * v * finv;
                }
            }
        }

        let tt = model.transition.at(t);
        a = tt.mul_vec(&a);
        let rqr_t;
        let rqr = match &rqr_const {
            Some(c) => c,
            None => {
                rqr_t = model.selection.at(t).sandwich(model.state_cov.at(t));
                &rqr_t
            }
        };
        sandwich_into(tt, &pstar, Some(rqr), &mut next);
        std::mem::swap(&mut pstar, &mut next);
        if diffuse {
            sandwich_into(tt, &pinf, None, &mut next);
            std::mem::swap(&mut pinf, &mut next);
            if pinf.max_abs() <= tol {
                pinf = Matrix::zeros(m, m);
                diffuse = false;
                res.d = t + 1;
            }
        }
        if a.iter().any(|x| !x.is_finite()) || !pstar.is_finite() {
            return Err(Error::Numeric {
                message: "non-finite state prediction".into(),
                location: Some(format!("t={}", t + 1)),
            });
        }
    }
    res.a.push(a);
    res.p_star.push(pstar);
    if diffuse {
        res.d = n;
        res.diffuse_resolved = false;
        res.p_inf.push(pinf);
        debug!("diffuse phase did not end within the {n} observed time points");
    } else {
        res.p_inf.push(Matrix::zeros(m, m));
    }
    res.f_inf.truncate(res.d * p);
    res.k_inf.truncate(res.d * p * m);
    res.p_inf.truncate(res.d + 1);
    if res.d > 0 {
        let td = res.d - 1;
        res.j = (0..p).rev().find(|&i| res.diffuse_update[td * p + i]).map_or(0, |i| i + 1);
    }
    Ok(res)
}

/// Conventional multivariate quantities at one time point.
#[derive(Debug, Clone)]
pub struct MultivariateStep<T> {
    /// Indices of the observed series, defining the row order below.
    pub observed: Vec<usize>,
    pub v: Vec<T>,
    pub f: Matrix<T>,
    /// `P_t Z_t^T`, m x p_t.
    pub k: Matrix<T>,
}

/// Recovers `v_t`, `F_t` and `K_t = P_t Z_t^T` of the multivariate filter
/// from the sequential output at a non-diffuse time `t`.
pub fn reconstruct_multivariate<T: Real>(
    fr: &FilterResult<T>,
    model: &StateSpaceModel<T>,
    t: usize,
) -> Result<MultivariateStep<T>> {
    if t < fr.d {
        return Err(Error::DiffusePhase { t: t + 1, d: fr.d });
    }
    if t >= fr.n {
        return Err(Error::Usage(format!("time {} beyond the filtered range", t + 1)));
    }
    let obs = model.observed_at(t);
    let all: Vec<usize> = (0..fr.m).collect();
    let z = model.loadings.at(t).select(&obs, &all);
    let h = model.obs_cov.at(t).select(&obs, &obs);
    let pt = &fr.p_star[t];
    let k = pt.matmul_t(&z);
    let mut f = z.matmul(&k).add(&h);
    f.symmetrize();
    let za = z.mul_vec(&fr.a[t]);
    let v = obs.iter().zip(za).map(|(&i, e)| model.y.get(t, i).unwrap() - e).collect();
    Ok(MultivariateStep { observed: obs, v, f, k })
}

/// Output of [`filter_multivariate_oracle`].
#[derive(Debug, Clone)]
pub struct OracleFilter<T> {
    pub a: Vec<Vec<T>>,
    pub p: Vec<Matrix<T>>,
    pub v: Vec<Vec<T>>,
    pub f: Vec<Matrix<T>>,
    pub loglik: T,
}

/// Textbook multivariate Kalman filter with a proper prior.
///
/// Kept as a reference implementation for testing the sequential filter.
pub fn filter_multivariate_oracle<T: Real>(model: &StateSpaceModel<T>) -> Result<OracleFilter<T>> {
    if model.has_diffuse() {
        return Err(Error::Usage("the multivariate reference filter needs a proper prior".into()));
    }
    let n = model.n();
    let m = model.m();
    let all: Vec<usize> = (0..m).collect();
    let log2pi = (T::lit(2.0) * T::PI()).ln();
    let mut a = model.init_mean.clone();
    let mut p = model.init_cov.clone();
    let mut out = OracleFilter {
        a: Vec::with_capacity(n + 1),
        p: Vec::with_capacity(n + 1),
        v: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        loglik: T::zero(),
    };
    for t in 0..n {
        out.a.push(a.clone());
        out.p.push(p.clone());
        let obs = model.observed_at(t);
        let (mut au, mut pu) = (a.clone(), p.clone());
        if obs.is_empty() {
            out.v.push(Vec::new());
            out.f.push(Matrix::zeros(0, 0));
        } else {
            let z = model.loadings.at(t).select(&obs, &all);
            let h = model.obs_cov.at(t).select(&obs, &obs);
            let za = z.mul_vec(&a);
            let v: Vec<T> = obs.iter().zip(&za).map(|(&i, &e)| model.y.get(t, i).unwrap() - e).collect();
            let k = p.matmul_t(&z);
            let f = z.matmul(&k).add(&h);
            let lu = f.lu().map_err(|_| Error::numeric_at("singular F_t", t, 0))?;
            let finv_v = lu.solve_vec(&v);
            let det = lu.det();
            if !(det > T::zero()) {
                return Err(Error::numeric_at("F_t is not positive definite", t, 0));
            }
            out.loglik -= T::lit(0.5) * (T::lit(obs.len() as f64) * log2pi + det.ln() + dot(&v, &finv_v));
            axpy(T::one(), &k.mul_vec(&finv_v), &mut au);
            let finv_kt = lu.solve(&k.transpose())?;
            pu = p.sub(&k.matmul(&finv_kt));
            pu.symmetrize();
            out.v.push(v);
            out.f.push(f);
        }
        let tt = model.transition.at(t);
        a = tt.mul_vec(&au);
        p = tt.sandwich(&pu).add(&model.selection.at(t).sandwich(model.state_cov.at(t)));
        p.symmetrize();
    }
    out.a.push(a);
    out.p.push(p);
    Ok(out)
}
