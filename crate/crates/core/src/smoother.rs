//! Backward state and disturbance smoothing, including the exact diffuse
//! recursions for the first `d` time points.

use crate::error::{Error, Result};
use crate::filter::FilterResult;
use crate::linalg::{dot, Matrix};
use crate::model::StateSpaceModel;
use crate::scalar::Real;

/// Output of [`smooth_states`] / [`smooth_disturbances`].
///
/// Conditional variances are `VAR(x | y)`; disturbance fields are empty
/// unless disturbance smoothing was requested.
#[derive(Debug, Clone)]
pub struct SmoothResult<T> {
    pub alphahat: Vec<Vec<T>>,
    pub v: Vec<Matrix<T>>,
    /// Smoothed signal `Z_t alphahat_t`, n x p.
    pub thetahat: Vec<Vec<T>>,
    /// Diagonal of `Z_t V_t Z_t^T`.
    pub v_theta: Vec<Vec<T>>,
    pub epshat: Vec<Vec<T>>,
    pub v_eps: Vec<Vec<T>>,
    pub etahat: Vec<Vec<T>>,
    pub v_eta: Vec<Matrix<T>>,
    /// `r_{0,t,0}` for `t = 0..n` followed by the zero terminal value.
    pub r0: Vec<Vec<T>>,
    pub r1: Vec<Vec<T>>,
    pub n0: Vec<Matrix<T>>,
    pub n1: Vec<Matrix<T>>,
    pub n2: Vec<Matrix<T>>,
}

impl<T: Real> SmoothResult<T> {
    /// Full covariance of the smoothed signal at time `t`.
    pub fn signal_cov(&self, model: &StateSpaceModel<T>, t: usize) -> Matrix<T> {
        model.loadings.at(t).sandwich(&self.v[t])
    }
}

/// Smoothed states and signals.
pub fn smooth_states<T: Real>(fr: &FilterResult<T>, model: &StateSpaceModel<T>) -> Result<SmoothResult<T>> {
    smooth(fr, model, false)
}

/// Smoothed states, signals and disturbances.
pub fn smooth_disturbances<T: Real>(fr: &FilterResult<T>, model: &StateSpaceModel<T>) -> Result<SmoothResult<T>> {
    smooth(fr, model, true)
}

fn check_pair<T: Real>(fr: &FilterResult<T>, model: &StateSpaceModel<T>) -> Result<()> {
    if fr.n != model.n() || fr.p != model.p() || fr.m != model.m() {
        return Err(Error::Usage(format!(
            "filter result (n={}, p={}, m={}) does not match model (n={}, p={}, m={})",
            fr.n,
            fr.p,
            fr.m,
            model.n(),
            model.p(),
            model.m()
        )));
    }
    Ok(())
}

/// `L = I - k z^T / f` applied as `L^T r`.
#[inline]
fn lt_mul<T: Real>(r: &mut [T], z: &[T], k: &[T], f: T) {
    let s = dot(k, r) / f;
    for (ri, &zi) in r.iter_mut().zip(z) {
        *ri -= zi * s;
    }
}

/// `N <- L^T N L + c z z^T` with `L = I - k z^T / f`.
fn lt_n_l<T: Real>(nm: &mut Matrix<T>, z: &[T], k: &[T], f: T, c: T) {
    let w = nm.mul_vec(k);
    let s = dot(k, &w);
    let finv = T::one() / f;
    nm.rank1_update(-finv, z, &w);
    nm.rank1_update(-finv, &w, z);
    nm.rank1_update(s * finv * finv + c, z, z);
}

fn rank1_identity<T: Real>(k: &[T], z: &[T], f: T) -> Matrix<T> {
    let mut l = Matrix::identity(k.len());
    l.rank1_update(-T::one() / f, k, z);
    l
}

fn smooth<T: Real>(fr: &FilterResult<T>, model: &StateSpaceModel<T>, disturbances: bool) -> Result<SmoothResult<T>> {
    check_pair(fr, model)?;
    let (n, p, m, k) = (fr.n, fr.p, fr.m, model.k());
    let zero_m = Matrix::<T>::zeros(m, m);

    let mut alphahat = vec![vec![T::zero(); m]; n];
    let mut vmat = vec![zero_m.clone(); n];
    let mut r0_all = vec![vec![T::zero(); m]; n + 1];
    let mut r1_all = vec![vec![T::zero(); m]; n + 1];
    let mut n0_all = vec![zero_m.clone(); n + 1];
    let mut n1_all = vec![zero_m.clone(); n + 1];
    let mut n2_all = vec![zero_m.clone(); n + 1];
    let mut eps_w = vec![vec![T::zero(); p]; if disturbances { n } else { 0 }];
    let mut veps_w = vec![vec![T::zero(); p]; if disturbances { n } else { 0 }];
    let mut etahat = vec![vec![T::zero(); k]; if disturbances { n } else { 0 }];
    let mut v_eta = vec![Matrix::zeros(k, k); if disturbances { n } else { 0 }];

    let mut r0 = vec![T::zero(); m];
    let mut r1 = vec![T::zero(); m];
    let mut n0 = zero_m.clone();
    let mut n1 = zero_m.clone();
    let mut n2 = zero_m.clone();

    for t in (0..n).rev() {
        if disturbances {
            let rq = model.selection.at(t).matmul(model.state_cov.at(t));
            let q = model.state_cov.at(t);
            etahat[t] = rq.t_mul_vec(&r0);
            let mut ve = q.sub(&rq.transpose().matmul(&n0).matmul(&rq));
            ve.symmetrize();
            v_eta[t] = ve;
        }
        let tt = model.transition.at(t);
        r0 = tt.t_mul_vec(&r0);
        n0 = tt.transpose().matmul(&n0).matmul(tt);
        n0.symmetrize();
        let diffuse_t = fr.is_diffuse_time(t);
        if diffuse_t {
            r1 = tt.t_mul_vec(&r1);
            n1 = tt.transpose().matmul(&n1).matmul(tt);
            n2 = tt.transpose().matmul(&n2).matmul(tt);
            n2.symmetrize();
        }

        for i in (0..p).rev() {
            if !fr.is_observed(t, i) {
                continue;
            }
            let z = fr.z_at(t, i);
            let kstar = fr.k_at(t, i);
            let v = fr.v_at(t, i);
            let fstar = fr.f_at(t, i);
            let s2 = fr.sigma2[fr.idx(t, i)];
            let idx = fr.idx(t, i);

            if diffuse_t && fr.diffuse_update[idx] {
                let kinf = fr.k_inf_at(t, i);
                let finf = fr.f_inf_at(t, i);
                if disturbances {
                    eps_w[t][i] = -s2 * dot(kinf, &r0) / finf;
                    let nk = n0.mul_vec(kinf);
                    veps_w[t][i] = s2 - s2 * s2 * dot(kinf, &nk) / (finf * finf);
                }
                let l0 = rank1_identity(kinf, z, finf);
                // L1 = c z^T
                let c: Vec<T> = kinf
                    .iter()
                    .zip(kstar)
                    .map(|(&ki, &ks)| (ki * fstar / finf - ks) / finf)
                    .collect();
                let mut l1 = Matrix::zeros(m, m);
                l1.rank1_update(T::one(), &c, z);

                let r0_old = r0.clone();
                r0 = l0.t_mul_vec(&r0_old);
                let mut r1_new = l0.t_mul_vec(&r1);
                let c_r0 = dot(&c, &r0_old);
                for (j, x) in r1_new.iter_mut().enumerate() {
                    *x += z[j] * (v / finf + c_r0);
                }
                r1 = r1_new;

                let l0t = l0.transpose();
                let l1t = l1.transpose();
                let n0_l0 = n0.matmul(&l0);
                let n0_new = l0t.matmul(&n0_l0);
                let mut n1_new = l1t.matmul(&n0_l0).add(&l0t.matmul(&n1).matmul(&l0));
                n1_new.rank1_update(T::one() / finf, z, z);
                let cross = l0t.matmul(&n1).matmul(&l1);
                let mut n2_new = l1t
                    .matmul(&n0)
                    .matmul(&l1)
                    .add(&cross)
                    .add(&cross.transpose())
                    .add(&l0t.matmul(&n2).matmul(&l0));
                n2_new.rank1_update(-fstar / (finf * finf), z, z);
                n0 = n0_new;
                n0.symmetrize();
                n1 = n1_new;
                n2 = n2_new;
                n2.symmetrize();
                continue;
            }

            if !fr.updated[idx] {
                continue;
            }
            if disturbances {
                eps_w[t][i] = s2 * (v - dot(kstar, &r0)) / fstar;
                let nk = n0.mul_vec(kstar);
                veps_w[t][i] = s2 - s2 * s2 * (T::one() / fstar + dot(kstar, &nk) / (fstar * fstar));
            }
            lt_mul(&mut r0, z, kstar, fstar);
            let vf = v / fstar;
            for (rj, &zj) in r0.iter_mut().zip(z) {
                *rj += zj * vf;
            }
            lt_n_l(&mut n0, z, kstar, fstar, T::one() / fstar);
            if diffuse_t {
                lt_mul(&mut r1, z, kstar, fstar);
                let l = rank1_identity(kstar, z, fstar);
                n1 = l.transpose().matmul(&n1).matmul(&l);
                lt_n_l(&mut n2, z, kstar, fstar, T::zero());
            }
        }
        n0.symmetrize();

        // state smoothing
        let pst = &fr.p_star[t];
        let mut ah = fr.a[t].clone();
        let pr0 = pst.mul_vec(&r0);
        for (x, d) in ah.iter_mut().zip(&pr0) {
            *x += *d;
        }
        let mut vt = pst.sub(&pst.matmul(&n0).matmul(pst));
        if diffuse_t {
            let pinf = &fr.p_inf[t];
            let pr1 = pinf.mul_vec(&r1);
            for (x, d) in ah.iter_mut().zip(&pr1) {
                *x += *d;
            }
            let cross = pinf.matmul(&n1).matmul(pst);
            vt = vt
                .sub(&cross)
                .sub(&cross.transpose())
                .sub(&pinf.matmul(&n2).matmul(pinf));
        }
        vt.symmetrize();
        alphahat[t] = ah;
        vmat[t] = vt;
        r0_all[t] = r0.clone();
        r1_all[t] = r1.clone();
        n0_all[t] = n0.clone();
        n1_all[t] = n1.clone();
        n2_all[t] = n2.clone();
    }

    let mut thetahat = Vec::with_capacity(n);
    let mut v_theta = Vec::with_capacity(n);
    for t in 0..n {
        let z = model.loadings.at(t);
        thetahat.push(z.mul_vec(&alphahat[t]));
        let zv = z.matmul(&vmat[t]);
        v_theta.push((0..p).map(|i| dot(zv.row(i), z.row(i))).collect());
    }

    let (epshat, v_eps) = if disturbances {
        observation_disturbances(fr, model, &thetahat, &vmat, eps_w, veps_w)?
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(SmoothResult {
        alphahat,
        v: vmat,
        thetahat,
        v_theta,
        epshat,
        v_eps,
        etahat,
        v_eta,
        r0: r0_all,
        r1: r1_all,
        n0: n0_all,
        n1: n1_all,
        n2: n2_all,
    })
}

/// Maps working-space disturbance estimates back to the original series.
///
/// Times whose noise was decorrelated use `eps = y - Z alpha`, which holds
/// exactly given the data, and condition unobserved cells on the observed
/// ones through `H_t`.
fn observation_disturbances<T: Real>(
    fr: &FilterResult<T>,
    model: &StateSpaceModel<T>,
    thetahat: &[Vec<T>],
    vmat: &[Matrix<T>],
    mut eps: Vec<Vec<T>>,
    mut veps: Vec<Vec<T>>,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let p = fr.p;
    for t in 0..fr.n {
        let h = model.obs_cov.at(t);
        let obs: Vec<usize> = (0..p).filter(|&i| fr.is_observed(t, i)).collect();
        let mis: Vec<usize> = (0..p).filter(|&i| !fr.is_observed(t, i)).collect();
        if !fr.transformed[t] {
            for &i in &mis {
                eps[t][i] = T::zero();
                veps[t][i] = h[(i, i)];
            }
            continue;
        }
        let all: Vec<usize> = (0..fr.m).collect();
        let zo = model.loadings.at(t).select(&obs, &all);
        let cov_o = zo.sandwich(&vmat[t]);
        for (a, &i) in obs.iter().enumerate() {
            eps[t][i] = model.y.get(t, i).unwrap() - thetahat[t][i];
            veps[t][i] = cov_o[(a, a)];
        }
        if mis.is_empty() {
            continue;
        }
        let hoo = h.select(&obs, &obs);
        let hmo = h.select(&mis, &obs);
        // B = H_mo H_oo^{-1}
        let b = hoo.solve(&hmo.transpose())?.transpose();
        let eo: Vec<T> = obs.iter().map(|&i| eps[t][i]).collect();
        let em = b.mul_vec(&eo);
        let cond = h.select(&mis, &mis).sub(&b.matmul(&hmo.transpose()));
        let extra = b.sandwich(&cov_o);
        for (a, &i) in mis.iter().enumerate() {
            eps[t][i] = em[a];
            veps[t][i] = cond[(a, a)] + extra[(a, a)];
        }
    }
    Ok((eps, veps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::filter;
    use crate::model::{Observations, SystemMatrix};

    fn local_level(y: &[f64]) -> StateSpaceModel<f64> {
        let one = || SystemMatrix::constant(Matrix::scalar(1.0));
        StateSpaceModel::new(Observations::from_series(y), one(), one(), one(), one())
            .with_obs_cov(one())
            .with_init(vec![0.0], Matrix::zeros(1, 1), Matrix::identity(1))
    }

    #[test]
    fn local_level_hand_values() {
        let m = local_level(&[1.0, 0.5]);
        let fr = filter(&m).unwrap();
        let s = smooth_disturbances(&fr, &m).unwrap();
        assert!((s.alphahat[0][0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((s.alphahat[1][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((s.v[0][(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        assert!((s.v[1][(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        assert!((s.epshat[1][0] + 1.0 / 6.0).abs() < 1e-14);
        assert!((s.epshat[0][0] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn no_observations_leave_disturbances_at_prior() {
        let mut m = local_level(&[f64::NAN, f64::NAN, f64::NAN]);
        m.init_diffuse = Matrix::zeros(1, 1);
        m.init_cov = Matrix::scalar(2.0);
        m.init_mean = vec![0.3];
        let fr = filter(&m).unwrap();
        let s = smooth_disturbances(&fr, &m).unwrap();
        for t in 0..3 {
            assert_eq!(s.etahat[t][0], 0.0);
            assert!((s.v_eta[t][(0, 0)] - 1.0).abs() < 1e-15);
            assert!((s.alphahat[t][0] - 0.3).abs() < 1e-15);
            assert!((s.v[t][(0, 0)] - (2.0 + t as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_series_has_zero_disturbance() {
        let mut m = local_level(&[1.0, 0.5, 0.7]);
        m.obs_cov = SystemMatrix::constant(Matrix::scalar(0.0));
        let fr = filter(&m).unwrap();
        let s = smooth_disturbances(&fr, &m).unwrap();
        for t in 0..3 {
            assert_eq!(s.epshat[t][0], 0.0);
            assert!((s.alphahat[t][0] - [1.0, 0.5, 0.7][t]).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_result_is_rejected() {
        let m = local_level(&[1.0, 0.5]);
        let fr = filter(&local_level(&[1.0, 0.5, 0.2])).unwrap();
        assert!(matches!(smooth_states(&fr, &m), Err(Error::Usage(_))));
    }
}
