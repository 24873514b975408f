//! The state space model container, validation, and observation transforms.
//!
//! The model is
//!
//! ```text
//! y_t       = Z_t alpha_t + eps_t,       eps_t ~ N(0, H_t)
//! alpha_t+1 = T_t alpha_t + R_t eta_t,   eta_t ~ N(0, Q_t)
//! alpha_1   ~ N(a_1, P_*,1 + kappa P_inf,1),  kappa -> infinity
//! ```
//!
//! with non-Gaussian series replacing the observation equation by an
//! exponential-family density `p(y_t | Z_t alpha_t)` with known parameter `u`.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{Ldl, Matrix};
use crate::scalar::Real;

/// Observation distribution of a single series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    Gaussian,
    Poisson,
    Binomial,
    Gamma,
    NegativeBinomial,
}

impl Distribution {
    pub fn is_gaussian(self) -> bool {
        matches!(self, Distribution::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Poisson => "poisson",
            Distribution::Binomial => "binomial",
            Distribution::Gamma => "gamma",
            Distribution::NegativeBinomial => "negative-binomial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gaussian" | "normal" => Some(Distribution::Gaussian),
            "poisson" => Some(Distribution::Poisson),
            "binomial" => Some(Distribution::Binomial),
            "gamma" => Some(Distribution::Gamma),
            "negative-binomial" | "negbin" => Some(Distribution::NegativeBinomial),
            _ => None,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An `n x p` table of observations where `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations<T> {
    n: usize,
    p: usize,
    cells: Vec<Option<T>>,
}

impl<T: Real> Observations<T> {
    pub fn new(n: usize, p: usize, cells: Vec<Option<T>>) -> Self {
        assert_eq!(cells.len(), n * p, "observation table size mismatch");
        Observations { n, p, cells }
    }

    pub fn missing(n: usize, p: usize) -> Self {
        Observations::new(n, p, vec![None; n * p])
    }

    /// Univariate series; non-finite values are treated as missing.
    pub fn from_series(y: &[T]) -> Self {
        let cells = y.iter().map(|&v| v.is_finite().then_some(v)).collect();
        Observations::new(y.len(), 1, cells)
    }

    /// Builds from time-major rows; non-finite values are treated as missing.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut cells = Vec::with_capacity(n * p);
        for r in rows {
            assert_eq!(r.len(), p, "ragged observation rows");
            cells.extend(r.iter().map(|&v| v.is_finite().then_some(v)));
        }
        Observations::new(n, p, cells)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<T> {
        self.cells[t * self.p + i]
    }

    pub fn set(&mut self, t: usize, i: usize, v: Option<T>) {
        self.cells[t * self.p + i] = v;
    }

    pub fn row(&self, t: usize) -> &[Option<T>] {
        &self.cells[t * self.p..(t + 1) * self.p]
    }

    pub fn series(&self, i: usize) -> Vec<Option<T>> {
        (0..self.n).map(|t| self.get(t, i)).collect()
    }

    /// Appends `h` fully missing rows.
    pub fn extended(&self, h: usize) -> Self {
        let mut cells = self.cells.clone();
        cells.extend(std::iter::repeat_n(None, h * self.p));
        Observations::new(self.n + h, self.p, cells)
    }

    /// First `len` rows only.
    pub fn truncated(&self, len: usize) -> Self {
        Observations::new(len, self.p, self.cells[..len * self.p].to_vec())
    }
}

/// A system matrix that is either time-invariant (stored once) or supplied
/// for every time point.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix<T> {
    mats: Vec<Matrix<T>>,
}

impl<T: Real> SystemMatrix<T> {
    pub fn constant(m: Matrix<T>) -> Self {
        SystemMatrix { mats: vec![m] }
    }

    pub fn time_varying(mats: Vec<Matrix<T>>) -> Self {
        assert!(!mats.is_empty(), "time-varying matrix needs at least one slice");
        let shape = mats[0].shape();
        assert!(mats.iter().all(|m| m.shape() == shape), "inconsistent time-varying slices");
        SystemMatrix { mats }
    }

    /// The matrix in effect at time `t` (0-based).
    #[inline]
    pub fn at(&self, t: usize) -> &Matrix<T> {
        if self.mats.len() == 1 {
            &self.mats[0]
        } else {
            &self.mats[t]
        }
    }

    pub fn at_mut(&mut self, t: usize) -> &mut Matrix<T> {
        if self.mats.len() == 1 {
            &mut self.mats[0]
        } else {
            &mut self.mats[t]
        }
    }

    pub fn is_time_varying(&self) -> bool {
        self.mats.len() > 1
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mats[0].shape()
    }

    pub fn slices(&self) -> &[Matrix<T>] {
        &self.mats
    }

    pub fn slices_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.mats
    }

    /// Applies `f` to every stored slice.
    pub fn map(&self, f: impl Fn(&Matrix<T>) -> Matrix<T>) -> Self {
        SystemMatrix {
            mats: self.mats.iter().map(f).collect(),
        }
    }

    /// Expands to exactly `n` slices (repeating a constant matrix).
    pub fn expanded(&self, n: usize) -> Vec<Matrix<T>> {
        (0..n).map(|t| self.at(t).clone()).collect()
    }
}

/// Observations plus system matrices, initial distribution and per-series
/// observation distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T> {
    pub y: Observations<T>,
    /// `Z_t`, p x m.
    pub loadings: SystemMatrix<T>,
    /// `H_t`, p x p; only gaussian rows are referenced.
    pub obs_cov: SystemMatrix<T>,
    /// `T_t`, m x m.
    pub transition: SystemMatrix<T>,
    /// `R_t`, m x k.
    pub selection: SystemMatrix<T>,
    /// `Q_t`, k x k.
    pub state_cov: SystemMatrix<T>,
    pub init_mean: Vec<T>,
    /// Proper part of the initial covariance.
    pub init_cov: Matrix<T>,
    /// Diagonal 0/1 indicator of diffuse initial states.
    pub init_diffuse: Matrix<T>,
    /// `u`, n x p: exposure, size, shape or dispersion per observation.
    pub obs_param: Matrix<T>,
    pub distribution: Vec<Distribution>,
    /// Threshold for treating diffuse prediction variances as zero.
    pub tol: T,
    pub state_names: Vec<String>,
    pub eta_names: Vec<String>,
}

impl<T: Real> StateSpaceModel<T> {
    /// Gaussian model with zero observation noise, zero initial mean and a
    /// fully proper zero initial covariance; adjust with the `with_*` methods.
    pub fn new(
        y: Observations<T>,
        loadings: SystemMatrix<T>,
        transition: SystemMatrix<T>,
        selection: SystemMatrix<T>,
        state_cov: SystemMatrix<T>,
    ) -> Self {
        let (p, m) = loadings.shape();
        let k = selection.shape().1;
        let n = y.n();
        StateSpaceModel {
            obs_cov: SystemMatrix::constant(Matrix::zeros(p, p)),
            init_mean: vec![T::zero(); m],
            init_cov: Matrix::zeros(m, m),
            init_diffuse: Matrix::zeros(m, m),
            obs_param: Matrix::from_vec(n, p, vec![T::one(); n * p]),
            distribution: vec![Distribution::Gaussian; p],
            tol: T::default_tol(),
            state_names: (1..=m).map(|j| format!("state{j}")).collect(),
            eta_names: (1..=k).map(|j| format!("eta{j}")).collect(),
            y,
            loadings,
            transition,
            selection,
            state_cov,
        }
    }

    pub fn with_obs_cov(mut self, h: SystemMatrix<T>) -> Self {
        self.obs_cov = h;
        self
    }

    pub fn with_init(mut self, a1: Vec<T>, p1: Matrix<T>, p1inf: Matrix<T>) -> Self {
        self.init_mean = a1;
        self.init_cov = p1;
        self.init_diffuse = p1inf;
        self
    }

    pub fn with_distribution(mut self, d: Vec<Distribution>) -> Self {
        self.distribution = d;
        self
    }

    pub fn with_obs_param(mut self, u: Matrix<T>) -> Self {
        self.obs_param = u;
        self
    }

    pub fn with_state_names(mut self, names: Vec<String>) -> Self {
        self.state_names = names;
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.n()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.y.p()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.init_mean.len()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.selection.shape().1
    }

    pub fn is_gaussian(&self) -> bool {
        self.distribution.iter().all(|d| d.is_gaussian())
    }

    pub fn has_diffuse(&self) -> bool {
        self.init_diffuse.diag().iter().any(|&x| x != T::zero())
    }

    /// Per-matrix time-variation flags in the order Z, H, T, R, Q.
    pub fn tv_flags(&self) -> [bool; 5] {
        [
            self.loadings.is_time_varying(),
            self.obs_cov.is_time_varying(),
            self.transition.is_time_varying(),
            self.selection.is_time_varying(),
            self.state_cov.is_time_varying(),
        ]
    }

    /// Usable-observation indicator for every (t, i).
    pub fn missing_pattern(&self) -> MissingPattern {
        missing_pattern(self)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    /// Indices of the series observed at time `t`.
    pub fn observed_at(&self, t: usize) -> Vec<usize> {
        (0..self.p()).filter(|&i| self.y.get(t, i).is_some()).collect()
    }
}

/// Machine-readable category of a validation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    DimensionMismatch,
    TimeVaryingLength,
    NonsymmetricP1,
    P1NotPsd,
    P1infNotDiagonal,
    P1infNotBinary,
    DiffuseRowNonzero,
    NonsymmetricH,
    HNotPsd,
    HNongaussianNonzero,
    NonsymmetricQ,
    QNotPsd,
    NonpositiveU,
    NonfiniteValue,
    DistributionCount,
    NegativeTol,
    NameCount,
    ObservationOutOfSupport,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::DimensionMismatch => "dimension-mismatch",
            ViolationCode::TimeVaryingLength => "time-varying-length",
            ViolationCode::NonsymmetricP1 => "nonsymmetric-p1",
            ViolationCode::P1NotPsd => "p1-not-psd",
            ViolationCode::P1infNotDiagonal => "p1inf-not-diagonal",
            ViolationCode::P1infNotBinary => "p1inf-not-binary",
            ViolationCode::DiffuseRowNonzero => "diffuse-row-nonzero",
            ViolationCode::NonsymmetricH => "nonsymmetric-h",
            ViolationCode::HNotPsd => "h-not-psd",
            ViolationCode::HNongaussianNonzero => "h-nongaussian-nonzero",
            ViolationCode::NonsymmetricQ => "nonsymmetric-q",
            ViolationCode::QNotPsd => "q-not-psd",
            ViolationCode::NonpositiveU => "nonpositive-u",
            ViolationCode::NonfiniteValue => "nonfinite-value",
            ViolationCode::DistributionCount => "distribution-count",
            ViolationCode::NegativeTol => "negative-tol",
            ViolationCode::NameCount => "name-count",
            ViolationCode::ObservationOutOfSupport => "observation-out-of-support",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

/// Returns every invariant violation of `model`; an empty list means valid.
pub fn validate<T: Real>(model: &StateSpaceModel<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code: ViolationCode, message: String| out.push(Violation { code, message });
    let (n, p, m, k) = (model.n(), model.p(), model.m(), model.k());
    let sym_tol = T::lit(1e-10);

    let check_dims = |name: &str, sm: &SystemMatrix<T>, shape: (usize, usize), push: &mut dyn FnMut(ViolationCode, String)| {
        if sm.is_empty() {
            push(ViolationCode::DimensionMismatch, format!("{name} has no slices"));
            return false;
        }
        if sm.shape() != shape {
            push(
                ViolationCode::DimensionMismatch,
                format!("{name} is {:?}, expected {:?}", sm.shape(), shape),
            );
            return false;
        }
        if sm.is_time_varying() && sm.len() < n {
            push(
                ViolationCode::TimeVaryingLength,
                format!("{name} has {} time slices, expected {n}", sm.len()),
            );
            return false;
        }
        if sm.slices().iter().any(|s| !s.is_finite()) {
            push(ViolationCode::NonfiniteValue, format!("{name} contains non-finite values"));
            return false;
        }
        true
    };

    let z_ok = check_dims("Z", &model.loadings, (p, m), &mut push);
    let h_ok = check_dims("H", &model.obs_cov, (p, p), &mut push);
    let t_ok = check_dims("T", &model.transition, (m, m), &mut push);
    let r_ok = check_dims("R", &model.selection, (m, k), &mut push);
    let q_ok = check_dims("Q", &model.state_cov, (k, k), &mut push);
    let _ = (z_ok, t_ok, r_ok);

    if model.init_cov.shape() != (m, m) {
        push(ViolationCode::DimensionMismatch, format!("P1 is {:?}, expected ({m}, {m})", model.init_cov.shape()));
    }
    if model.init_diffuse.shape() != (m, m) {
        push(
            ViolationCode::DimensionMismatch,
            format!("P1inf is {:?}, expected ({m}, {m})", model.init_diffuse.shape()),
        );
    }
    if model.obs_param.shape() != (n, p) {
        push(ViolationCode::DimensionMismatch, format!("u is {:?}, expected ({n}, {p})", model.obs_param.shape()));
    }
    if model.distribution.len() != p {
        push(
            ViolationCode::DistributionCount,
            format!("{} distributions given for {p} series", model.distribution.len()),
        );
    }
    if model.tol < T::zero() || !model.tol.is_finite() {
        push(ViolationCode::NegativeTol, format!("tol = {} must be nonnegative", model.tol));
    }
    if model.state_names.len() != m || model.eta_names.len() != k {
        push(
            ViolationCode::NameCount,
            format!(
                "{} state names for m = {m}, {} disturbance names for k = {k}",
                model.state_names.len(),
                model.eta_names.len()
            ),
        );
    }
    if model.init_mean.iter().any(|x| !x.is_finite()) {
        push(ViolationCode::NonfiniteValue, "a1 contains non-finite values".into());
    }

    if model.init_cov.shape() == (m, m) {
        if !model.init_cov.is_finite() {
            push(ViolationCode::NonfiniteValue, "P1 contains non-finite values".into());
        } else if !model.init_cov.is_symmetric(sym_tol) {
            push(ViolationCode::NonsymmetricP1, "P1 is not symmetric".into());
        } else if model.init_cov.cholesky_psd(T::lit(1e-10)).is_err() {
            push(ViolationCode::P1NotPsd, "P1 is not positive semidefinite".into());
        }
    }
    if model.init_diffuse.shape() == (m, m) {
        let pinf = &model.init_diffuse;
        if !pinf.is_diagonal() {
            push(ViolationCode::P1infNotDiagonal, "P1inf must be diagonal".into());
        }
        for j in 0..m {
            let d = pinf[(j, j)];
            if d != T::zero() && d != T::one() {
                push(
                    ViolationCode::P1infNotBinary,
                    format!("P1inf[{0},{0}] = {d}, expected 0 or 1", j + 1),
                );
            }
            if d == T::one() && model.init_cov.shape() == (m, m) {
                let nonzero = (0..m).any(|l| model.init_cov[(j, l)] != T::zero() || model.init_cov[(l, j)] != T::zero());
                if nonzero {
                    push(
                        ViolationCode::DiffuseRowNonzero,
                        format!("state {} is diffuse but its P1 row/column is nonzero", j + 1),
                    );
                }
            }
        }
    }

    if h_ok && model.distribution.len() == p {
        let gaussian: Vec<usize> = (0..p).filter(|&i| model.distribution[i].is_gaussian()).collect();
        for (s, h) in model.obs_cov.slices().iter().enumerate() {
            if !h.is_symmetric(sym_tol) {
                push(ViolationCode::NonsymmetricH, format!("H at slice {} is not symmetric", s + 1));
                break;
            }
            for i in 0..p {
                if model.distribution[i].is_gaussian() {
                    continue;
                }
                if (0..p).any(|j| h[(i, j)] != T::zero()) {
                    push(
                        ViolationCode::HNongaussianNonzero,
                        format!("H row {} belongs to a {} series and must be zero", i + 1, model.distribution[i]),
                    );
                }
            }
            if !gaussian.is_empty() && h.select(&gaussian, &gaussian).cholesky_psd(T::lit(1e-10)).is_err() {
                push(ViolationCode::HNotPsd, format!("H at slice {} is not positive semidefinite", s + 1));
                break;
            }
        }
    }
    if q_ok {
        for (s, q) in model.state_cov.slices().iter().enumerate() {
            if !q.is_symmetric(sym_tol) {
                push(ViolationCode::NonsymmetricQ, format!("Q at slice {} is not symmetric", s + 1));
                break;
            }
            if q.cholesky_psd(T::lit(1e-10)).is_err() {
                push(ViolationCode::QNotPsd, format!("Q at slice {} is not positive semidefinite", s + 1));
                break;
            }
        }
    }

    if model.obs_param.shape() == (n, p) && model.distribution.len() == p {
        for i in 0..p {
            let dist = model.distribution[i];
            if dist.is_gaussian() {
                continue;
            }
            for t in 0..n {
                let u = model.obs_param[(t, i)];
                if !u.is_finite() {
                    push(ViolationCode::NonfiniteValue, format!("u[{},{}] is not finite", t + 1, i + 1));
                } else if u <= T::zero() {
                    push(
                        ViolationCode::NonpositiveU,
                        format!("u[{},{}] = {u} must be positive for a {dist} series", t + 1, i + 1),
                    );
                }
                if let Some(y) = model.y.get(t, i) {
                    let bad = match dist {
                        Distribution::Poisson | Distribution::NegativeBinomial => y < T::zero(),
                        Distribution::Binomial => y < T::zero() || y > u,
                        Distribution::Gamma => y <= T::zero(),
                        Distribution::Gaussian => false,
                    };
                    if bad {
                        push(
                            ViolationCode::ObservationOutOfSupport,
                            format!("y[{},{}] = {y} is outside the support of the {dist} distribution", t + 1, i + 1),
                        );
                    }
                }
            }
        }
    }
    out
}

/// Usable-observation indicator, `true` where `y[t, i]` is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingPattern {
    n: usize,
    p: usize,
    usable: Vec<bool>,
}

impl MissingPattern {
    #[inline]
    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.usable[t * self.p + i]
    }

    pub fn observed(&self, t: usize) -> Vec<usize> {
        (0..self.p).filter(|&i| self.is_observed(t, i)).collect()
    }

    pub fn all_observed(&self) -> bool {
        self.usable.iter().all(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.usable.iter().filter(|&&b| b).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }
}

pub fn missing_pattern<T: Real>(model: &StateSpaceModel<T>) -> MissingPattern {
    let (n, p) = (model.n(), model.p());
    let mut usable = Vec::with_capacity(n * p);
    for t in 0..n {
        for i in 0..p {
            usable.push(model.y.get(t, i).is_some());
        }
    }
    MissingPattern { n, p, usable }
}

/// Observation equation at one time point after decorrelating the noise.
#[derive(Debug, Clone)]
pub struct LdlTransform<T> {
    /// Unit lower-triangular factor (identity on missing rows).
    pub l: Matrix<T>,
    /// Transformed observations `L^{-1} y_t`; missing cells stay missing.
    pub y: Vec<Option<T>>,
    /// Transformed loadings `L^{-1} Z_t`.
    pub z: Matrix<T>,
    /// Diagonal noise variances of the transformed equation.
    pub d: Vec<T>,
}

/// Decorrelates the observation noise at time `t` via `H_t = L D L^T`.
///
/// Missing rows are excluded from the factorization and passed through with
/// their own variance.
pub fn ldl_transform<T: Real>(model: &StateSpaceModel<T>, t: usize) -> Result<LdlTransform<T>> {
    let p = model.p();
    if let Some(i) = (0..p).find(|&i| !model.distribution[i].is_gaussian()) {
        return Err(Error::Model(format!(
            "series {} is {}; the LDL transform applies to gaussian series only",
            i + 1,
            model.distribution[i]
        )));
    }
    let h = model.obs_cov.at(t);
    if !h.is_symmetric(T::lit(1e-10)) {
        return Err(Error::Model(format!("H at time {} is not symmetric", t + 1)));
    }
    let obs = model.observed_at(t);
    let z = model.loadings.at(t);
    let work = ObservationTransform::new(h, &obs)?;

    let mut l = Matrix::identity(p);
    let mut d: Vec<T> = (0..p).map(|i| h[(i, i)]).collect();
    let mut zt = z.clone();
    let mut y: Vec<Option<T>> = model.y.row(t).to_vec();
    if let Some(f) = &work.ldl {
        for (a, &i) in obs.iter().enumerate() {
            for (b, &j) in obs.iter().enumerate() {
                l[(i, j)] = f.l[(a, b)];
            }
            d[i] = f.d[a];
        }
    }
    let yo: Vec<T> = obs.iter().map(|&i| model.y.get(t, i).unwrap()).collect();
    let ty = work.apply_vec(&yo);
    let tz = work.apply_rows(z, &obs);
    for (a, &i) in obs.iter().enumerate() {
        y[i] = Some(ty[a]);
        zt.row_mut(i).copy_from_slice(tz.row(a));
    }
    Ok(LdlTransform { l, y, z: zt, d })
}

/// Decorrelating transform restricted to a set of observed rows.
#[derive(Debug, Clone)]
pub(crate) struct ObservationTransform<T> {
    pub ldl: Option<Ldl<T>>,
    pub variances: Vec<T>,
}

impl<T: Real> ObservationTransform<T> {
    pub fn new(h: &Matrix<T>, obs: &[usize]) -> Result<Self> {
        let ho = h.select(obs, obs);
        if ho.is_diagonal() {
            return Ok(ObservationTransform {
                variances: ho.diag(),
                ldl: None,
            });
        }
        let f = Ldl::factor(&ho)?;
        Ok(ObservationTransform {
            variances: f.d.clone(),
            ldl: Some(f),
        })
    }

    pub fn apply_vec(&self, y: &[T]) -> Vec<T> {
        match &self.ldl {
            Some(f) => f.forward(y),
            None => y.to_vec(),
        }
    }

    /// Transformed rows `L^{-1} Z[obs, :]`.
    pub fn apply_rows(&self, z: &Matrix<T>, obs: &[usize]) -> Matrix<T> {
        let all: Vec<usize> = (0..z.cols()).collect();
        let zo = z.select(obs, &all);
        match &self.ldl {
            Some(f) => f.forward_matrix(&zo),
            None => zo,
        }
    }
}
