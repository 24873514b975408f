//! Structural, ARIMA, regression and custom components, and their
//! block-diagonal assembly into a single model.
//!
//! Components loading on several series with `common = false` replicate
//! their state per series. States are then ordered component-position
//! major: state `j` of series `i` sits at `j * p' + i`, so that the
//! cross-series covariance of each disturbance is one contiguous block.
//! Regression blocks are the exception and are ordered series-major.

use std::collections::HashSet;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Distribution, Observations, StateSpaceModel, SystemMatrix};
use crate::scalar::Real;

/// A covariance block whose entries may be unknown.
#[derive(Debug, Clone, PartialEq)]
pub enum Cov<T> {
    Known(Matrix<T>),
    /// Diagonal matrix; `None` entries are estimated on the log scale.
    Diagonal(Vec<Option<T>>),
    /// Full covariance of the given dimension, estimated through an upper
    /// triangular factor `U` with `exp` diagonal as `U^T U`.
    Full(usize),
}

impl<T: Real> Cov<T> {
    pub fn variance(v: T) -> Self {
        Cov::Known(Matrix::scalar(v))
    }

    pub fn zero(dim: usize) -> Self {
        Cov::Known(Matrix::zeros(dim, dim))
    }

    /// Diagonal block with every variance unknown.
    pub fn unknown(dim: usize) -> Self {
        Cov::Diagonal(vec![None; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            Cov::Known(m) => m.rows(),
            Cov::Diagonal(d) => d.len(),
            Cov::Full(k) => *k,
        }
    }

    pub fn is_known(&self) -> bool {
        match self {
            Cov::Known(_) => true,
            Cov::Diagonal(d) => d.iter().all(Option::is_some),
            Cov::Full(_) => false,
        }
    }

    /// Value with unknown entries set to their starting value (variance 1).
    pub fn initial(&self) -> Matrix<T> {
        match self {
            Cov::Known(m) => m.clone(),
            Cov::Diagonal(d) => Matrix::from_diag(&d.iter().map(|v| v.unwrap_or(T::one())).collect::<Vec<_>>()),
            Cov::Full(k) => Matrix::identity(*k),
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        match self {
            Cov::Known(m) => {
                if !m.is_square() || !m.is_symmetric(T::lit(1e-10)) {
                    return Err(Error::Model(format!("{what} must be a symmetric square matrix")));
                }
                m.cholesky_psd(T::lit(1e-9))
                    .map_err(|_| Error::Model(format!("{what} is not positive semidefinite")))?;
            }
            Cov::Diagonal(d) => {
                if d.iter().flatten().any(|v| *v < T::zero() || !v.is_finite()) {
                    return Err(Error::Model(format!("{what} has a negative or non-finite variance")));
                }
            }
            Cov::Full(k) => {
                if *k == 0 {
                    return Err(Error::Model(format!("{what} has dimension zero")));
                }
            }
        }
        Ok(())
    }
}

/// Initial covariance of a custom component.
#[derive(Debug, Clone, PartialEq)]
pub enum CustomP1<T> {
    Known(Matrix<T>),
    Unknown(Cov<T>),
    /// Tie `P1` to the component's `Q` (requires `R = I`), as for a white
    /// noise state whose initial variance equals its disturbance variance.
    SameAsQ,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind<T> {
    Trend {
        degree: usize,
        q: Vec<Cov<T>>,
    },
    SeasonalDummy {
        period: usize,
        q: Cov<T>,
    },
    SeasonalTrig {
        period: usize,
        q: Cov<T>,
    },
    Cycle {
        period: T,
        q: Cov<T>,
    },
    Arima {
        ar: Vec<T>,
        ma: Vec<T>,
        d: usize,
        sigma2: Cov<T>,
        stationary: bool,
        estimate_ar: bool,
        estimate_ma: bool,
    },
    Regression {
        /// One `n x q` design shared by all target series, or one per series.
        x: Vec<Matrix<T>>,
        q_coeff: Option<Cov<T>>,
        p1: Option<Cov<T>>,
        names: Vec<String>,
    },
    Custom {
        z: SystemMatrix<T>,
        t: SystemMatrix<T>,
        r: SystemMatrix<T>,
        q: Cov<T>,
        a1: Vec<T>,
        p1: CustomP1<T>,
        p1inf: Matrix<T>,
        names: Vec<String>,
    },
}

/// One model component with the series it loads on (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec<T> {
    pub name: String,
    pub kind: ComponentKind<T>,
    pub index: Vec<usize>,
    /// One state copy shared by all series in `index` instead of one per series.
    pub common: bool,
}

impl<T: Real> ComponentSpec<T> {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Number of state copies.
    fn copies(&self) -> usize {
        if self.common {
            1
        } else {
            self.index.len()
        }
    }
}

fn check_index(index: &[usize]) -> Result<()> {
    if index.is_empty() {
        return Err(Error::Model("component index is empty".into()));
    }
    let set: HashSet<_> = index.iter().collect();
    if set.len() != index.len() {
        return Err(Error::Model("component index has duplicates".into()));
    }
    Ok(())
}

fn check_cov_dim<T: Real>(c: &Cov<T>, dim: usize, what: &str) -> Result<()> {
    if c.dim() != dim {
        return Err(Error::Model(format!("{what} has dimension {}, expected {dim}", c.dim())));
    }
    c.check(what)
}

pub fn build_trend<T: Real>(degree: usize, q: Vec<Cov<T>>, index: Vec<usize>, common: bool) -> Result<ComponentSpec<T>> {
    if degree < 1 {
        return Err(Error::Model("trend degree must be at least 1".into()));
    }
    if q.len() != degree {
        return Err(Error::Model(format!("trend of degree {degree} needs {degree} covariance blocks")));
    }
    check_index(&index)?;
    let dim = if common { 1 } else { index.len() };
    for (l, c) in q.iter().enumerate() {
        check_cov_dim(c, dim, &format!("trend Q block {}", l + 1))?;
    }
    Ok(ComponentSpec {
        name: "trend".into(),
        kind: ComponentKind::Trend { degree, q },
        index,
        common,
    })
}

pub fn build_seasonal<T: Real>(
    period: usize,
    trigonometric: bool,
    q: Cov<T>,
    index: Vec<usize>,
    common: bool,
) -> Result<ComponentSpec<T>> {
    if period < 2 {
        return Err(Error::Model("seasonal period must be at least 2".into()));
    }
    check_index(&index)?;
    check_cov_dim(&q, if common { 1 } else { index.len() }, "seasonal Q")?;
    let kind = if trigonometric {
        ComponentKind::SeasonalTrig { period, q }
    } else {
        ComponentKind::SeasonalDummy { period, q }
    };
    Ok(ComponentSpec {
        name: "seasonal".into(),
        kind,
        index,
        common,
    })
}

pub fn build_cycle<T: Real>(period: T, q: Cov<T>, index: Vec<usize>, common: bool) -> Result<ComponentSpec<T>> {
    if !(period > T::lit(2.0)) {
        return Err(Error::Model("cycle period must exceed 2".into()));
    }
    check_index(&index)?;
    check_cov_dim(&q, if common { 1 } else { index.len() }, "cycle Q")?;
    Ok(ComponentSpec {
        name: "cycle".into(),
        kind: ComponentKind::Cycle { period, q },
        index,
        common,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn build_arima<T: Real>(
    ar: Vec<T>,
    ma: Vec<T>,
    d: usize,
    sigma2: Cov<T>,
    stationary: bool,
    index: Vec<usize>,
    common: bool,
) -> Result<ComponentSpec<T>> {
    check_index(&index)?;
    check_cov_dim(&sigma2, if common { 1 } else { index.len() }, "arima Q")?;
    if stationary && !ar.is_empty() && ar_to_pacf(&ar).is_none() {
        return Err(Error::Estimation("AR coefficients are not stationary".into()));
    }
    Ok(ComponentSpec {
        name: "arima".into(),
        kind: ComponentKind::Arima {
            ar,
            ma,
            d,
            sigma2,
            stationary,
            estimate_ar: false,
            estimate_ma: false,
        },
        index,
        common,
    })
}

/// Marks the AR and/or MA coefficients of an ARIMA component as unknown.
pub fn estimate_arima_coefficients<T: Real>(mut spec: ComponentSpec<T>, ar: bool, ma: bool) -> Result<ComponentSpec<T>> {
    match &mut spec.kind {
        ComponentKind::Arima {
            estimate_ar,
            estimate_ma,
            stationary,
            ..
        } => {
            if ar && !*stationary {
                return Err(Error::Model("estimated AR coefficients require a stationary block".into()));
            }
            *estimate_ar = ar;
            *estimate_ma = ma;
            Ok(spec)
        }
        _ => Err(Error::Model(format!("component {} is not ARIMA", spec.name))),
    }
}

pub fn build_regression<T: Real>(
    x: Vec<Matrix<T>>,
    index: Vec<usize>,
    common: bool,
    q_coeff: Option<Cov<T>>,
    p1: Option<Cov<T>>,
    names: Vec<String>,
) -> Result<ComponentSpec<T>> {
    check_index(&index)?;
    if x.is_empty() || (x.len() != 1 && x.len() != index.len()) {
        return Err(Error::Model("regression needs one design matrix or one per target series".into()));
    }
    let (n, q) = x[0].shape();
    if q == 0 {
        return Err(Error::Model("regression design has no columns".into()));
    }
    if x.iter().any(|m| m.shape() != (n, q)) {
        return Err(Error::Model("regression design matrices differ in shape".into()));
    }
    if x.iter().any(|m| !m.is_finite()) {
        return Err(Error::Model("regression design has missing or non-finite cells".into()));
    }
    if let Some(c) = &q_coeff {
        check_cov_dim(c, q, "regression Q")?;
    }
    if let Some(c) = &p1 {
        check_cov_dim(c, q, "regression P1")?;
    }
    if !names.is_empty() && names.len() != q {
        return Err(Error::Model(format!("regression has {q} columns but {} names", names.len())));
    }
    Ok(ComponentSpec {
        name: "regression".into(),
        kind: ComponentKind::Regression { x, q_coeff, p1, names },
        index,
        common,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn build_custom<T: Real>(
    z: SystemMatrix<T>,
    t: SystemMatrix<T>,
    r: SystemMatrix<T>,
    q: Cov<T>,
    a1: Option<Vec<T>>,
    p1: CustomP1<T>,
    p1inf: Option<Matrix<T>>,
    index: Vec<usize>,
) -> Result<ComponentSpec<T>> {
    check_index(&index)?;
    let (zp, m) = z.shape();
    if zp != index.len() {
        return Err(Error::Model(format!("custom Z has {zp} rows for {} series", index.len())));
    }
    if t.shape() != (m, m) {
        return Err(Error::Model("custom T must be m x m".into()));
    }
    let (rm, k) = r.shape();
    if rm != m {
        return Err(Error::Model("custom R must have m rows".into()));
    }
    check_cov_dim(&q, k, "custom Q")?;
    let a1 = a1.unwrap_or_else(|| vec![T::zero(); m]);
    let p1inf = p1inf.unwrap_or_else(|| Matrix::zeros(m, m));
    if a1.len() != m || p1inf.shape() != (m, m) {
        return Err(Error::Model("custom a1/P1inf dimension mismatch".into()));
    }
    match &p1 {
        CustomP1::Known(p) => {
            if p.shape() != (m, m) {
                return Err(Error::Model("custom P1 must be m x m".into()));
            }
        }
        CustomP1::Unknown(c) => check_cov_dim(c, m, "custom P1")?,
        CustomP1::SameAsQ => {
            if k != m || r.slices().iter().any(|rt| *rt != Matrix::identity(m)) {
                return Err(Error::Model("P1 tied to Q requires R = I".into()));
            }
        }
    }
    Ok(ComponentSpec {
        name: "custom".into(),
        kind: ComponentKind::Custom {
            z,
            t,
            r,
            q,
            a1,
            p1,
            p1inf,
            names: Vec::new(),
        },
        index,
        common: false,
    })
}

/// Attaches state names to a custom component.
pub fn with_custom_names<T: Real>(mut spec: ComponentSpec<T>, state_names: Vec<String>) -> ComponentSpec<T> {
    if let ComponentKind::Custom { names, .. } = &mut spec.kind {
        *names = state_names;
    }
    spec
}

/// Matrix that a covariance parameter writes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    H,
    Q,
    P1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    /// One log-variance per free diagonal position; written at each offset.
    Diagonal {
        dim: usize,
        free: Vec<usize>,
        targets: Vec<(Target, usize)>,
    },
    /// Log-diagonal then column-major upper triangle of `U`; `U^T U` is
    /// written at each offset.
    Full { dim: usize, targets: Vec<(Target, usize)> },
    /// Partial autocorrelations through `tanh`.
    ArimaAr { slot: usize, len: usize },
    ArimaMa { slot: usize, len: usize },
}

/// A contiguous run of the unconstrained parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub kind: ParamKind,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        match &self.kind {
            ParamKind::Diagonal { free, .. } => free.len(),
            ParamKind::Full { dim, .. } => dim * (dim + 1) / 2,
            ParamKind::ArimaAr { len, .. } | ParamKind::ArimaMa { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of the individual parameters.
    pub fn names(&self) -> Vec<String> {
        match &self.kind {
            ParamKind::Diagonal { dim, free, .. } => {
                if *dim == 1 {
                    vec![self.name.clone()]
                } else {
                    free.iter().map(|i| format!("{}[{},{}]", self.name, i + 1, i + 1)).collect()
                }
            }
            ParamKind::Full { dim, .. } => {
                let mut out: Vec<String> = (0..*dim).map(|i| format!("{}[{},{}]", self.name, i + 1, i + 1)).collect();
                for j in 1..*dim {
                    for i in 0..j {
                        out.push(format!("{}[{},{}]", self.name, i + 1, j + 1));
                    }
                }
                out
            }
            ParamKind::ArimaAr { len, .. } => (1..=*len).map(|i| format!("{}.ar{i}", self.name)).collect(),
            ParamKind::ArimaMa { len, .. } => (1..=*len).map(|i| format!("{}.ma{i}", self.name)).collect(),
        }
    }
}

/// Bookkeeping to rebuild an ARIMA block after its coefficients or variance change.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaSlot<T> {
    pub ar: Vec<T>,
    pub ma: Vec<T>,
    pub d: usize,
    pub copies: usize,
    pub stationary: bool,
    pub state_offset: usize,
    pub eta_offset: usize,
}

/// Location of one component inside the assembled model.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentInfo {
    pub name: String,
    pub kind: &'static str,
    pub states: Range<usize>,
    pub etas: Range<usize>,
    pub index: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AssembledModel<T> {
    pub model: StateSpaceModel<T>,
    pub components: Vec<ComponentInfo>,
    pub params: Vec<ParamBlock>,
    pub arima: Vec<ArimaSlot<T>>,
}

/// A component converted to its system-matrix block.
struct Block<T> {
    kind: &'static str,
    z: Vec<Matrix<T>>,
    t: Vec<Matrix<T>>,
    r: Vec<Matrix<T>>,
    q: Matrix<T>,
    a1: Vec<T>,
    p1: Matrix<T>,
    p1inf: Matrix<T>,
    states: Vec<String>,
    etas: Vec<String>,
    /// Parameter blocks with offsets local to the component.
    params: Vec<ParamBlock>,
    arima: Option<ArimaSlot<T>>,
}

fn cov_param<T: Real>(name: &str, c: &Cov<T>, targets: Vec<(Target, usize)>) -> Option<ParamBlock> {
    match c {
        Cov::Known(_) => None,
        Cov::Diagonal(d) => {
            let free: Vec<usize> = (0..d.len()).filter(|&i| d[i].is_none()).collect();
            if free.is_empty() {
                None
            } else {
                Some(ParamBlock {
                    name: name.into(),
                    kind: ParamKind::Diagonal {
                        dim: d.len(),
                        free,
                        targets,
                    },
                })
            }
        }
        Cov::Full(k) => Some(ParamBlock {
            name: name.into(),
            kind: ParamKind::Full { dim: *k, targets },
        }),
    }
}

fn suffixed(base: &str, copies: usize, i: usize) -> String {
    if copies == 1 {
        base.to_string()
    } else {
        format!("{base}.{}", i + 1)
    }
}

/// `(A ⊗ I_c)` for the kron state ordering.
fn kron_eye<T: Real>(a: &Matrix<T>, c: usize) -> Matrix<T> {
    a.kron(&Matrix::identity(c))
}

/// Loading rows: series `w` of the component (position in `index`) gets
/// `z0` at copy `w` (or copy 0 when common).
fn kron_loadings<T: Real>(z0: &[T], copies: usize, series: usize, common: bool) -> Matrix<T> {
    let m = z0.len() * copies;
    let mut z = Matrix::zeros(series, m);
    for w in 0..series {
        let c = if common { 0 } else { w };
        for (j, &v) in z0.iter().enumerate() {
            z[(w, j * copies + c)] = v;
        }
    }
    z
}

/// ARIMA system matrices for one copy: `(Z0, T0, R0)` with unit variance.
pub fn arima_matrices<T: Real>(ar: &[T], ma: &[T], d: usize) -> (Vec<T>, Matrix<T>, Matrix<T>) {
    let r = ar.len().max(ma.len() + 1);
    let m = d + r;
    let mut z = vec![T::zero(); m];
    for zi in z.iter_mut().take(d + 1) {
        *zi = T::one();
    }
    let mut t = Matrix::zeros(m, m);
    for i in 0..d {
        for j in i..=d {
            t[(i, j)] = T::one();
        }
    }
    for i in 0..r {
        if i < ar.len() {
            t[(d + i, d)] = ar[i];
        }
        if i + 1 < r {
            t[(d + i, d + i + 1)] = T::one();
        }
    }
    let mut rr = Matrix::zeros(m, 1);
    rr[(d, 0)] = T::one();
    for i in 1..r {
        if i <= ma.len() {
            rr[(d + i, 0)] = ma[i - 1];
        }
    }
    (z, t, rr)
}

/// Solves `(I - T ⊗ T) vec(S) = vec(R R^T)` for the stationary covariance.
pub fn stationary_cov<T: Real>(t: &Matrix<T>, r: &Matrix<T>) -> Result<Matrix<T>> {
    let m = t.rows();
    let a = Matrix::identity(m * m).sub(&t.kron(t));
    let rhs = r.matmul_t(r).vec_cols();
    let lu = a.lu().map_err(|_| Error::numeric("I - T ⊗ T is singular"))?;
    if lu.det().abs() < T::epsilon() * T::lit(16.0) {
        return Err(Error::numeric("I - T ⊗ T is singular"));
    }
    let mut s = Matrix::from_vec_cols(m, m, &lu.solve_vec(&rhs));
    s.symmetrize();
    Ok(s)
}

/// Partial autocorrelations of a stationary AR polynomial, or `None` when
/// the polynomial is not stationary.
pub fn ar_to_pacf<T: Real>(ar: &[T]) -> Option<Vec<T>> {
    let p = ar.len();
    let mut phi = ar.to_vec();
    let mut pacf = vec![T::zero(); p];
    for k in (0..p).rev() {
        let a = phi[k];
        if !(a.abs() < T::one()) {
            return None;
        }
        pacf[k] = a;
        let denom = T::one() - a * a;
        let prev: Vec<T> = (0..k).map(|j| (phi[j] + a * phi[k - 1 - j]) / denom).collect();
        phi[..k].copy_from_slice(&prev);
    }
    Some(pacf)
}

/// Inverse of [`ar_to_pacf`] (Durbin-Levinson).
pub fn pacf_to_ar<T: Real>(pacf: &[T]) -> Vec<T> {
    let mut phi: Vec<T> = Vec::with_capacity(pacf.len());
    for (k, &u) in pacf.iter().enumerate() {
        let next: Vec<T> = (0..k).map(|j| phi[j] - u * phi[k - 1 - j]).collect();
        phi = next;
        phi.push(u);
    }
    phi
}

/// Recomputes an ARIMA block from its slot and the current `Q` block.
fn arima_block<T: Real>(slot: &ArimaSlot<T>, q: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let (_, t0, r0) = arima_matrices(&slot.ar, &slot.ma, slot.d);
    let c = slot.copies;
    let m0 = t0.rows();
    let t = kron_eye(&t0, c);
    let r = kron_eye(&r0, c);
    let mut p1 = Matrix::zeros(m0 * c, m0 * c);
    let mut p1inf = Matrix::zeros(m0 * c, m0 * c);
    if slot.stationary {
        let rs = m0 - slot.d;
        let ts = t0.block(slot.d, slot.d, rs, rs);
        let rr = r0.block(slot.d, 0, rs, 1);
        let s0 = stationary_cov(&ts, &rr)?;
        p1.set_block(slot.d * c, slot.d * c, &s0.kron(q));
        for i in 0..slot.d * c {
            p1inf[(i, i)] = T::one();
        }
    } else {
        p1inf = Matrix::identity(m0 * c);
    }
    Ok((t, r, p1, p1inf))
}

fn to_block<T: Real>(spec: &ComponentSpec<T>, n: usize) -> Result<Block<T>> {
    let c = spec.copies();
    let ps = spec.index.len();
    let constant = |m: Matrix<T>| vec![m];
    match &spec.kind {
        ComponentKind::Trend { degree, q } => {
            let d = *degree;
            let mut t0 = Matrix::identity(d);
            for i in 0..d.saturating_sub(1) {
                t0[(i, i + 1)] = T::one();
            }
            let mut z0 = vec![T::zero(); d];
            z0[0] = T::one();
            let labels = ["level", "slope"];
            let mut states = Vec::new();
            for l in 0..d {
                let base = labels.get(l).map_or_else(|| format!("trend{}", l + 1), |s| s.to_string());
                for i in 0..c {
                    states.push(suffixed(&base, c, i));
                }
            }
            let qm = Matrix::block_diag(&q.iter().map(Cov::initial).collect::<Vec<_>>());
            let params = q
                .iter()
                .enumerate()
                .filter_map(|(l, cv)| {
                    let base = labels.get(l).map_or_else(|| format!("trend{}", l + 1), |s| s.to_string());
                    cov_param(&format!("Q.{}.{base}", spec.name), cv, vec![(Target::Q, l * c)])
                })
                .collect();
            Ok(Block {
                kind: "trend",
                z: constant(kron_loadings(&z0, c, ps, spec.common)),
                t: constant(kron_eye(&t0, c)),
                r: constant(Matrix::identity(d * c)),
                q: qm,
                a1: vec![T::zero(); d * c],
                p1: Matrix::zeros(d * c, d * c),
                p1inf: Matrix::identity(d * c),
                etas: states.clone(),
                states,
                params,
                arima: None,
            })
        }
        ComponentKind::SeasonalDummy { period, q } => {
            let m0 = period - 1;
            let mut t0 = Matrix::zeros(m0, m0);
            for j in 0..m0 {
                t0[(0, j)] = -T::one();
            }
            for i in 1..m0 {
                t0[(i, i - 1)] = T::one();
            }
            let mut z0 = vec![T::zero(); m0];
            z0[0] = T::one();
            let mut r0 = Matrix::zeros(m0, 1);
            r0[(0, 0)] = T::one();
            let mut states = Vec::new();
            for j in 0..m0 {
                for i in 0..c {
                    states.push(suffixed(&format!("sea_dummy{}", j + 1), c, i));
                }
            }
            let etas = (0..c).map(|i| suffixed("sea_dummy", c, i)).collect();
            Ok(Block {
                kind: "seasonal",
                z: constant(kron_loadings(&z0, c, ps, spec.common)),
                t: constant(kron_eye(&t0, c)),
                r: constant(kron_eye(&r0, c)),
                q: q.initial(),
                a1: vec![T::zero(); m0 * c],
                p1: Matrix::zeros(m0 * c, m0 * c),
                p1inf: Matrix::identity(m0 * c),
                states,
                etas,
                params: cov_param(&format!("Q.{}", spec.name), q, vec![(Target::Q, 0)]).into_iter().collect(),
                arima: None,
            })
        }
        ComponentKind::SeasonalTrig { period, q } => {
            let s = *period;
            let m0 = s - 1;
            let mut t0 = Matrix::zeros(m0, m0);
            let mut z0 = vec![T::zero(); m0];
            let mut names = Vec::new();
            let mut pos = 0;
            for j in 1..=s / 2 {
                let lambda = T::lit(2.0) * T::PI() * T::lit(j as f64) / T::lit(s as f64);
                z0[pos] = T::one();
                if s % 2 == 0 && j == s / 2 {
                    t0[(pos, pos)] = lambda.cos();
                    names.push(format!("sea_trig{j}"));
                    pos += 1;
                } else {
                    let (sn, cs) = lambda.sin_cos();
                    t0[(pos, pos)] = cs;
                    t0[(pos, pos + 1)] = sn;
                    t0[(pos + 1, pos)] = -sn;
                    t0[(pos + 1, pos + 1)] = cs;
                    names.push(format!("sea_trig{j}"));
                    names.push(format!("sea_trig*{j}"));
                    pos += 2;
                }
            }
            let mut states = Vec::new();
            for nm in &names {
                for i in 0..c {
                    states.push(suffixed(nm, c, i));
                }
            }
            let qm = Matrix::identity(m0).kron(&q.initial());
            let targets = (0..m0).map(|j| (Target::Q, j * c)).collect();
            Ok(Block {
                kind: "seasonal",
                z: constant(kron_loadings(&z0, c, ps, spec.common)),
                t: constant(kron_eye(&t0, c)),
                r: constant(Matrix::identity(m0 * c)),
                q: qm,
                a1: vec![T::zero(); m0 * c],
                p1: Matrix::zeros(m0 * c, m0 * c),
                p1inf: Matrix::identity(m0 * c),
                etas: states.clone(),
                states,
                params: cov_param(&format!("Q.{}", spec.name), q, targets).into_iter().collect(),
                arima: None,
            })
        }
        ComponentKind::Cycle { period, q } => {
            let lambda = T::lit(2.0) * T::PI() / *period;
            let (sn, cs) = lambda.sin_cos();
            let t0 = Matrix::from_vec(2, 2, vec![cs, sn, -sn, cs]);
            let z0 = vec![T::one(), T::zero()];
            let mut states = Vec::new();
            for nm in ["cycle", "cycle*"] {
                for i in 0..c {
                    states.push(suffixed(nm, c, i));
                }
            }
            Ok(Block {
                kind: "cycle",
                z: constant(kron_loadings(&z0, c, ps, spec.common)),
                t: constant(kron_eye(&t0, c)),
                r: constant(Matrix::identity(2 * c)),
                q: Matrix::identity(2).kron(&q.initial()),
                a1: vec![T::zero(); 2 * c],
                p1: Matrix::zeros(2 * c, 2 * c),
                p1inf: Matrix::identity(2 * c),
                etas: states.clone(),
                states,
                params: cov_param(&format!("Q.{}", spec.name), q, vec![(Target::Q, 0), (Target::Q, c)])
                    .into_iter()
                    .collect(),
                arima: None,
            })
        }
        ComponentKind::Arima {
            ar,
            ma,
            d,
            sigma2,
            stationary,
            estimate_ar,
            estimate_ma,
        } => {
            let slot = ArimaSlot {
                ar: ar.clone(),
                ma: ma.clone(),
                d: *d,
                copies: c,
                stationary: *stationary,
                state_offset: 0,
                eta_offset: 0,
            };
            let q = sigma2.initial();
            let (z0, _, _) = arima_matrices(ar, ma, *d);
            let (t, r, p1, p1inf) = arima_block(&slot, &q)?;
            let m0 = z0.len();
            let mut states = Vec::new();
            for j in 0..m0 {
                for i in 0..c {
                    states.push(suffixed(&format!("{}{}", spec.name, j + 1), c, i));
                }
            }
            let etas = (0..c).map(|i| suffixed(&spec.name, c, i)).collect();
            let mut params: Vec<ParamBlock> = Vec::new();
            if *estimate_ar && !ar.is_empty() {
                params.push(ParamBlock {
                    name: spec.name.clone(),
                    kind: ParamKind::ArimaAr { slot: 0, len: ar.len() },
                });
            }
            if *estimate_ma && !ma.is_empty() {
                params.push(ParamBlock {
                    name: spec.name.clone(),
                    kind: ParamKind::ArimaMa { slot: 0, len: ma.len() },
                });
            }
            params.extend(cov_param(&format!("Q.{}", spec.name), sigma2, vec![(Target::Q, 0)]));
            Ok(Block {
                kind: "arima",
                z: constant(kron_loadings(&z0, c, ps, spec.common)),
                t: vec![t],
                r: vec![r],
                q,
                a1: vec![T::zero(); m0 * c],
                p1,
                p1inf,
                states,
                etas,
                params,
                arima: Some(slot),
            })
        }
        ComponentKind::Regression { x, q_coeff, p1, names } => {
            let (xn, q) = x[0].shape();
            if xn != n {
                return Err(Error::Model(format!("regression design has {xn} rows but the data has {n}")));
            }
            let m = q * c;
            let mut zs = Vec::with_capacity(n);
            for t in 0..n {
                let mut z = Matrix::zeros(ps, m);
                for w in 0..ps {
                    let xm = if x.len() == 1 { &x[0] } else { &x[w] };
                    let off = if spec.common { 0 } else { w * q };
                    for j in 0..q {
                        z[(w, off + j)] = xm[(t, j)];
                    }
                }
                zs.push(z);
            }
            let base: Vec<String> = if names.is_empty() {
                (1..=q).map(|j| format!("{}{j}", spec.name)).collect()
            } else {
                names.clone()
            };
            let mut states = Vec::new();
            for i in 0..c {
                for b in &base {
                    states.push(suffixed(b, c, i));
                }
            }
            let offsets: Vec<usize> = (0..c).map(|i| i * q).collect();
            let mut params = Vec::new();
            let (r, qm, etas) = match q_coeff {
                Some(cv) => {
                    params.extend(cov_param(
                        &format!("Q.{}", spec.name),
                        cv,
                        offsets.iter().map(|&o| (Target::Q, o)).collect(),
                    ));
                    (Matrix::identity(m), Matrix::identity(c).kron(&cv.initial()), states.clone())
                }
                None => (Matrix::zeros(m, 0), Matrix::zeros(0, 0), Vec::new()),
            };
            let (p1m, p1inf) = match p1 {
                Some(cv) => {
                    params.extend(cov_param(
                        &format!("P1.{}", spec.name),
                        cv,
                        offsets.iter().map(|&o| (Target::P1, o)).collect(),
                    ));
                    (Matrix::identity(c).kron(&cv.initial()), Matrix::zeros(m, m))
                }
                None => (Matrix::zeros(m, m), Matrix::identity(m)),
            };
            Ok(Block {
                kind: "regression",
                z: zs,
                t: constant(Matrix::identity(m)),
                r: constant(r),
                q: qm,
                a1: vec![T::zero(); m],
                p1: p1m,
                p1inf,
                states,
                etas,
                params,
                arima: None,
            })
        }
        ComponentKind::Custom {
            z,
            t,
            r,
            q,
            a1,
            p1,
            p1inf,
            names,
        } => {
            let m = t.shape().0;
            let k = r.shape().1;
            for (what, len) in [("Z", z.len()), ("T", t.len()), ("R", r.len())] {
                if len != 1 && len < n {
                    return Err(Error::Model(format!("custom {what} has {len} time slices for n = {n}")));
                }
            }
            let states: Vec<String> = if names.is_empty() {
                if m == 1 {
                    vec![spec.name.clone()]
                } else {
                    (1..=m).map(|j| format!("{}{j}", spec.name)).collect()
                }
            } else {
                names.clone()
            };
            let etas: Vec<String> = if k == m {
                states.clone()
            } else {
                (1..=k).map(|j| format!("{}.eta{j}", spec.name)).collect()
            };
            let mut params = Vec::new();
            let qname = format!("Q.{}", spec.name);
            let p1m = match p1 {
                CustomP1::Known(p) => p.clone(),
                CustomP1::Unknown(cv) => {
                    params.extend(cov_param(&format!("P1.{}", spec.name), cv, vec![(Target::P1, 0)]));
                    cv.initial()
                }
                CustomP1::SameAsQ => q.initial(),
            };
            let mut qtargets = vec![(Target::Q, 0)];
            if matches!(p1, CustomP1::SameAsQ) {
                qtargets.push((Target::P1, 0));
            }
            params.extend(cov_param(&qname, q, qtargets));
            Ok(Block {
                kind: "custom",
                z: z.slices().to_vec(),
                t: t.slices().to_vec(),
                r: r.slices().to_vec(),
                q: q.initial(),
                a1: a1.clone(),
                p1: p1m,
                p1inf: p1inf.clone(),
                states,
                etas,
                params,
                arima: None,
            })
        }
    }
}

fn shift_targets(targets: &mut [(Target, usize)], state_off: usize, eta_off: usize) {
    for (tg, o) in targets.iter_mut() {
        match tg {
            Target::Q => *o += eta_off,
            Target::P1 => *o += state_off,
            Target::H => {}
        }
    }
}

/// Combines components block-diagonally into one model.
///
/// `h` is the observation noise covariance over all `p` series; rows of
/// non-Gaussian series must be zero. `u` defaults to ones.
pub fn assemble<T: Real>(
    y: Observations<T>,
    components: Vec<ComponentSpec<T>>,
    distributions: Vec<Distribution>,
    u: Option<Matrix<T>>,
    h: Cov<T>,
) -> Result<AssembledModel<T>> {
    let out = assemble_unchecked(y, components, distributions, u, h)?;
    let violations = out.model.validate();
    if let Some(v) = violations.first() {
        return Err(Error::Model(format!("{}: {}", v.code.as_str(), v.message)));
    }
    Ok(out)
}

/// [`assemble`] without the final model validation, for callers that
/// report every violation themselves.
pub fn assemble_unchecked<T: Real>(
    y: Observations<T>,
    components: Vec<ComponentSpec<T>>,
    distributions: Vec<Distribution>,
    u: Option<Matrix<T>>,
    h: Cov<T>,
) -> Result<AssembledModel<T>> {
    if components.is_empty() {
        return Err(Error::Model("no components".into()));
    }
    let (n, p) = (y.n(), y.p());
    if distributions.len() != p {
        return Err(Error::Model(format!("{} distributions for {p} series", distributions.len())));
    }
    check_cov_dim(&h, p, "H")?;
    let mut seen = HashSet::new();
    for c in &components {
        if !seen.insert(c.name.clone()) {
            return Err(Error::Model(format!("duplicate component name {}", c.name)));
        }
        if let Some(&i) = c.index.iter().find(|&&i| i >= p) {
            return Err(Error::Model(format!("component {} loads on series {} but p = {p}", c.name, i + 1)));
        }
    }
    let blocks = components.iter().map(|c| to_block(c, n)).collect::<Result<Vec<_>>>()?;

    let m: usize = blocks.iter().map(|b| b.a1.len()).sum();
    let k: usize = blocks.iter().map(|b| b.q.rows()).sum();
    let tv = |f: fn(&Block<T>) -> usize| blocks.iter().any(|b| f(b) > 1);
    let (z_tv, t_tv, r_tv) = (tv(|b| b.z.len()), tv(|b| b.t.len()), tv(|b| b.r.len()));

    let mut infos = Vec::with_capacity(blocks.len());
    let mut params = Vec::new();
    let mut arima = Vec::new();
    let mut names = HashSet::new();
    let (mut so, mut eo) = (0, 0);
    for (spec, b) in components.iter().zip(&blocks) {
        let (mb, kb) = (b.a1.len(), b.q.rows());
        for s in &b.states {
            if !names.insert(s.clone()) {
                return Err(Error::Model(format!("duplicate state name {s}")));
            }
        }
        for pb in &b.params {
            let mut pb = pb.clone();
            match &mut pb.kind {
                ParamKind::Diagonal { targets, .. } | ParamKind::Full { targets, .. } => shift_targets(targets, so, eo),
                ParamKind::ArimaAr { slot, .. } | ParamKind::ArimaMa { slot, .. } => *slot = arima.len(),
            }
            params.push(pb);
        }
        if let Some(slot) = &b.arima {
            let mut slot = slot.clone();
            slot.state_offset = so;
            slot.eta_offset = eo;
            arima.push(slot);
        }
        infos.push(ComponentInfo {
            name: spec.name.clone(),
            kind: b.kind,
            states: so..so + mb,
            etas: eo..eo + kb,
            index: spec.index.clone(),
        });
        so += mb;
        eo += kb;
    }
    params.extend(cov_param("H", &h, vec![(Target::H, 0)]));

    let build = |tv: bool, rows: usize, cols: usize, place: &dyn Fn(&Block<T>, &ComponentInfo, usize, &mut Matrix<T>)| {
        let slices = if tv { n } else { 1 };
        let mats = (0..slices)
            .map(|t| {
                let mut out = Matrix::zeros(rows, cols);
                for (b, info) in blocks.iter().zip(&infos) {
                    place(b, info, t, &mut out);
                }
                out
            })
            .collect::<Vec<_>>();
        if tv {
            SystemMatrix::time_varying(mats)
        } else {
            SystemMatrix::constant(mats.into_iter().next().unwrap())
        }
    };
    let pick = |v: &[Matrix<T>], t: usize| -> Matrix<T> { v[if v.len() == 1 { 0 } else { t }].clone() };
    let zsys = build(z_tv, p, m, &|b, info, t, out| {
        let zb = pick(&b.z, t);
        for (w, &i) in info.index.iter().enumerate() {
            for j in 0..zb.cols() {
                out[(i, info.states.start + j)] = zb[(w, j)];
            }
        }
    });
    let tsys = build(t_tv, m, m, &|b, info, t, out| out.set_block(info.states.start, info.states.start, &pick(&b.t, t)));
    let rsys = build(r_tv, m, k, &|b, info, t, out| out.set_block(info.states.start, info.etas.start, &pick(&b.r, t)));
    let q = Matrix::block_diag(&blocks.iter().map(|b| b.q.clone()).collect::<Vec<_>>());
    let p1 = Matrix::block_diag(&blocks.iter().map(|b| b.p1.clone()).collect::<Vec<_>>());
    let p1inf = Matrix::block_diag(&blocks.iter().map(|b| b.p1inf.clone()).collect::<Vec<_>>());
    let a1: Vec<T> = blocks.iter().flat_map(|b| b.a1.iter().copied()).collect();
    let state_names: Vec<String> = blocks.iter().flat_map(|b| b.states.iter().cloned()).collect();
    let mut eta_names: Vec<String> = blocks.iter().flat_map(|b| b.etas.iter().cloned()).collect();
    let mut seen_eta = HashSet::new();
    for (j, e) in eta_names.iter_mut().enumerate() {
        if !seen_eta.insert(e.clone()) {
            *e = format!("{e}.{}", j + 1);
        }
    }

    let mut model = StateSpaceModel::new(y, zsys, tsys, rsys, SystemMatrix::constant(q))
        .with_obs_cov(SystemMatrix::constant(h.initial()))
        .with_init(a1, p1, p1inf)
        .with_distribution(distributions)
        .with_state_names(state_names);
    model.eta_names = eta_names;
    if let Some(u) = u {
        model = model.with_obs_param(u);
    }
    Ok(AssembledModel {
        model,
        components: infos,
        params,
        arima,
    })
}

impl<T: Real> AssembledModel<T> {
    pub fn n_params(&self) -> usize {
        self.params.iter().map(ParamBlock::len).sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().flat_map(ParamBlock::names).collect()
    }

    pub fn component(&self, name: &str) -> Option<&ComponentInfo> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Unconstrained parameter vector reproducing the current model values.
    pub fn initial_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for pb in &self.params {
            match &pb.kind {
                ParamKind::Diagonal { free, targets, .. } => {
                    let (tg, o) = targets[0];
                    let mat = self.target(tg);
                    for &i in free {
                        out.push(mat[(o + i, o + i)].max(T::lit(1e-300)).ln());
                    }
                }
                ParamKind::Full { dim, targets } => {
                    let (tg, o) = targets[0];
                    let block = self.target(tg).block(o, o, *dim, *dim);
                    // S = U^T U with U = L^T
                    let u = block
                        .cholesky()
                        .map(|l| l.transpose())
                        .unwrap_or_else(|| Matrix::identity(*dim));
                    for i in 0..*dim {
                        out.push(u[(i, i)].max(T::lit(1e-150)).ln());
                    }
                    for j in 1..*dim {
                        for i in 0..j {
                            out.push(u[(i, j)]);
                        }
                    }
                }
                ParamKind::ArimaAr { slot, .. } => {
                    let pacf = ar_to_pacf(&self.arima[*slot].ar).unwrap_or_else(|| vec![T::zero(); self.arima[*slot].ar.len()]);
                    let lim = T::one() - T::lit(1e-12);
                    out.extend(pacf.iter().map(|&u| u.max(-lim).min(lim).atanh()));
                }
                ParamKind::ArimaMa { slot, .. } => out.extend(self.arima[*slot].ma.iter().copied()),
            }
        }
        out
    }

    fn target(&self, tg: Target) -> &Matrix<T> {
        match tg {
            Target::H => self.model.obs_cov.at(0),
            Target::Q => self.model.state_cov.at(0),
            Target::P1 => &self.model.init_cov,
        }
    }

    /// Natural-scale values (variances, covariances, coefficients) of `theta`.
    pub fn natural_params(&self, theta: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(theta.len());
        let mut pos = 0;
        for pb in &self.params {
            let len = pb.len();
            let th = &theta[pos..pos + len];
            match &pb.kind {
                ParamKind::Diagonal { .. } => out.extend(th.iter().map(|x| x.exp())),
                ParamKind::Full { dim, .. } => {
                    let s = full_cov(th, *dim);
                    out.extend((0..*dim).map(|i| s[(i, i)]));
                    for j in 1..*dim {
                        for i in 0..j {
                            out.push(s[(i, j)]);
                        }
                    }
                }
                ParamKind::ArimaAr { .. } => out.extend(pacf_to_ar(&th.iter().map(|x| x.tanh()).collect::<Vec<_>>())),
                ParamKind::ArimaMa { .. } => out.extend_from_slice(th),
            }
            pos += len;
        }
        out
    }

    /// Model with the unknown parameters set from `theta`.
    pub fn update(&self, theta: &[T]) -> Result<StateSpaceModel<T>> {
        let mut model = self.model.clone();
        let mut arima = self.arima.clone();
        self.update_into(&mut model, &mut arima, theta)?;
        Ok(model)
    }

    /// In-place variant of [`update`](Self::update); `arima` receives the
    /// updated coefficients.
    pub fn update_into(&self, model: &mut StateSpaceModel<T>, arima: &mut [ArimaSlot<T>], theta: &[T]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Estimation("non-finite parameter".into()));
        }
        let mut pos = 0;
        for pb in &self.params {
            let len = pb.len();
            let th = &theta[pos..pos + len];
            pos += len;
            match &pb.kind {
                ParamKind::Diagonal { free, targets, .. } => {
                    for &(tg, o) in targets {
                        let mat = target_mut(model, tg);
                        for (&i, x) in free.iter().zip(th) {
                            mat[(o + i, o + i)] = x.exp();
                        }
                    }
                }
                ParamKind::Full { dim, targets } => {
                    let s = full_cov(th, *dim);
                    for &(tg, o) in targets {
                        target_mut(model, tg).set_block(o, o, &s);
                    }
                }
                ParamKind::ArimaAr { slot, .. } => {
                    arima[*slot].ar = pacf_to_ar(&th.iter().map(|x| x.tanh()).collect::<Vec<_>>());
                }
                ParamKind::ArimaMa { slot, .. } => arima[*slot].ma = th.to_vec(),
            }
        }
        for slot in arima.iter() {
            let c = slot.copies;
            let q = model.state_cov.at(0).block(slot.eta_offset, slot.eta_offset, c, c);
            let (t, r, p1, _) = arima_block(slot, &q)?;
            let (so, eo) = (slot.state_offset, slot.eta_offset);
            for tm in model.transition.slices_mut() {
                tm.set_block(so, so, &t);
            }
            for rm in model.selection.slices_mut() {
                rm.set_block(so, eo, &r);
            }
            model.init_cov.set_block(so, so, &p1);
        }
        Ok(())
    }
}

fn target_mut<T: Real>(model: &mut StateSpaceModel<T>, tg: Target) -> &mut Matrix<T> {
    match tg {
        Target::H => model.obs_cov.at_mut(0),
        Target::Q => model.state_cov.at_mut(0),
        Target::P1 => &mut model.init_cov,
    }
}

/// `U^T U` from log-diagonal and column-major upper triangle.
fn full_cov<T: Real>(th: &[T], dim: usize) -> Matrix<T> {
    let mut u = Matrix::zeros(dim, dim);
    for i in 0..dim {
        u[(i, i)] = th[i].exp();
    }
    let mut pos = dim;
    for j in 1..dim {
        for i in 0..j {
            u[(i, j)] = th[pos];
            pos += 1;
        }
    }
    let mut s = u.t_matmul(&u);
    s.symmetrize();
    s
}
