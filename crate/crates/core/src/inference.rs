//! Maximum likelihood fitting, prediction, residuals and signal extraction.

use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::BFGS;
use log::{debug, info, warn};

use crate::approx::{approximate, filter_nongaussian, ApproxOptions};
use crate::builders::AssembledModel;
use crate::error::{Error, Result};
use crate::filter::{filter, reconstruct_multivariate};
use crate::likelihood::{diffuse_columns_differ, loglik_gaussian, loglik_nongaussian, LogLik};
use crate::linalg::Matrix;
use crate::model::{StateSpaceModel, SystemMatrix};
use crate::scalar::Real;
use crate::simulation::{normal_quantile, predict_intervals_nongaussian, IntervalKind};
use crate::smoother::{smooth_disturbances, smooth_states, SmoothResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    NelderMead,
    /// Quasi-Newton with central finite-difference gradients.
    Bfgs,
}

#[derive(Debug, Clone)]
pub struct FitOptions<T> {
    pub optimizer: Optimizer,
    pub max_iter: u64,
    /// Convergence tolerance on the spread of simplex values (Nelder-Mead)
    /// or on the gradient norm (BFGS).
    pub tol: f64,
    pub nsim: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Starting vectors; the current model values are used when empty.
    pub starts: Vec<Vec<T>>,
    /// For non-Gaussian models with `nsim > 0`, optimize the `nsim = 0`
    /// likelihood first and refine from its optimum.
    pub two_stage: bool,
    pub approx: ApproxOptions<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            optimizer: Optimizer::NelderMead,
            max_iter: 5000,
            tol: 1e-10,
            nsim: 0,
            seed: 1,
            antithetic: true,
            starts: Vec::new(),
            two_stage: true,
            approx: ApproxOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    /// Unconstrained parameter vector.
    pub params: Vec<T>,
    /// Variances, covariances and coefficients on their natural scale.
    pub natural: Vec<T>,
    pub names: Vec<String>,
    pub model: StateSpaceModel<T>,
    pub loglik: LogLik<T>,
    pub initial_loglik: T,
    pub evaluations: usize,
    pub converged: bool,
    /// `a_{n+1}` and `sqrt(diag P_{n+1})`; for non-Gaussian models these
    /// come from the approximating model.
    pub final_state: Vec<T>,
    pub final_state_sd: Vec<T>,
}

/// Log-likelihood of `model` with the settings of `opts`.
pub fn model_loglik<T: Real>(model: &StateSpaceModel<T>, nsim: usize, opts: &FitOptions<T>) -> Result<LogLik<T>> {
    if model.is_gaussian() {
        Ok(loglik_gaussian(&filter(model)?))
    } else {
        loglik_nongaussian(model, nsim, opts.seed, opts.antithetic, &opts.approx)
    }
}

struct Objective<'a, T> {
    assembled: &'a AssembledModel<T>,
    opts: &'a FitOptions<T>,
    nsim: usize,
    evals: Cell<usize>,
    /// Lowest cost seen and its argument.
    best: RefCell<(f64, Vec<f64>)>,
}

/// Stand-in for an infeasible point; finite so the simplex ordering holds.
const INFEASIBLE: f64 = 1e300;

impl<T: Real> Objective<'_, T> {
    fn eval(&self, x: &[f64]) -> f64 {
        self.evals.set(self.evals.get() + 1);
        let theta: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        let value = self
            .assembled
            .update(&theta)
            .and_then(|m| model_loglik(&m, self.nsim, self.opts))
            .map(|l| -l.value.as_f64());
        match value {
            Ok(v) if v.is_finite() => {
                let mut best = self.best.borrow_mut();
                if v < best.0 {
                    *best = (v, x.to_vec());
                }
                v
            }
            Ok(_) => INFEASIBLE,
            Err(e) => {
                debug!("likelihood evaluation failed: {e}");
                INFEASIBLE
            }
        }
    }
}

impl<T: Real> CostFunction for &Objective<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x))
    }
}

impl<T: Real> Gradient for &Objective<'_, T> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            g[i] = (self.eval(&up) - self.eval(&down)) / (2.0 * h);
        }
        Ok(g)
    }
}

struct StageResult {
    x: Vec<f64>,
    cost: f64,
    converged: bool,
}

fn solver_error(e: argmin::core::Error) -> Error {
    Error::Estimation(format!("optimizer failed: {e}"))
}

fn converged_status(s: &TerminationStatus) -> bool {
    matches!(
        s,
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
            | TerminationStatus::Terminated(TerminationReason::TargetCostReached)
    )
}

fn nelder_mead<T: Real>(obj: &Objective<'_, T>, start: &[f64], step: f64, opts: &FitOptions<T>) -> Result<StageResult> {
    let mut simplex = vec![start.to_vec()];
    for i in 0..start.len() {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(opts.tol).map_err(solver_error)?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.max_iters(opts.max_iter))
        .run()
        .map_err(solver_error)?;
    let st = res.state();
    Ok(StageResult {
        x: st.get_best_param().cloned().unwrap_or_else(|| start.to_vec()),
        cost: st.get_best_cost(),
        converged: converged_status(st.get_termination_status()),
    })
}

fn bfgs<T: Real>(obj: &Objective<'_, T>, start: &[f64], start_cost: f64, opts: &FitOptions<T>) -> Result<StageResult> {
    let n = start.len();
    // relative change in cost, as finite-difference gradients rarely meet
    // a tight gradient tolerance
    let reltol = f64::EPSILON.sqrt() * (1.0 + start_cost.abs());
    let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(opts.tol.max(1e-8))
        .map_err(solver_error)?
        .with_tolerance_cost(reltol)
        .map_err(solver_error)?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.param(start.to_vec()).inv_hessian(eye).max_iters(opts.max_iter))
        .run()
        .map_err(solver_error)?;
    let st = res.state();
    Ok(StageResult {
        x: st.get_best_param().cloned().unwrap_or_else(|| start.to_vec()),
        cost: st.get_best_cost(),
        converged: converged_status(st.get_termination_status()),
    })
}

/// Optimizes from `start`; Nelder-Mead is restarted from its optimum with a
/// smaller simplex until the restart no longer improves.
fn optimize<T: Real>(obj: &Objective<'_, T>, start: &[f64], opts: &FitOptions<T>) -> Result<StageResult> {
    let start_cost = obj.eval(start);
    let mut best = match opts.optimizer {
        Optimizer::Bfgs => {
            // a failed line search discards the solver state; restart from
            // the best point seen with a fresh Hessian while that improves
            let mut from = start.to_vec();
            let mut result = None;
            for _ in 0..5 {
                match bfgs(obj, &from, start_cost, opts) {
                    Ok(r) => {
                        result = Some(r);
                        break;
                    }
                    Err(e) => {
                        let (cost, x) = obj.best.borrow().clone();
                        let before = obj.eval(&from);
                        if x.is_empty() || cost >= before - 1e-9 * (1.0 + before.abs()) {
                            warn!("{e}; falling back to Nelder-Mead");
                            break;
                        }
                        debug!("{e}; restarting BFGS");
                        from = x;
                    }
                }
            }
            match result {
                Some(r) => r,
                None => nelder_mead(obj, &from, 0.5, opts)?,
            }
        }
        Optimizer::NelderMead => {
            let mut r = nelder_mead(obj, start, 0.5, opts)?;
            for _ in 0..3 {
                let again = nelder_mead(obj, &r.x, 0.1, opts)?;
                let gain = r.cost - again.cost;
                let done = gain <= 1e-9 * (1.0 + r.cost.abs());
                if again.cost <= r.cost {
                    r = again;
                }
                if done {
                    break;
                }
            }
            r
        }
    };
    if start_cost < best.cost {
        best = StageResult {
            x: start.to_vec(),
            cost: start_cost,
            converged: best.converged,
        };
    }
    Ok(best)
}

/// Maximum likelihood estimation of the unknown parameters of `assembled`.
/// Non-convergence is reported in the result, not as an error.
pub fn fit<T: Real>(assembled: &AssembledModel<T>, opts: &FitOptions<T>) -> Result<FitResult<T>> {
    let k = assembled.n_params();
    let base = assembled.initial_params();
    let starts: Vec<Vec<T>> = if opts.starts.is_empty() { vec![base.clone()] } else { opts.starts.clone() };
    if let Some(s) = starts.iter().find(|s| s.len() != k) {
        return Err(Error::Usage(format!("starting vector has {} values, expected {k}", s.len())));
    }
    let gaussian = assembled.model.is_gaussian();
    if opts.nsim > 0 && gaussian {
        debug!("model is Gaussian; nsim is ignored");
    }
    warn_diffuse_dependence(assembled, &starts[0]);
    let initial_model = assembled.update(&starts[0])?;
    let initial_loglik = model_loglik(&initial_model, opts.nsim, opts)
        .map(|l| l.value)
        .unwrap_or_else(|_| T::neg_infinity());
    let mut evaluations = 1;
    let mut best: Option<StageResult> = None;
    if k > 0 {
        for (s, start) in starts.iter().enumerate() {
            let x0: Vec<f64> = start.iter().map(|v| v.as_f64()).collect();
            let stage_one = !gaussian && opts.nsim > 0 && opts.two_stage;
            let first_nsim = if stage_one { 0 } else { opts.nsim };
            let obj = Objective {
                assembled,
                opts,
                nsim: first_nsim,
                evals: Cell::new(0),
                best: RefCell::new((f64::INFINITY, Vec::new())),
            };
            let mut r = optimize(&obj, &x0, opts)?;
            evaluations += obj.evals.get();
            if stage_one {
                info!("start {}: nsim = 0 stage reached {}", s + 1, -r.cost);
                let obj = Objective {
                    assembled,
                    opts,
                    nsim: opts.nsim,
                    evals: Cell::new(0),
                    best: RefCell::new((f64::INFINITY, Vec::new())),
                };
                r = optimize(&obj, &r.x, opts)?;
                evaluations += obj.evals.get();
            }
            info!("start {}: log-likelihood {}", s + 1, -r.cost);
            if best.as_ref().is_none_or(|b| r.cost < b.cost) {
                best = Some(r);
            }
        }
    }
    let (params, converged) = match best {
        Some(b) if b.cost < INFEASIBLE => (b.x.iter().map(|&v| T::lit(v)).collect::<Vec<T>>(), b.converged),
        Some(_) => (starts[0].clone(), false),
        None => (starts[0].clone(), true),
    };
    if !converged {
        warn!("optimizer did not converge");
    }
    let model = assembled.update(&params)?;
    let loglik = model_loglik(&model, opts.nsim, opts)?;
    let fr = if model.is_gaussian() {
        filter(&model)?
    } else {
        approximate(&model, &opts.approx)?.filtered
    };
    let n = model.n();
    let final_state = fr.a[n].clone();
    let final_state_sd = fr.p_star[n].diag().iter().map(|&v| v.max(T::zero()).sqrt()).collect();
    Ok(FitResult {
        natural: assembled.natural_params(&params),
        names: assembled.param_names(),
        params,
        model,
        loglik,
        initial_loglik,
        evaluations,
        converged,
        final_state,
        final_state_sd,
    })
}

fn warn_diffuse_dependence<T: Real>(assembled: &AssembledModel<T>, theta: &[T]) {
    let Ok(base) = assembled.update(theta) else {
        return;
    };
    for (i, name) in assembled.param_names().iter().enumerate() {
        let mut moved = theta.to_vec();
        moved[i] += T::lit(0.1);
        if let Ok(other) = assembled.update(&moved) {
            if diffuse_columns_differ(&base, &other) {
                warn!("parameter {name} enters Z or T columns of diffuse states; the diffuse likelihood is not corrected for this");
            }
        }
    }
}

/// Future system matrices and observation parameters. Time-varying system
/// matrices of the model must be supplied for every step.
#[derive(Debug, Clone, Default)]
pub struct Horizon<T> {
    pub steps: usize,
    pub loadings: Option<Vec<Matrix<T>>>,
    pub obs_cov: Option<Vec<Matrix<T>>>,
    pub transition: Option<Vec<Matrix<T>>>,
    pub selection: Option<Vec<Matrix<T>>>,
    pub state_cov: Option<Vec<Matrix<T>>>,
    /// `u` for the future rows, steps x p; required for non-Gaussian series.
    pub obs_param: Option<Matrix<T>>,
}

impl<T: Real> Horizon<T> {
    pub fn steps(steps: usize) -> Self {
        Horizon {
            steps,
            loadings: None,
            obs_cov: None,
            transition: None,
            selection: None,
            state_cov: None,
            obs_param: None,
        }
    }
}

fn extend_system<T: Real>(name: &str, sm: &SystemMatrix<T>, n: usize, future: &Option<Vec<Matrix<T>>>, steps: usize) -> Result<SystemMatrix<T>> {
    match future {
        None if sm.is_time_varying() => {
            if sm.len() >= n + steps {
                Ok(sm.clone())
            } else {
                Err(Error::Usage(format!("{name} is time-varying; the horizon must supply {steps} future values")))
            }
        }
        None => Ok(sm.clone()),
        Some(f) => {
            if f.len() != steps || f.iter().any(|m| m.shape() != sm.shape()) {
                return Err(Error::Usage(format!("horizon {name} must hold {steps} matrices of shape {:?}", sm.shape())));
            }
            let mut mats = sm.expanded(n);
            mats.truncate(n);
            mats.extend(f.iter().cloned());
            Ok(SystemMatrix::time_varying(mats))
        }
    }
}

/// The model followed by `horizon.steps` time points with missing data.
pub fn extend_model<T: Real>(model: &StateSpaceModel<T>, horizon: &Horizon<T>) -> Result<StateSpaceModel<T>> {
    let (n, p, h) = (model.n(), model.p(), horizon.steps);
    let mut out = model.clone();
    out.y = model.y.extended(h);
    out.loadings = extend_system("Z", &model.loadings, n, &horizon.loadings, h)?;
    out.obs_cov = extend_system("H", &model.obs_cov, n, &horizon.obs_cov, h)?;
    out.transition = extend_system("T", &model.transition, n, &horizon.transition, h)?;
    out.selection = extend_system("R", &model.selection, n, &horizon.selection, h)?;
    out.state_cov = extend_system("Q", &model.state_cov, n, &horizon.state_cov, h)?;
    let future_u = match &horizon.obs_param {
        Some(u) => {
            if u.shape() != (h, p) {
                return Err(Error::Usage(format!("horizon u must be {h} x {p}")));
            }
            u.clone()
        }
        None => {
            if !model.is_gaussian() && h > 0 {
                return Err(Error::Usage("the horizon must supply u for non-Gaussian series".into()));
            }
            Matrix::from_vec(h, p, vec![T::one(); h * p])
        }
    };
    let mut u = Matrix::zeros(n + h, p);
    u.set_block(0, 0, &model.obs_param.block(0, 0, n, p));
    u.set_block(n, 0, &future_u);
    out.obs_param = u;
    Ok(out)
}

/// Point predictions with interval bounds; row `r` is time `start + r`.
#[derive(Debug, Clone)]
pub struct Forecast<T> {
    pub start: usize,
    pub point: Vec<Vec<T>>,
    pub lower: Vec<Vec<T>>,
    pub upper: Vec<Vec<T>>,
}

/// Predictions of `E(y_t)` for the horizon (or in-sample when the horizon
/// is empty), with confidence or prediction intervals.
pub fn predict<T: Real>(
    model: &StateSpaceModel<T>,
    horizon: &Horizon<T>,
    kind: IntervalKind,
    level: T,
    nsim: usize,
    seed: u64,
    approx: &ApproxOptions<T>,
) -> Result<Forecast<T>> {
    if !(level >= T::zero() && level < T::one()) {
        return Err(Error::Usage("level must lie in [0, 1)".into()));
    }
    let ext = extend_model(model, horizon)?;
    let start = if horizon.steps == 0 { 0 } else { model.n() };
    let p = ext.p();
    if ext.is_gaussian() {
        let fr = filter(&ext)?;
        let sm = smooth_states(&fr, &ext)?;
        let z = normal_quantile((T::one() + level) / T::lit(2.0));
        let mut out = Forecast {
            start,
            point: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for t in start..ext.n() {
            let cov = &sm.v_theta[t];
            let mut lo = Vec::with_capacity(p);
            let mut hi = Vec::with_capacity(p);
            for i in 0..p {
                let mut var = cov[i];
                if kind == IntervalKind::Prediction {
                    var += ext.obs_cov.at(t)[(i, i)];
                }
                let half = z * var.max(T::zero()).sqrt();
                lo.push(sm.thetahat[t][i] - half);
                hi.push(sm.thetahat[t][i] + half);
            }
            out.point.push(sm.thetahat[t].clone());
            out.lower.push(lo);
            out.upper.push(hi);
        }
        return Ok(out);
    }
    if nsim == 0 {
        return Err(Error::Usage("intervals for non-Gaussian models need nsim > 0".into()));
    }
    let iv = predict_intervals_nongaussian(&ext, level, kind, nsim, seed, approx)?;
    Ok(Forecast {
        start,
        point: iv.point[start..].to_vec(),
        lower: iv.lower[start..].to_vec(),
        upper: iv.upper[start..].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Recursive,
    Cholesky,
    Marginal,
    Quadratic,
    Auxiliary,
}

impl ResidualKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualKind::Recursive => "recursive",
            ResidualKind::Cholesky => "cholesky",
            ResidualKind::Marginal => "marginal",
            ResidualKind::Quadratic => "quadratic",
            ResidualKind::Auxiliary => "auxiliary",
        }
    }
}

/// Residuals as an n-row table; `None` marks times of the diffuse phase
/// and unobserved cells.
#[derive(Debug, Clone)]
pub struct ResidualSet<T> {
    pub kind: ResidualKind,
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<T>>>,
}

fn series_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("series{i}")).collect()
}

/// Standardized residuals of the given kind. Non-Gaussian recursive and
/// marginal residuals use `filter_nongaussian` with `nsim` draws.
pub fn residuals<T: Real>(
    model: &StateSpaceModel<T>,
    kind: ResidualKind,
    nsim: usize,
    seed: u64,
    approx: &ApproxOptions<T>,
) -> Result<ResidualSet<T>> {
    let (n, p) = (model.n(), model.p());
    if !model.is_gaussian() {
        return match kind {
            ResidualKind::Recursive | ResidualKind::Marginal => nongaussian_recursive(model, kind, nsim, seed, approx),
            _ => Err(Error::Usage(format!("{} residuals need a Gaussian model", kind.as_str()))),
        };
    }
    let fr = filter(model)?;
    let mut values = vec![vec![None; p]; n];
    match kind {
        ResidualKind::Recursive => {
            for (t, row) in values.iter_mut().enumerate().skip(fr.d) {
                for (i, cell) in row.iter_mut().enumerate() {
                    let idx = fr.idx(t, i);
                    if fr.observed[idx] && fr.updated[idx] && !fr.diffuse_update[idx] {
                        *cell = Some(fr.v[idx] / fr.f[idx].sqrt());
                    }
                }
            }
            Ok(ResidualSet { kind, names: series_names(p), values })
        }
        ResidualKind::Marginal | ResidualKind::Cholesky => {
            for (t, row) in values.iter_mut().enumerate().skip(fr.d) {
                let step = reconstruct_multivariate(&fr, model, t)?;
                if step.observed.is_empty() {
                    continue;
                }
                let std = if kind == ResidualKind::Marginal {
                    step.v.iter().enumerate().map(|(j, &v)| v / step.f[(j, j)].sqrt()).collect()
                } else {
                    let l = step.f.cholesky().ok_or_else(|| Error::numeric_at("prediction error covariance is not positive definite", t, 0))?;
                    forward_solve(&l, &step.v)
                };
                for (&i, s) in step.observed.iter().zip(std) {
                    row[i] = Some(s);
                }
            }
            Ok(ResidualSet { kind, names: series_names(p), values })
        }
        ResidualKind::Quadratic => {
            let mut q = vec![vec![None]; n];
            for (t, row) in q.iter_mut().enumerate().skip(fr.d) {
                let step = reconstruct_multivariate(&fr, model, t)?;
                if step.observed.is_empty() {
                    continue;
                }
                let x = step.f.solve_vec(&step.v)?;
                row[0] = Some(step.v.iter().zip(x).map(|(&a, b)| a * b).sum());
            }
            Ok(ResidualSet {
                kind,
                names: vec!["quadratic".into()],
                values: q,
            })
        }
        ResidualKind::Auxiliary => {
            let sm = smooth_disturbances(&fr, model)?;
            let k = model.k();
            let mut names: Vec<String> = (1..=p).map(|i| format!("eps{i}")).collect();
            names.extend(model.eta_names.iter().cloned());
            let mut out = vec![vec![None; p + k]; n];
            for (t, row) in out.iter_mut().enumerate() {
                let h = model.obs_cov.at(t);
                for i in model.observed_at(t) {
                    row[i] = standardize(sm.epshat[t][i], h[(i, i)] - sm.v_eps[t][i], h[(i, i)]);
                }
                let q = model.state_cov.at(t);
                for j in 0..k {
                    row[p + j] = standardize(sm.etahat[t][j], q[(j, j)] - sm.v_eta[t][(j, j)], q[(j, j)]);
                }
            }
            Ok(ResidualSet { kind, names, values: out })
        }
    }
}

/// `x / sqrt(var)` unless the variance vanishes relative to `scale`.
fn standardize<T: Real>(x: T, var: T, scale: T) -> Option<T> {
    if var > T::lit(1e-10) * scale.abs().max(T::lit(1e-300)) {
        Some(x / var.sqrt())
    } else {
        None
    }
}

fn forward_solve<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

fn nongaussian_recursive<T: Real>(
    model: &StateSpaceModel<T>,
    kind: ResidualKind,
    nsim: usize,
    seed: u64,
    approx: &ApproxOptions<T>,
) -> Result<ResidualSet<T>> {
    let (n, p) = (model.n(), model.p());
    let d = approximate(model, approx)?.filtered.d;
    let nf = filter_nongaussian(model, nsim, seed, approx)?;
    let mut values = vec![vec![None; p]; n];
    for (t, row) in values.iter_mut().enumerate().skip(d) {
        for (i, cell) in row.iter_mut().enumerate() {
            let Some(y) = model.y.get(t, i) else {
                continue;
            };
            let var = nf.mean_var[t][i] + nf.expected_var[t][i];
            if var > T::zero() {
                *cell = Some((y - nf.mean_mean[t][i]) / var.sqrt());
            }
        }
    }
    Ok(ResidualSet {
        kind,
        names: series_names(p),
        values,
    })
}

/// Mean and variance of `Z_t[, states] alpha_t[states]`, n x p.
#[derive(Debug, Clone)]
pub struct Signal<T> {
    pub mean: Vec<Vec<T>>,
    pub var: Vec<Vec<T>>,
}

pub fn signal<T: Real>(model: &StateSpaceModel<T>, sm: &SmoothResult<T>, states: &[usize]) -> Result<Signal<T>> {
    if let Some(&j) = states.iter().find(|&&j| j >= model.m()) {
        return Err(Error::Usage(format!("state index {j} out of range")));
    }
    let rows: Vec<usize> = (0..model.p()).collect();
    let mut out = Signal {
        mean: Vec::with_capacity(model.n()),
        var: Vec::with_capacity(model.n()),
    };
    for t in 0..model.n() {
        let z = model.loadings.at(t).select(&rows, states);
        let a: Vec<T> = states.iter().map(|&j| sm.alphahat[t][j]).collect();
        out.mean.push(z.mul_vec(&a));
        out.var.push(z.sandwich(&sm.v[t].select(states, states)).diag());
    }
    Ok(out)
}

/// [`signal`] over the states of the named components.
pub fn component_signal<T: Real>(
    assembled: &AssembledModel<T>,
    model: &StateSpaceModel<T>,
    sm: &SmoothResult<T>,
    names: &[&str],
) -> Result<Signal<T>> {
    let mut states = Vec::new();
    for name in names {
        let c = assembled
            .component(name)
            .ok_or_else(|| Error::Usage(format!("unknown component '{name}'")))?;
        states.extend(c.states.clone());
    }
    states.sort_unstable();
    states.dedup();
    signal(model, sm, &states)
}
