//! `ssmkit` command-line front end.

mod data;
mod failure;
mod output;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ssmkit::approx::{approximate, filter_nongaussian};
use ssmkit::builders::assemble_unchecked;
use ssmkit::filter::filter;
use ssmkit::inference::{fit, model_loglik, predict, residuals, FitOptions, Horizon, ResidualKind};
use ssmkit::simulation::{importance_sample, simulate_conditional, ImportanceSample, IntervalKind, SimTarget};
use ssmkit::smoother::smooth_states;
use ssmkit::{AssembledModel64, LogLik64, Matrix, Model64, Observations};

use crate::data::Table;
use crate::failure::Failure;
use crate::output::{acf, num, opt, write_csv, write_json, write_wide, LogLikFile};
use crate::spec::{resolve, ParamSource, SpecFile};

#[derive(Parser)]
#[command(name = "ssmkit", version, about = "State space models with exact diffuse initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Model specification (JSON).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulation draws; overrides the spec.
    #[arg(long, global = true)]
    nsim: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, default_value_t = 0.95)]
    level: f64,
    #[arg(long, global = true, value_enum, default_value_t = Interval::Confidence)]
    interval: Interval,
    #[arg(long, global = true, value_enum, default_value_t = Kind::Recursive)]
    kind: Kind,
    /// CSV of future exposure, covariate and time values.
    #[arg(long, global = true)]
    horizon: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the specification and data; print every violation.
    Validate,
    /// Estimate unknown parameters; write params.csv, states.csv, loglik.json.
    Fit,
    /// One-step-ahead predicted states and the log-likelihood.
    Filter,
    /// Smoothed states.
    Smooth,
    /// Draws of the states given the data.
    Simulate,
    /// Forecasts with confidence or prediction intervals.
    Predict,
    /// Standardized residuals and their auto- and cross-correlations.
    Residuals,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Interval {
    Confidence,
    Prediction,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Recursive,
    Cholesky,
    Marginal,
    Quadratic,
    Auxiliary,
}

impl From<Kind> for ResidualKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Recursive => ResidualKind::Recursive,
            Kind::Cholesky => ResidualKind::Cholesky,
            Kind::Marginal => ResidualKind::Marginal,
            Kind::Quadratic => ResidualKind::Quadratic,
            Kind::Auxiliary => ResidualKind::Auxiliary,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSMKIT_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        warn!("thread pool: {e}");
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(failures) => {
            for f in &failures {
                eprintln!("{f}");
            }
            ExitCode::from(failures.iter().map(|f| f.exit).max().unwrap_or(1))
        }
    }
}

/// Specification, data and run settings.
struct Context {
    spec: SpecFile,
    spec_path: PathBuf,
    table: Table,
    n: usize,
    labels: Vec<String>,
    nsim: usize,
    seed: Option<u64>,
    opts: FitOptions<f64>,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Vec<Failure>> {
        let spec_path = cli
            .spec
            .clone()
            .ok_or_else(|| vec![Failure::spec("missing-spec", "--spec is required".into())])?;
        let spec = SpecFile::read(&spec_path).map_err(|e| vec![e])?;
        let table = Table::read(&resolve(&spec_path, &spec.data.path)).map_err(|e| vec![e])?;
        let mut problems = spec.check(&table);
        let nsim = cli.nsim.unwrap_or(spec.fit.nsim);
        let seed = cli.seed.or(spec.fit.seed);
        if nsim > 0 && seed.is_none() {
            problems.push(Failure::spec("missing-seed", "a seed is required when nsim > 0".into()));
        }
        let optimizer = spec.optimizer().map_err(|e| problems.push(e)).ok();
        if !problems.is_empty() {
            return Err(problems);
        }
        let n = table.len();
        let labels = match &spec.data.time {
            Some(col) => table.text(col).map_err(|e| vec![e])?,
            None => (1..=n).map(|t| t.to_string()).collect(),
        };
        let mut opts = FitOptions {
            nsim,
            seed: seed.unwrap_or(1),
            antithetic: spec.fit.antithetic,
            starts: spec.fit.starts.clone(),
            ..FitOptions::default()
        };
        if let Some(o) = optimizer {
            opts.optimizer = o;
        }
        if let Some(m) = spec.fit.max_iter {
            opts.max_iter = m;
        }
        Ok(Context {
            spec,
            spec_path,
            table,
            n,
            labels,
            nsim,
            seed,
            opts,
        })
    }

    /// The model over `table`, whose first `n_obs` rows carry observations.
    fn assemble(&self, table: &Table, n_obs: usize) -> Result<AssembledModel64, Vec<Failure>> {
        let one = |e: Failure| vec![e];
        let rows = table.len();
        let p = self.spec.p();
        let mut cells = Vec::with_capacity(rows * p);
        let series = self
            .spec
            .data
            .series
            .iter()
            .map(|s| table.column(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(one)?;
        for t in 0..rows {
            for s in &series {
                cells.push(if t < n_obs { s[t] } else { None });
            }
        }
        let exposure = self.spec.exposure().map_err(one)?;
        let u = if exposure.iter().any(Option::is_some) {
            let mut u = Matrix::from_vec(rows, p, vec![1.0; rows * p]);
            for (i, col) in exposure.iter().enumerate() {
                if let Some(col) = col {
                    for (t, v) in table.complete(col, rows).map_err(one)?.into_iter().enumerate() {
                        u[(t, i)] = v;
                    }
                }
            }
            Some(u)
        } else {
            None
        };
        let dists = self.spec.distributions().map_err(one)?;
        let h = self.spec.h(&dists).map_err(one)?;
        let components = self.spec.components(table, rows).map_err(one)?;
        let assembled =
            assemble_unchecked(Observations::new(rows, p, cells), components, dists, u, h).map_err(|e| vec![Failure::from(e)])?;
        let violations = assembled.model.validate();
        if violations.is_empty() {
            Ok(assembled)
        } else {
            Err(violations.into_iter().map(|v| Failure::spec(v.code.as_str(), v.message)).collect())
        }
    }

    fn out(&self, cli: &Cli, file: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&cli.out).map_err(|e| Failure::spec("unwritable-output", format!("{}: {e}", cli.out.display())))?;
        Ok(cli.out.join(file))
    }

    fn loglik_file(&self, ll: &LogLik64, converged: bool) -> LogLikFile {
        LogLikFile {
            value: ll.value,
            method: ll.method.to_string(),
            nsim: ll.nsim,
            mc_se: ll.mc_se,
            seed: if ll.nsim > 0 { self.seed } else { None },
            converged,
        }
    }

    fn fixed_parameters(&self, assembled: &AssembledModel64) -> Result<Option<Vec<f64>>, Failure> {
        let theta = match &self.spec.fit.parameters {
            None => return Ok(None),
            Some(ParamSource::Values(v)) => v.clone(),
            Some(ParamSource::File(path)) => {
                let t = Table::read(&resolve(&self.spec_path, path))?;
                let names = t.text("name")?;
                if names != assembled.param_names() {
                    return Err(Failure::spec(
                        "parameter-mismatch",
                        format!("parameter names {names:?} differ from the model's {:?}", assembled.param_names()),
                    ));
                }
                t.complete("transformed", t.len())?
            }
        };
        if theta.len() != assembled.n_params() {
            return Err(Failure::spec(
                "parameter-mismatch",
                format!("{} parameter values for {} unknowns", theta.len(), assembled.n_params()),
            ));
        }
        Ok(Some(theta))
    }

    /// Parameters from the spec, or estimated when unknowns remain.
    fn estimate(&self, assembled: &AssembledModel64) -> Result<Estimate, Failure> {
        if let Some(theta) = self.fixed_parameters(assembled)? {
            let model = assembled.update(&theta)?;
            return Ok(Estimate {
                theta,
                model,
                loglik: None,
                converged: true,
            });
        }
        if assembled.n_params() == 0 {
            return Ok(Estimate {
                theta: Vec::new(),
                model: assembled.model.clone(),
                loglik: None,
                converged: true,
            });
        }
        info!("estimating {} parameters", assembled.n_params());
        let fr = fit(assembled, &self.opts)?;
        if !fr.converged {
            warn!("optimizer did not converge after {} evaluations", fr.evaluations);
        }
        Ok(Estimate {
            theta: fr.params,
            model: fr.model,
            loglik: Some(fr.loglik),
            converged: fr.converged,
        })
    }
}

struct Estimate {
    theta: Vec<f64>,
    model: Model64,
    loglik: Option<LogLik64>,
    converged: bool,
}

fn run(cli: &Cli) -> Result<u8, Vec<Failure>> {
    let one = |e: Failure| vec![e];
    if cli.command == Command::Validate {
        return validate(cli);
    }
    let ctx = Context::load(cli)?;
    let assembled = ctx.assemble(&ctx.table, ctx.n)?;
    let est = ctx.estimate(&assembled).map_err(one)?;
    let model = &est.model;
    let partial = if est.converged { 0 } else { 2 };
    match cli.command {
        Command::Validate => unreachable!(),
        Command::Fit => {
            let ll = match est.loglik {
                Some(ll) => ll,
                None => model_loglik(model, ctx.nsim, &ctx.opts).map_err(|e| one(e.into()))?,
            };
            let natural = assembled.natural_params(&est.theta);
            let rows: Vec<Vec<String>> = assembled
                .param_names()
                .into_iter()
                .zip(natural.iter().zip(&est.theta))
                .map(|(name, (&x, &th))| vec![name, num(x), num(th)])
                .collect();
            write_csv(&ctx.out(cli, "params.csv").map_err(one)?, &["name", "estimate", "transformed"], &rows).map_err(one)?;
            let (mean, sd) = smoothed_states(&ctx, model).map_err(one)?;
            write_states(&ctx, cli, model, &mean, &sd).map_err(one)?;
            write_json(&ctx.out(cli, "loglik.json").map_err(one)?, &ctx.loglik_file(&ll, est.converged)).map_err(one)?;
            if partial != 0 {
                eprintln!("[non-convergence] optimizer did not converge; outputs are flagged converged=false");
            }
        }
        Command::Filter => {
            let (mean, sd) = filtered_states(&ctx, model).map_err(one)?;
            write_states(&ctx, cli, model, &mean, &sd).map_err(one)?;
            let ll = model_loglik(model, ctx.nsim, &ctx.opts).map_err(|e| one(e.into()))?;
            write_json(&ctx.out(cli, "loglik.json").map_err(one)?, &ctx.loglik_file(&ll, est.converged)).map_err(one)?;
        }
        Command::Smooth => {
            let (mean, sd) = smoothed_states(&ctx, model).map_err(one)?;
            write_states(&ctx, cli, model, &mean, &sd).map_err(one)?;
        }
        Command::Simulate => simulate(&ctx, cli, model).map_err(one)?,
        Command::Predict => forecast(&ctx, cli, &est).map_err(one)?,
        Command::Residuals => write_residuals(&ctx, cli, model).map_err(one)?,
    }
    Ok(partial)
}

fn validate(cli: &Cli) -> Result<u8, Vec<Failure>> {
    let outcome = Context::load(cli).and_then(|ctx| {
        let a = ctx.assemble(&ctx.table, ctx.n)?;
        let fixed = ctx.fixed_parameters(&a).map_err(|e| vec![e])?;
        Ok((a, fixed.is_some()))
    });
    match outcome {
        Ok((a, fixed)) => {
            let m = &a.model;
            println!(
                "ok: n={} p={} m={} unknown={}{}",
                m.n(),
                m.p(),
                m.m(),
                a.n_params(),
                if fixed { " (fixed)" } else { "" }
            );
            Ok(0)
        }
        Err(failures) => {
            for f in &failures {
                println!("{f}");
            }
            Ok(1)
        }
    }
}

type States = (Vec<Vec<f64>>, Vec<Vec<Option<f64>>>);

fn sd_of(var: f64) -> Option<f64> {
    Some(var.max(0.0).sqrt())
}

fn smoothed_states(ctx: &Context, model: &Model64) -> Result<States, Failure> {
    if model.is_gaussian() {
        let fr = filter(model)?;
        let sm = smooth_states(&fr, model)?;
        let sd = sm.v.iter().map(|v| v.diag().into_iter().map(sd_of).collect()).collect();
        return Ok((sm.alphahat, sd));
    }
    if ctx.nsim > 0 {
        let is = importance_sample(model, SimTarget::States, ctx.nsim, ctx.opts.seed, ctx.opts.antithetic, &ctx.opts.approx)?;
        let sd = is.weighted_var().into_iter().map(|r| r.into_iter().map(sd_of).collect()).collect();
        return Ok((is.weighted_mean(), sd));
    }
    let ap = approximate(model, &ctx.opts.approx)?;
    if !ap.converged {
        return Err(Failure::numeric("non-convergence", "Gaussian approximation did not converge".into()));
    }
    let sm = smooth_states(&ap.filtered, &ap.working)?;
    let sd = sm.v.iter().map(|v| v.diag().into_iter().map(sd_of).collect()).collect();
    Ok((sm.alphahat, sd))
}

/// One-step-ahead state predictions; the sd is empty while a state is
/// still diffuse.
fn filtered_states(ctx: &Context, model: &Model64) -> Result<States, Failure> {
    let diffuse = |fr: &ssmkit::FilterResult64, t: usize, j: usize| fr.p_inf.get(t).is_some_and(|p| p[(j, j)] != 0.0);
    if model.is_gaussian() {
        let fr = filter(model)?;
        let sd = (0..model.n())
            .map(|t| (0..model.m()).map(|j| if diffuse(&fr, t, j) { None } else { sd_of(fr.p_star[t][(j, j)]) }).collect())
            .collect();
        return Ok((fr.a[..model.n()].to_vec(), sd));
    }
    let ap = approximate(model, &ctx.opts.approx)?;
    let nf = filter_nongaussian(model, ctx.nsim, ctx.opts.seed, &ctx.opts.approx)?;
    let sd = (0..model.n())
        .map(|t| {
            (0..model.m())
                .map(|j| if diffuse(&ap.filtered, t, j) { None } else { sd_of(nf.state_var[t][(j, j)]) })
                .collect()
        })
        .collect();
    Ok((nf.state_mean, sd))
}

fn write_states(ctx: &Context, cli: &Cli, model: &Model64, mean: &[Vec<f64>], sd: &[Vec<Option<f64>>]) -> Result<(), Failure> {
    let mut rows = Vec::with_capacity(mean.len() * model.m());
    for (t, (m, s)) in mean.iter().zip(sd).enumerate() {
        for (j, name) in model.state_names.iter().enumerate() {
            rows.push(vec![ctx.labels[t].clone(), name.clone(), num(m[j]), opt(s[j])]);
        }
    }
    write_csv(&ctx.out(cli, "states.csv")?, &["t", "state", "mean", "sd"], &rows)
}

fn simulate(ctx: &Context, cli: &Cli, model: &Model64) -> Result<(), Failure> {
    if ctx.nsim == 0 {
        return Err(Failure::spec("nsim-required", "simulate needs --nsim N".into()));
    }
    let is: ImportanceSample<f64> = if model.is_gaussian() {
        simulate_conditional(model, SimTarget::States, ctx.nsim, ctx.opts.seed, ctx.opts.antithetic)?
    } else {
        importance_sample(model, SimTarget::States, ctx.nsim, ctx.opts.seed, ctx.opts.antithetic, &ctx.opts.approx)?
    };
    let mut rows = Vec::new();
    for (d, draw) in is.draws.iter().enumerate() {
        for (t, r) in draw.iter().enumerate() {
            for (j, name) in model.state_names.iter().enumerate() {
                rows.push(vec![(d + 1).to_string(), ctx.labels[t].clone(), name.clone(), num(r[j])]);
            }
        }
    }
    write_csv(&ctx.out(cli, "simulations.csv")?, &["draw", "t", "state", "value"], &rows)?;
    let weights: Vec<Vec<String>> =
        is.normalized_weights().iter().enumerate().map(|(d, &w)| vec![(d + 1).to_string(), num(w)]).collect();
    write_csv(&ctx.out(cli, "weights.csv")?, &["draw", "weight"], &weights)
}

fn forecast(ctx: &Context, cli: &Cli, est: &Estimate) -> Result<(), Failure> {
    let horizon_path = cli
        .horizon
        .clone()
        .or_else(|| ctx.spec.horizon.as_ref().and_then(|h| h.path.as_ref()).map(|p| resolve(&ctx.spec_path, p)));
    let steps = ctx.spec.horizon.as_ref().and_then(|h| h.steps);
    let (table, labels) = match &horizon_path {
        Some(path) => {
            let future = Table::read(path)?;
            let mut needed: Vec<&String> = ctx.spec.data.exposure.iter().flatten().collect();
            needed.extend(&ctx.spec.data.covariates);
            for col in needed {
                if !future.has(col) {
                    return Err(Failure::spec("horizon-mismatch", format!("horizon file lacks column '{col}'")));
                }
            }
            if steps.is_some_and(|s| s != future.len()) {
                return Err(Failure::spec("horizon-mismatch", format!("horizon file has {} rows", future.len())));
            }
            let mut labels = ctx.labels.clone();
            match &ctx.spec.data.time {
                Some(col) if future.has(col) => labels.extend(future.text(col)?),
                _ => labels.extend(future_labels(&ctx.labels, future.len())),
            }
            (ctx.table.append(&future), labels)
        }
        None => {
            let s = steps.unwrap_or(0);
            if s > 0 && (!ctx.spec.data.covariates.is_empty() || ctx.spec.data.exposure.iter().any(Option::is_some)) {
                return Err(Failure::spec(
                    "horizon-mismatch",
                    "the model uses covariates or exposure; supply future values with --horizon".into(),
                ));
            }
            let mut labels = ctx.labels.clone();
            labels.extend(future_labels(&ctx.labels, s));
            (ctx.table.extend_empty(s), labels)
        }
    };
    let extended = ctx.assemble(&table, ctx.n).map_err(|mut v| v.remove(0))?;
    let model = if est.theta.is_empty() { extended.model.clone() } else { extended.update(&est.theta)? };
    let kind = match cli.interval {
        Interval::Confidence => IntervalKind::Confidence,
        Interval::Prediction => IntervalKind::Prediction,
    };
    let fc = predict(&model, &Horizon::steps(0), kind, cli.level, ctx.nsim, ctx.opts.seed, &ctx.opts.approx)?;
    let start = if table.len() > ctx.n { ctx.n } else { 0 };
    let mut rows = Vec::new();
    for t in start..table.len() {
        for (i, s) in ctx.spec.data.series.iter().enumerate() {
            rows.push(vec![labels[t].clone(), s.clone(), num(fc.point[t][i]), num(fc.lower[t][i]), num(fc.upper[t][i])]);
        }
    }
    write_csv(&ctx.out(cli, "forecast.csv")?, &["t", "series", "point", "lower", "upper"], &rows)
}

/// Labels continuing an integer time index, else row numbers.
fn future_labels(labels: &[String], steps: usize) -> Vec<String> {
    let n = labels.len();
    match labels.last().and_then(|l| l.parse::<i64>().ok()) {
        Some(last) => (1..=steps as i64).map(|k| (last + k).to_string()).collect(),
        None => (n + 1..=n + steps).map(|t| t.to_string()).collect(),
    }
}

fn write_residuals(ctx: &Context, cli: &Cli, model: &Model64) -> Result<(), Failure> {
    if cli.kind == Kind::Recursive && !model.is_gaussian() && ctx.nsim == 0 {
        return Err(Failure::spec(
            "nsim-required",
            "recursive residuals of non-Gaussian series are simulated; rerun with --nsim N --seed S".into(),
        ));
    }
    let res = residuals(model, cli.kind.into(), ctx.nsim, ctx.opts.seed, &ctx.opts.approx)?;
    let series = &ctx.spec.data.series;
    let names: Vec<String> = res
        .names
        .iter()
        .map(|nm| {
            let idx = |prefix: &str| nm.strip_prefix(prefix).and_then(|k| k.parse::<usize>().ok()).filter(|&k| k >= 1 && k <= series.len());
            if let Some(k) = idx("series") {
                series[k - 1].clone()
            } else if let Some(k) = idx("eps") {
                format!("eps.{}", series[k - 1])
            } else {
                nm.clone()
            }
        })
        .collect();
    write_wide(&ctx.out(cli, "residuals.csv")?, &names, &ctx.labels, &res.values)?;
    let rows: Vec<Vec<String>> = acf(&res.values, 10)
        .into_iter()
        .map(|(lag, a, b, r)| vec![lag.to_string(), format!("{}:{}", names[a], names[b]), opt(r)])
        .collect();
    write_csv(&ctx.out(cli, "acf.csv")?, &["lag", "series-pair", "correlation"], &rows)
}
