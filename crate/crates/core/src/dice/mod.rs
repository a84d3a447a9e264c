//! Distribution-correction objectives, their minimizers, and policy extraction.
//!
//! Naming follows the forms of the state-transition matching dual:
//!
//! * `ld_double`: exponential form in `(mu, nu)` with expectations over `d_I(s, s')` and
//!   `d_I(s, a)` (the model's transition kernel enters through `e_{mu,nu}`),
//! * `ld_double_sampled`: the same with every expectation taken per sample `(s, a, s')`,
//! * `ld_single`: `ld_double_sampled` after eliminating `mu` in closed form,
//! * `fd_single` / `fd_double`: log-sum-exp counterparts, invariant to constant shifts.
//!
//! `demodicefo` and `opolo` are state-action and upper-bound analogues solved with the same
//! machinery.
//!
//! All solvers work on the model's *viable* data support (see
//! [`EmpiricalModel::viable_support`]) and fail with [`Error::Infeasible`] when the initial
//! states have none.

mod objectives;

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3};

use crate::datagen::{EmpiricalModel, LabeledDataset, LogRatioTable};
use crate::dual::{DualProgram, TermKind, MAX_EXPONENT};
use crate::error::{check_shape, Error, Result};
use crate::mdp::Policy;
use crate::optim::{minimize, MinimizeOptions, Objective};
pub use crate::optim::StepRule;
use objectives::{PairSupport, Setup};

/// Starting point of a solve. Any `mu` variables always start at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Zeros,
    Nu(Array1<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Weight of the KL term towards the data distribution.
    pub alpha: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { alpha: 0.01, max_iters: 200_000, grad_tol: 1e-8, step_rule: StepRule::Newton, init: Init::Zeros }
    }
}

impl SolverOptions {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha {} must be positive", self.alpha)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("grad_tol {} must be positive", self.grad_tol)));
        }
        Ok(())
    }

    fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions { max_iters: self.max_iters, grad_tol: self.grad_tol, step_rule: self.step_rule }
    }
}

/// Minimizer of a dual objective with the correction weights it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub nu: Array1<f64>,
    /// Present for the two-variable forms; zero off the `mu` support.
    pub mu: Option<Array2<f64>>,
    /// `w(s, a)`, zero where the data reference has no mass.
    pub w_sa: Array2<f64>,
    /// `w(s, s')`.
    pub w_ss: Array2<f64>,
    /// Per-sample weights `w(s, a, s')` for the per-sample forms.
    pub w_tilde: Option<Array3<f64>>,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    /// Key-value debugging record with the diagnostics and `nu`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# ifo-dual-solution v1\n");
        let join = |v: &Array1<f64>| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "loss = {:e}", self.loss);
        let _ = writeln!(out, "grad_inf_norm = {:e}", self.grad_inf_norm);
        let _ = writeln!(out, "nu = {}", join(&self.nu));
        out
    }
}

fn finish(solution: DualSolution) -> Result<DualSolution> {
    if solution.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged(Box::new(solution)))
    }
}

fn guarded_exp(arg: f64) -> Result<f64> {
    if arg > MAX_EXPONENT || arg.is_nan() {
        return Err(Error::ExponentOverflow(arg));
    }
    Ok(arg.exp())
}

fn check_nu(model: &EmpiricalModel, nu: &Array1<f64>) -> Result<()> {
    check_shape(&[model.n_states()], nu.shape())
}

fn check_table(model: &EmpiricalModel, t: &Array2<f64>) -> Result<()> {
    check_shape(&[model.n_states(), model.n_states()], t.shape())
}

/// `e_{mu,nu}(s, a) = sum_s' T_hat(s' | s, a) (-mu(s, s') + gamma nu(s')) - nu(s)`.
pub fn e_mu_nu(model: &EmpiricalModel, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<Array2<f64>> {
    check_nu(model, nu)?;
    check_table(model, mu)?;
    let n = model.n_states();
    let t = model.t_hat();
    let gamma = model.gamma();
    Ok(Array2::from_shape_fn((n, model.n_actions()), |(s, a)| {
        let mut e = -nu[s];
        for s2 in 0..n {
            let p = t[[s, a, s2]];
            if p > 0.0 {
                e += p * (gamma * nu[s2] - mu[[s, s2]]);
            }
        }
        e
    }))
}

/// `mu_nu(s, s') = (-alpha r(s, s') + gamma nu(s') - nu(s)) / (1 + alpha)`: the minimizer
/// of the per-sample double form in `mu` for fixed `nu`.
pub fn mu_closed_form(nu: &Array1<f64>, r: &LogRatioTable, alpha: f64, gamma: f64) -> Result<Array2<f64>> {
    let n = nu.len();
    check_shape(&[n, n], r.r.shape())?;
    Ok(Array2::from_shape_fn((n, n), |(s, s2)| (-alpha * r.r[[s, s2]] + gamma * nu[s2] - nu[s]) / (1.0 + alpha)))
}

/// Maximizers of the Lagrangian in `(w(s, a), w(s, s'))` for fixed multipliers:
/// `w(s, a) = exp(e_{mu,nu}(s, a) / alpha - 1)` and `w(s, s') = exp(r + mu - 1)`.
pub fn closed_form_w(
    model: &EmpiricalModel,
    r: &LogRatioTable,
    alpha: f64,
    mu: &Array2<f64>,
    nu: &Array1<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_table(model, &r.r)?;
    let e = e_mu_nu(model, mu, nu)?;
    let mut w_sa = Array2::zeros(e.raw_dim());
    for (w, &ev) in w_sa.iter_mut().zip(e.iter()) {
        *w = guarded_exp(ev / alpha - 1.0)?;
    }
    let mut w_ss = Array2::zeros(mu.raw_dim());
    for ((w, &m), &rv) in w_ss.iter_mut().zip(mu.iter()).zip(r.r.iter()) {
        *w = guarded_exp(rv + m - 1.0)?;
    }
    Ok((w_sa, w_ss))
}

fn x_log_x_term(w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w.ln()
    }
}

/// The Lagrangian before the inner maximization:
/// `(1 - gamma) <p0, nu> + E_{d_I(s,s')}[w (r + mu - log w)] + E_{d_I(s,a)}[w (e - alpha log w)]`.
pub fn lagrangian_ld(
    model: &EmpiricalModel,
    r: &LogRatioTable,
    alpha: f64,
    w_sa: &Array2<f64>,
    w_ss: &Array2<f64>,
    mu: &Array2<f64>,
    nu: &Array1<f64>,
) -> Result<f64> {
    check_table(model, &r.r)?;
    check_table(model, w_ss)?;
    check_shape(model.d_i_sa().shape(), w_sa.shape())?;
    let e = e_mu_nu(model, mu, nu)?;
    let gamma = model.gamma();
    let mut value: f64 = model.p0().iter().zip(nu).map(|(p, v)| (1.0 - gamma) * p * v).sum();
    for ((s, s2), &d) in model.d_i_ss().indexed_iter() {
        if d > 0.0 {
            let w = w_ss[[s, s2]];
            value += d * w * (r.r[[s, s2]] + mu[[s, s2]] - x_log_x_term(w));
        }
    }
    for ((s, a), &d) in model.d_i_sa().indexed_iter() {
        if d > 0.0 {
            let w = w_sa[[s, a]];
            value += d * w * (e[[s, a]] - alpha * x_log_x_term(w));
        }
    }
    Ok(value)
}

// ---------------------------------------------------------------------------------------
// Losses and gradients

fn double_grad(program: &DualProgram, sup: &PairSupport, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let (v, g) = program.value_grad(&sup.pack(mu, nu))?;
    let (gmu, gnu) = sup.unpack(&g);
    Ok((v, gmu, gnu))
}

fn check_double(model: &EmpiricalModel, r: &LogRatioTable, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<()> {
    check_nu(model, nu)?;
    check_table(model, mu)?;
    check_table(model, &r.r)
}

/// `(1 - gamma) <p0, nu> + E_{d_I(s,s')}[exp(r + mu - 1)] + alpha E_{d_I(s,a)}[exp(e_{mu,nu} / alpha - 1)]`.
pub fn loss_ld_double(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<f64> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).ld_double(r, alpha)?;
    program.value(&sup.pack(mu, nu))
}

/// Gradient of [`loss_ld_double`] as `(d/d mu, d/d nu)`; zero for `mu` entries the loss
/// does not depend on.
pub fn grad_ld_double(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).ld_double(r, alpha)?;
    double_grad(&program, &sup, mu, nu).map(|(_, a, b)| (a, b))
}

/// `(1 - gamma) <p0, nu> + E_x[exp(r + mu - 1) + alpha exp((-mu + gamma nu(s') - nu(s)) / alpha - 1)]`
/// with `x = (s, a, s')` drawn from the data.
pub fn loss_ld_double_sampled(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<f64> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).ld_double_sampled(r, alpha)?;
    program.value(&sup.pack(mu, nu))
}

pub fn grad_ld_double_sampled(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).ld_double_sampled(r, alpha)?;
    double_grad(&program, &sup, mu, nu).map(|(_, a, b)| (a, b))
}

/// `(1 - gamma) <p0, nu> + log E_{d_I(s,s')}[exp(r + mu)] + alpha log E_{d_I(s,a)}[exp(e_{mu,nu} / alpha)]`.
pub fn loss_fd_double(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<f64> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).fd_double(r, alpha)?;
    program.value(&sup.pack(mu, nu))
}

pub fn grad_fd_double(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    check_double(model, r, mu, nu)?;
    let (program, sup) = Setup::new(model).fd_double(r, alpha)?;
    double_grad(&program, &sup, mu, nu).map(|(_, a, b)| (a, b))
}

fn single(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>, kind: TermKind) -> Result<(f64, Array1<f64>)> {
    check_nu(model, nu)?;
    let program = Setup::new(model).single(r, alpha, kind)?;
    let (v, g) = program.value_grad(nu.as_slice().expect("contiguous"))?;
    Ok((v, Array1::from(g)))
}

/// `(1 - gamma) <p0, nu> + (1 + alpha) E_x[exp(A_nu / (1 + alpha) - 1)]` with
/// `A_nu(s, a, s') = r(s, s') + gamma nu(s') - nu(s)`.
pub fn loss_ld_single(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<f64> {
    single(model, r, alpha, nu, TermKind::Exp).map(|p| p.0)
}

pub fn grad_ld_single(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<Array1<f64>> {
    single(model, r, alpha, nu, TermKind::Exp).map(|p| p.1)
}

/// `(1 - gamma) <p0, nu> + (1 + alpha) log E_x[exp(A_nu / (1 + alpha))]`, evaluated with
/// max-subtraction.
pub fn loss_fd_single(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<f64> {
    single(model, r, alpha, nu, TermKind::LogSumExp).map(|p| p.0)
}

pub fn grad_fd_single(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<Array1<f64>> {
    single(model, r, alpha, nu, TermKind::LogSumExp).map(|p| p.1)
}

fn state_action(model: &EmpiricalModel, reward: &Array2<f64>, tau: f64, nu: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
    check_nu(model, nu)?;
    let program = Setup::new(model).state_action(reward, tau)?;
    let (v, g) = program.value_grad(nu.as_slice().expect("contiguous"))?;
    Ok((v, Array1::from(g)))
}

/// `(1 - gamma) <p0, nu> + (1 + alpha) log E_{d_I(s,a)}[exp((r_sa + gamma T_hat nu - nu) / (1 + alpha))]`.
pub fn loss_demodice(model: &EmpiricalModel, r_sa: &Array2<f64>, alpha: f64, nu: &Array1<f64>) -> Result<f64> {
    state_action(model, r_sa, 1.0 + alpha, nu).map(|p| p.0)
}

pub fn grad_demodice(model: &EmpiricalModel, r_sa: &Array2<f64>, alpha: f64, nu: &Array1<f64>) -> Result<Array1<f64>> {
    state_action(model, r_sa, 1.0 + alpha, nu).map(|p| p.1)
}

/// `(1 - gamma) <p0, nu> + log E_{d_I(s,a)}[exp(rbar + gamma T_hat nu - nu)]` with
/// `rbar(s, a) = sum_s' T_hat(s' | s, a) r(s, s')`.
pub fn loss_opolo(model: &EmpiricalModel, r: &LogRatioTable, nu: &Array1<f64>) -> Result<f64> {
    let rbar = Setup::new(model).expected_ratio(r)?;
    state_action(model, &rbar, 1.0, nu).map(|p| p.0)
}

pub fn grad_opolo(model: &EmpiricalModel, r: &LogRatioTable, nu: &Array1<f64>) -> Result<Array1<f64>> {
    let rbar = Setup::new(model).expected_ratio(r)?;
    state_action(model, &rbar, 1.0, nu).map(|p| p.1)
}

// ---------------------------------------------------------------------------------------
// Solvers

fn prepare<'a>(model: &'a EmpiricalModel, opts: &SolverOptions) -> Result<Setup<'a>> {
    opts.validate()?;
    if !model.is_feasible() {
        return Err(Error::Infeasible);
    }
    Ok(Setup::new(model))
}

fn start(model: &EmpiricalModel, opts: &SolverOptions, dim: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; dim];
    if let Init::Nu(nu) = &opts.init {
        check_nu(model, nu)?;
        x[..nu.len()].copy_from_slice(nu.as_slice().expect("contiguous"));
    }
    Ok(x)
}

/// Minimizes the population double form in `(mu, nu)`. `w_sa` and `w_ss` come from
/// [`closed_form_w`].
pub fn solve_ld_double(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let (program, sup) = setup.ld_double(r, opts.alpha)?;
    let m = minimize(&program, start(model, opts, sup.dim())?, &opts.minimize_options())?;
    let (mu, nu) = sup.unpack(&m.x);
    let e = e_mu_nu(model, &mu, &nu)?;
    let mut w_sa = Array2::zeros(e.raw_dim());
    for ((s, a), &p) in setup.reference.indexed_iter() {
        if p > 0.0 {
            w_sa[[s, a]] = guarded_exp(e[[s, a]] / opts.alpha - 1.0)?;
        }
    }
    let mut w_ss = Array2::zeros(mu.raw_dim());
    for &(s, s2) in &sup.pairs {
        w_ss[[s, s2]] = guarded_exp(r.r[[s, s2]] + mu[[s, s2]] - 1.0)?;
    }
    finish(DualSolution {
        nu,
        mu: Some(mu),
        w_sa,
        w_ss,
        w_tilde: None,
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// Per-sample weights `w(s, a, s') = exp(f(s, s'))` on data-supported triples and their
/// `T_hat` average per `(s, a)`.
fn per_sample_weights(setup: &Setup, f: impl Fn(usize, usize) -> Result<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
    let model = setup.model;
    let (n, n_actions) = (model.n_states(), model.n_actions());
    let t = model.t_hat();
    let mut w_tilde = Array3::zeros((n, n_actions, n));
    let mut w_sa = Array2::zeros((n, n_actions));
    for ((s, a), &p) in setup.reference.indexed_iter() {
        if p == 0.0 {
            continue;
        }
        for s2 in 0..n {
            let pt = t[[s, a, s2]];
            if pt > 0.0 {
                let w = f(s, s2)?;
                w_tilde[[s, a, s2]] = w;
                w_sa[[s, a]] += pt * w;
            }
        }
    }
    Ok((w_tilde, w_sa))
}

/// Minimizes the per-sample double form in `(mu, nu)`.
pub fn solve_ld_double_sampled(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let (program, sup) = setup.ld_double_sampled(r, opts.alpha)?;
    let m = minimize(&program, start(model, opts, sup.dim())?, &opts.minimize_options())?;
    let (mu, nu) = sup.unpack(&m.x);
    let gamma = model.gamma();
    let alpha = opts.alpha;
    let (w_tilde, w_sa) = per_sample_weights(&setup, |s, s2| {
        guarded_exp((-mu[[s, s2]] + gamma * nu[s2] - nu[s]) / alpha - 1.0)
    })?;
    let mut w_ss = Array2::zeros(mu.raw_dim());
    for &(s, s2) in &sup.pairs {
        w_ss[[s, s2]] = guarded_exp(r.r[[s, s2]] + mu[[s, s2]] - 1.0)?;
    }
    finish(DualSolution {
        nu,
        mu: Some(mu),
        w_sa,
        w_ss,
        w_tilde: Some(w_tilde),
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

fn advantage(r: &LogRatioTable, gamma: f64, nu: &Array1<f64>, s: usize, s2: usize) -> f64 {
    r.r[[s, s2]] + gamma * nu[s2] - nu[s]
}

fn solve_nu_only(setup: &Setup, program: &DualProgram, opts: &SolverOptions) -> Result<(Array1<f64>, crate::optim::Minimum)> {
    let n = setup.n_states();
    let m = minimize(program, start(setup.model, opts, n)?, &opts.minimize_options())?;
    Ok((Array1::from(m.x.clone()), m))
}

/// Minimizes [`loss_ld_single`]. Weights are `exp(A_nu / (1 + alpha) - 1)` per sample.
pub fn solve_ld_single(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let program = setup.single(r, opts.alpha, TermKind::Exp)?;
    let (nu, m) = solve_nu_only(&setup, &program, opts)?;
    let gamma = model.gamma();
    let tau = 1.0 + opts.alpha;
    let (w_tilde, w_sa) = per_sample_weights(&setup, |s, s2| guarded_exp(advantage(r, gamma, &nu, s, s2) / tau - 1.0))?;
    let q = setup.sample_pair_weights();
    let mut w_ss = Array2::zeros(q.raw_dim());
    for ((s, s2), &p) in q.indexed_iter() {
        if p > 0.0 {
            w_ss[[s, s2]] = guarded_exp(advantage(r, gamma, &nu, s, s2) / tau - 1.0)?;
        }
    }
    let mu = mu_closed_form(&nu, r, opts.alpha, gamma)?;
    finish(DualSolution {
        nu,
        mu: Some(mu),
        w_sa,
        w_ss,
        w_tilde: Some(w_tilde),
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// Self-normalized weights of the log-sum-exp single form at `nu`.
///
/// Returns `w_tilde(s, a, s') = exp(A_nu / (1 + alpha))`, scaled so its largest entry is 1,
/// and `w(s, a) = E_{s' ~ T_hat}[w_tilde] / E_x[w_tilde]`.
pub fn fd_single_weights(model: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
    check_nu(model, nu)?;
    check_table(model, &r.r)?;
    let setup = Setup::new(model);
    weights_fd_single(&setup, r, alpha, nu)
}

fn weights_fd_single(setup: &Setup, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
    let gamma = setup.model.gamma();
    let tau = 1.0 + alpha;
    let q = setup.sample_pair_weights();
    let shift = q
        .indexed_iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|((s, s2), _)| advantage(r, gamma, nu, s, s2) / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let (w_tilde, mut w_sa) = per_sample_weights(setup, |s, s2| Ok((advantage(r, gamma, nu, s, s2) / tau - shift).exp()))?;
    let z: f64 = w_sa.iter().zip(setup.reference.iter()).map(|(w, p)| w * p).sum();
    if z > 0.0 {
        w_sa /= z;
    }
    Ok((w_tilde, w_sa))
}

/// Minimizes [`loss_fd_single`] and recovers self-normalized weights.
pub fn solve_fd_single(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let program = setup.single(r, opts.alpha, TermKind::LogSumExp)?;
    let (nu, m) = solve_nu_only(&setup, &program, opts)?;
    let (w_tilde, w_sa) = weights_fd_single(&setup, r, opts.alpha, &nu)?;
    let gamma = model.gamma();
    let tau = 1.0 + opts.alpha;
    let q = setup.sample_pair_weights();
    let mut w_ss = Array2::zeros(q.raw_dim());
    let mut z = 0.0;
    let mut shift = f64::NEG_INFINITY;
    for ((s, s2), &p) in q.indexed_iter() {
        if p > 0.0 {
            shift = shift.max(advantage(r, gamma, &nu, s, s2) / tau);
        }
    }
    for ((s, s2), &p) in q.indexed_iter() {
        if p > 0.0 {
            let w = (advantage(r, gamma, &nu, s, s2) / tau - shift).exp();
            w_ss[[s, s2]] = w;
            z += p * w;
        }
    }
    w_ss /= z;
    finish(DualSolution {
        nu,
        mu: None,
        w_sa,
        w_ss,
        w_tilde: Some(w_tilde),
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// `exp(z / tau)` normalized to unit mean under `p`; zero where `p` is zero.
fn softmax_weights(z: &Array2<f64>, p: &Array2<f64>, tau: f64) -> Array2<f64> {
    let shift = z
        .iter()
        .zip(p.iter())
        .filter(|(_, &q)| q > 0.0)
        .map(|(&v, _)| v / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = Array2::zeros(z.raw_dim());
    let mut total = 0.0;
    for ((w, &v), &q) in w.iter_mut().zip(z.iter()).zip(p.iter()) {
        if q > 0.0 {
            *w = (v / tau - shift).exp();
            total += q * *w;
        }
    }
    if total > 0.0 {
        w /= total;
    }
    w
}

/// Minimizes [`loss_fd_double`]. Weights are normalized to unit mean under the data.
pub fn solve_fd_double(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let (program, sup) = setup.fd_double(r, opts.alpha)?;
    let m = minimize(&program, start(model, opts, sup.dim())?, &opts.minimize_options())?;
    let (mu, nu) = sup.unpack(&m.x);
    let e = e_mu_nu(model, &mu, &nu)?;
    let w_sa = softmax_weights(&e, &setup.reference, opts.alpha);
    let mut on_support = Array2::zeros(mu.raw_dim());
    for &(s, s2) in &sup.pairs {
        on_support[[s, s2]] = model.d_i_ss()[[s, s2]];
    }
    let w_ss = softmax_weights(&(&r.r + &mu), &on_support, 1.0);
    finish(DualSolution {
        nu,
        mu: Some(mu),
        w_sa,
        w_ss,
        w_tilde: None,
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

fn solve_state_action(model: &EmpiricalModel, reward: &Array2<f64>, tau: f64, opts: &SolverOptions) -> Result<DualSolution> {
    let setup = prepare(model, opts)?;
    let program = setup.state_action(reward, tau)?;
    let (nu, m) = solve_nu_only(&setup, &program, opts)?;
    let (n, gamma, t) = (model.n_states(), model.gamma(), model.t_hat());
    let z = Array2::from_shape_fn(reward.raw_dim(), |(s, a)| {
        reward[[s, a]] + (0..n).map(|s2| gamma * t[[s, a, s2]] * nu[s2]).sum::<f64>() - nu[s]
    });
    let w_sa = softmax_weights(&z, &setup.reference, tau);
    let flow = crate::mdp::marginalize(t, &(&w_sa * &setup.reference));
    let d_ss = model.d_i_ss();
    let w_ss = Array2::from_shape_fn(flow.raw_dim(), |(s, s2)| {
        if d_ss[[s, s2]] > 0.0 {
            flow[[s, s2]] / d_ss[[s, s2]]
        } else {
            0.0
        }
    });
    finish(DualSolution {
        nu,
        mu: None,
        w_sa,
        w_ss,
        w_tilde: None,
        loss: m.value,
        grad_inf_norm: m.grad_inf_norm,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// `log(d_E(s, a) / d_I(s, a))` from action-filled expert data, smoothed over the `S A`
/// cells like [`crate::datagen::empirical_log_ratio`] and clipped. The imperfect side uses
/// the model's counts, or its exact distribution for models without a sample size.
pub fn state_action_log_ratio(filled: &LabeledDataset, model: &EmpiricalModel, smoothing: f64, clip: f64) -> Result<Array2<f64>> {
    if !(smoothing >= 0.0) || !(clip > 0.0) {
        return Err(Error::InvalidArgument("smoothing must be nonnegative and clip positive".into()));
    }
    if filled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_shape(model.d_i_sa().shape(), &[filled.n_states(), filled.n_actions()])?;
    let cells = (model.n_states() * model.n_actions()) as f64;
    let c_e = filled.state_action_counts();
    let n_e = filled.len() as f64 + smoothing * cells;
    let d_i = model.d_i_sa();
    let imperfect = |v: f64| match model.n_samples() {
        Some(n) => (v * n as f64 + smoothing) / (n as f64 + smoothing * cells),
        None => v,
    };
    Ok(Array2::from_shape_fn(d_i.raw_dim(), |(s, a)| {
        let pe = (c_e[[s, a]] as f64 + smoothing) / n_e;
        let pi = imperfect(d_i[[s, a]]);
        let v = if pe > 0.0 || pi > 0.0 { pe.ln() - pi.ln() } else { 0.0 };
        v.clamp(-clip, clip)
    }))
}

/// State-action distribution matching with a state-action log ratio: minimizes
/// [`loss_demodice`].
pub fn demodice_solve_with_ratio(model: &EmpiricalModel, r_sa: &Array2<f64>, opts: &SolverOptions) -> Result<DualSolution> {
    solve_state_action(model, r_sa, 1.0 + opts.alpha, opts)
}

/// DemoDICE on expert data whose actions were filled in by an inverse dynamics model.
pub fn demodicefo_solve(
    model: &EmpiricalModel,
    filled_expert: &LabeledDataset,
    smoothing: f64,
    clip: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let r_sa = state_action_log_ratio(filled_expert, model, smoothing, clip)?;
    demodice_solve_with_ratio(model, &r_sa, opts)
}

/// Minimizes [`loss_opolo`]: the dual of matching through the upper bound
/// `E_{d(s,s')}[-r] + KL(d(s, a) || d_I(s, a))`. `opts.alpha` is not used.
pub fn opolo_tabular_solve(model: &EmpiricalModel, r: &LogRatioTable, opts: &SolverOptions) -> Result<DualSolution> {
    let rbar = Setup::new(model).expected_ratio(r)?;
    solve_state_action(model, &rbar, 1.0, opts)
}

// ---------------------------------------------------------------------------------------
// Policy extraction

/// `pi(a | s) proportional to d_I(s, a) w(s, a)`; rows without mass are uniform.
pub fn extract_policy(model: &EmpiricalModel, w_sa: &Array2<f64>) -> Result<Policy> {
    check_shape(model.d_i_sa().shape(), w_sa.shape())?;
    if w_sa.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    Ok(Policy::from_scores(&(model.d_i_sa() * w_sa)))
}

/// Tabular maximizer of the self-normalized weighted log-likelihood over the dataset:
/// `pi(a | s) proportional to sum over records (s, a, s') of w_tilde(s, a, s')`.
pub fn extract_policy_weighted_bc(data: &LabeledDataset, w_tilde: &Array3<f64>) -> Result<Policy> {
    let (n, n_actions) = (data.n_states(), data.n_actions());
    check_shape(&[n, n_actions, n], w_tilde.shape())?;
    if w_tilde.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let mut scores = Array2::zeros((n, n_actions));
    for ((s, a, s2), &c) in data.counts().indexed_iter() {
        if c > 0 {
            scores[[s, a]] += c as f64 * w_tilde[[s, a, s2]];
        }
    }
    Ok(Policy::from_scores(&scores))
}

#[cfg(test)]
mod tests;
