//! Tabular MDPs, exact planning and discounted occupancy measures.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Dimension};

use crate::error::{check_shape, Error, Result};

const ROW_TOL: f64 = 1e-12;
const FLOW_TOL: f64 = 1e-9;

/// A finite discounted MDP. `transition[[s, a, s2]]` is `T(s2 | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: Array3<f64>,
    reward: Array2<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one state and action".into()));
        }
        check_shape(&[n_states, n_actions, n_states], &[n_states, n_actions, n_next])?;
        check_shape(&[n_states, n_actions], reward.shape())?;
        check_shape(&[n_states], initial_dist.shape())?;
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = transition.slice(ndarray::s![s, a, ..]);
                check_distribution(row.iter().copied(), ROW_TOL)
                    .map_err(|m| Error::InvalidArgument(format!("T[{s}][{a}]: {m}")))?;
            }
        }
        check_distribution(initial_dist.iter().copied(), ROW_TOL)
            .map_err(|m| Error::InvalidArgument(format!("initial distribution: {m}")))?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("reward must be finite".into()));
        }
        Ok(Self { transition, reward, initial_dist, discount })
    }

    pub fn n_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn transition(&self) -> ArrayView3<'_, f64> {
        self.transition.view()
    }

    pub fn reward(&self) -> ArrayView2<'_, f64> {
        self.reward.view()
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }
}

/// Per-state action distribution, `probs[[s, a]] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() == 0 {
            return Err(Error::InvalidArgument("policy needs at least one action".into()));
        }
        for (s, row) in probs.outer_iter().enumerate() {
            check_distribution(row.iter().copied(), ROW_TOL)
                .map_err(|m| Error::InvalidArgument(format!("pi[{s}]: {m}")))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64) }
    }

    /// Normalizes each row of nonnegative `scores`; rows with zero mass become uniform.
    pub fn from_scores(scores: &Array2<f64>) -> Self {
        let n_actions = scores.ncols();
        let mut probs = scores.clone();
        for mut row in probs.outer_iter_mut() {
            let total: f64 = row.sum();
            if total > 0.0 && total.is_finite() {
                row.mapv_inplace(|x| x / total);
            } else {
                row.fill(1.0 / n_actions as f64);
            }
        }
        Self { probs }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

/// State-action and state-transition occupancy of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub d_sa: Array2<f64>,
    pub d_ss: Array2<f64>,
}

fn check_distribution(values: impl Iterator<Item = f64>, tol: f64) -> std::result::Result<(), String> {
    let mut total = 0.0;
    for v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(format!("entry {v} is not a nonnegative finite probability"));
        }
        total += v;
    }
    if (total - 1.0).abs() > tol {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Iterates the Bellman optimality operator until successive iterates differ by less than `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<Array2<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut q = Array2::<f64>::zeros((n_states, n_actions));
    loop {
        let v: Array1<f64> = q.map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)));
        let mut next = mdp.reward.to_owned();
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = mdp.transition.slice(ndarray::s![s, a, ..]);
                next[[s, a]] += gamma * row.dot(&v);
            }
        }
        let delta = next
            .iter()
            .zip(q.iter())
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
}

/// Boltzmann policy over a Q table. Rows are shifted by their maximum before exponentiation.
pub fn softmax_policy(q: &Array2<f64>, temperature: f64) -> Result<Policy> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let mut probs = q.clone();
    for mut row in probs.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| ((x - max) / temperature).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    Ok(Policy { probs })
}

pub fn uniform_policy(mdp: &TabularMdp) -> Policy {
    Policy::uniform(mdp.n_states(), mdp.n_actions())
}

/// `d_ss[[s, s2]] = sum_a T(s2 | s, a) d_sa[[s, a]]`.
pub fn marginalize(transition: ArrayView3<'_, f64>, d_sa: &Array2<f64>) -> Array2<f64> {
    let (n_states, n_actions, _) = transition.dim();
    let mut d_ss = Array2::zeros((n_states, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let w = d_sa[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n_states {
                d_ss[[s, s2]] += w * transition[[s, a, s2]];
            }
        }
    }
    d_ss
}

/// Infinity-norm residual of the Bellman flow constraint
/// `sum_a d(s, a) = (1 - gamma) p0(s) + gamma sum_{s', a'} T(s | s', a') d(s', a')`.
pub fn flow_residual(
    transition: ArrayView3<'_, f64>,
    initial_dist: &Array1<f64>,
    gamma: f64,
    d_sa: &Array2<f64>,
) -> f64 {
    let n_states = d_sa.nrows();
    let inflow = marginalize(transition, d_sa).sum_axis(Axis(0));
    let outflow = d_sa.sum_axis(Axis(1));
    (0..n_states)
        .map(|s| (outflow[s] - (1.0 - gamma) * initial_dist[s] - gamma * inflow[s]).abs())
        .fold(0.0, f64::max)
}

/// Exact discounted occupancy via a dense solve of `(I - gamma P_pi^T) rho = (1 - gamma) p0`.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &Policy) -> Result<StationaryDistribution> {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    check_shape(&[n_states, n_actions], policy.probs.shape())?;
    let gamma = mdp.discount();

    let mut p_pi = DMatrix::<f64>::zeros(n_states, n_states);
    for s in 0..n_states {
        for a in 0..n_actions {
            let pa = policy.probs[[s, a]];
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..n_states {
                p_pi[(s, s2)] += pa * mdp.transition[[s, a, s2]];
            }
        }
    }
    let system = DMatrix::<f64>::identity(n_states, n_states) - p_pi.transpose() * gamma;
    let rhs = DVector::from_iterator(n_states, mdp.initial_dist.iter().map(|p| (1.0 - gamma) * p));
    let rho = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearSolve("occupancy system is singular".into()))?;

    let mut d_sa = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let rho_s = rho[s].max(0.0);
        for a in 0..n_actions {
            d_sa[[s, a]] = rho_s * policy.probs[[s, a]];
        }
    }
    let residual = flow_residual(mdp.transition(), &mdp.initial_dist, gamma, &d_sa);
    if residual > FLOW_TOL {
        return Err(Error::Residual { residual, tolerance: FLOW_TOL });
    }
    let d_ss = marginalize(mdp.transition(), &d_sa);
    Ok(StationaryDistribution { d_sa, d_ss })
}

/// Half the L1 distance between two probability tables of equal shape.
pub fn tv_distance<D: Dimension>(p: &Array<f64, D>, q: &Array<f64, D>) -> Result<f64> {
    check_shape(p.shape(), q.shape())?;
    Ok(0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
