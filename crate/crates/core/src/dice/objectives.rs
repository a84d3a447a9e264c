//! Dual objectives as [`DualProgram`]s over `x = [nu, mu on its support]`.

use ndarray::{Array1, Array2};

use crate::datagen::{EmpiricalModel, LogRatioTable};
use crate::dual::{DualProgram, Term, TermKind};
use crate::error::{check_shape, Result};
use crate::optim::Layout;

/// The `(s, s')` pairs that carry a `mu` variable, grouped by source state.
#[derive(Debug, Clone)]
pub(crate) struct PairSupport {
    pub n_states: usize,
    pub pairs: Vec<(usize, usize)>,
    pub index: Array2<Option<usize>>,
    pub group_sizes: Vec<usize>,
}

impl PairSupport {
    pub fn from_mask(mask: &Array2<bool>) -> Self {
        let n_states = mask.nrows();
        let mut pairs = Vec::new();
        let mut index = Array2::from_elem((n_states, n_states), None);
        let mut group_sizes = Vec::new();
        for s in 0..n_states {
            let before = pairs.len();
            for s2 in 0..n_states {
                if mask[[s, s2]] {
                    index[[s, s2]] = Some(n_states + pairs.len());
                    pairs.push((s, s2));
                }
            }
            if pairs.len() > before {
                group_sizes.push(pairs.len() - before);
            }
        }
        Self { n_states, pairs, index, group_sizes }
    }

    pub fn dim(&self) -> usize {
        self.n_states + self.pairs.len()
    }

    pub fn var(&self, s: usize, s2: usize) -> usize {
        self.index[[s, s2]].expect("pair in support")
    }

    pub fn pack(&self, mu: &Array2<f64>, nu: &Array1<f64>) -> Vec<f64> {
        let mut x = nu.to_vec();
        x.extend(self.pairs.iter().map(|&(s, s2)| mu[[s, s2]]));
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let mut mu = Array2::zeros((self.n_states, self.n_states));
        for (k, &(s, s2)) in self.pairs.iter().enumerate() {
            mu[[s, s2]] = x[self.n_states + k];
        }
        (mu, Array1::from(x[..self.n_states].to_vec()))
    }
}

/// Inputs shared by every objective: the data reference distribution restricted to pairs
/// from which the data can keep satisfying the flow constraint.
#[derive(Debug, Clone)]
pub(crate) struct Setup<'a> {
    pub model: &'a EmpiricalModel,
    pub reference: Array2<f64>,
}

impl<'a> Setup<'a> {
    pub fn new(model: &'a EmpiricalModel) -> Self {
        Self { model, reference: model.reference_sa() }
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    fn linear(&self, dim: usize) -> Vec<f64> {
        let gamma = self.model.gamma();
        let mut c = vec![0.0; dim];
        for (s, p) in self.model.p0().iter().enumerate() {
            c[s] = (1.0 - gamma) * p;
        }
        c
    }

    /// Pairs reachable in one step from reference-supported `(s, a)`.
    pub fn population_support(&self) -> PairSupport {
        let n = self.n_states();
        let t = self.model.t_hat();
        let mut mask = Array2::from_elem((n, n), false);
        for ((s, a), &p) in self.reference.indexed_iter() {
            if p > 0.0 {
                for s2 in 0..n {
                    if t[[s, a, s2]] > 0.0 {
                        mask[[s, s2]] = true;
                    }
                }
            }
        }
        PairSupport::from_mask(&mask)
    }

    /// `sum_a reference(s, a) T_hat(s' | s, a)`: the distribution of `(s, s')` under the
    /// per-sample objectives.
    pub fn sample_pair_weights(&self) -> Array2<f64> {
        crate::mdp::marginalize(self.model.t_hat(), &self.reference)
    }

    /// Sparse row of `gamma T_hat nu (s, a) - nu(s)` plus `-sum_s' T_hat mu(s, s')` if a
    /// support is given.
    fn bellman_row(&self, s: usize, a: usize, mu: Option<&PairSupport>) -> Vec<(usize, f64)> {
        let gamma = self.model.gamma();
        let t = self.model.t_hat();
        let mut row = vec![(s, -1.0)];
        for s2 in 0..self.n_states() {
            let p = t[[s, a, s2]];
            if p > 0.0 {
                row.push((s2, gamma * p));
                if let Some(sup) = mu {
                    row.push((sup.var(s, s2), -p));
                }
            }
        }
        row
    }

    /// Population double form: exponential terms over `d_I(s, s')` in `mu` and over
    /// `d_I(s, a)` in `e_{mu,nu}`.
    pub fn ld_double(&self, r: &LogRatioTable, alpha: f64) -> Result<(DualProgram, PairSupport)> {
        self.double(r, alpha, TermKind::Exp)
    }

    /// The log-sum-exp counterpart of [`Self::ld_double`].
    pub fn fd_double(&self, r: &LogRatioTable, alpha: f64) -> Result<(DualProgram, PairSupport)> {
        self.double(r, alpha, TermKind::LogSumExp)
    }

    fn double(&self, r: &LogRatioTable, alpha: f64, kind: TermKind) -> Result<(DualProgram, PairSupport)> {
        let n = self.n_states();
        check_shape(&[n, n], r.r.shape())?;
        let sup = self.population_support();
        let d_ss = self.model.d_i_ss();
        let mut first = Term::new(kind, 1.0);
        for &(s, s2) in &sup.pairs {
            first.push(d_ss[[s, s2]], r.r[[s, s2]], &[(sup.var(s, s2), 1.0)]);
        }
        let mut second = Term::new(kind, alpha);
        for ((s, a), &p) in self.reference.indexed_iter() {
            if p > 0.0 {
                second.push(p, 0.0, &self.bellman_row(s, a, Some(&sup)));
            }
        }
        let layout = match kind {
            TermKind::Exp => Layout::new(n, &sup.group_sizes),
            TermKind::LogSumExp => Layout::dense(sup.dim()),
        };
        let program = DualProgram::new(self.linear(sup.dim()), vec![first, second], layout)?;
        Ok((program, sup))
    }

    /// Per-sample double form: both exponential terms are expectations over `(s, a, s')`.
    pub fn ld_double_sampled(&self, r: &LogRatioTable, alpha: f64) -> Result<(DualProgram, PairSupport)> {
        let n = self.n_states();
        check_shape(&[n, n], r.r.shape())?;
        let q = self.sample_pair_weights();
        let sup = PairSupport::from_mask(&q.mapv(|v| v > 0.0));
        let gamma = self.model.gamma();
        let mut first = Term::new(TermKind::Exp, 1.0);
        let mut second = Term::new(TermKind::Exp, alpha);
        for &(s, s2) in &sup.pairs {
            let m = sup.var(s, s2);
            first.push(q[[s, s2]], r.r[[s, s2]], &[(m, 1.0)]);
            second.push(q[[s, s2]], 0.0, &[(m, -1.0), (s2, gamma), (s, -1.0)]);
        }
        let layout = Layout::new(n, &sup.group_sizes);
        let program = DualProgram::new(self.linear(sup.dim()), vec![first, second], layout)?;
        Ok((program, sup))
    }

    /// Per-sample single forms over `A_nu(s, s') = r + gamma nu(s') - nu(s)` at temperature
    /// `1 + alpha`.
    pub fn single(&self, r: &LogRatioTable, alpha: f64, kind: TermKind) -> Result<DualProgram> {
        let n = self.n_states();
        check_shape(&[n, n], r.r.shape())?;
        let q = self.sample_pair_weights();
        let gamma = self.model.gamma();
        let mut term = Term::new(kind, 1.0 + alpha);
        for ((s, s2), &p) in q.indexed_iter() {
            term.push(p, r.r[[s, s2]], &[(s2, gamma), (s, -1.0)]);
        }
        DualProgram::new(self.linear(n), vec![term], Layout::dense(n))
    }

    /// Population log-sum-exp form over `(s, a)` with a state-action reward:
    /// `tau log E_ref[exp((reward + gamma T_hat nu - nu) / tau)]`.
    pub fn state_action(&self, reward: &Array2<f64>, tau: f64) -> Result<DualProgram> {
        let n = self.n_states();
        check_shape(self.reference.shape(), reward.shape())?;
        let mut term = Term::new(TermKind::LogSumExp, tau);
        for ((s, a), &p) in self.reference.indexed_iter() {
            if p > 0.0 {
                term.push(p, reward[[s, a]], &self.bellman_row(s, a, None));
            }
        }
        DualProgram::new(self.linear(n), vec![term], Layout::dense(n))
    }

    /// `sum_s' T_hat(s' | s, a) r(s, s')`.
    pub fn expected_ratio(&self, r: &LogRatioTable) -> Result<Array2<f64>> {
        let n = self.n_states();
        check_shape(&[n, n], r.r.shape())?;
        let t = self.model.t_hat();
        Ok(Array2::from_shape_fn((n, self.model.n_actions()), |(s, a)| {
            (0..n).map(|s2| t[[s, a, s2]] * r.r[[s, s2]]).sum()
        }))
    }
}
