//! Behavior cloning, inverse dynamics models and BCO.

use ndarray::{Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::datagen::{LabeledDataset, StateOnlyDataset};
use crate::error::{Error, Result};
use crate::mdp::Policy;

/// `pi(a | s) proportional to count(s, a)`; unvisited states are uniform.
pub fn bc_policy(data: &LabeledDataset) -> Policy {
    Policy::from_scores(&data.state_action_counts().mapv(|c| c as f64))
}

/// Count-based `P(a | s, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDynamicsModel {
    /// `probs[[s, s', a]]`; uniform on pairs outside the support.
    probs: Array3<f64>,
    support: Array2<bool>,
}

impl InverseDynamicsModel {
    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn support(&self) -> &Array2<bool> {
        &self.support
    }

    pub fn n_states(&self) -> usize {
        self.probs.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.probs.dim().2
    }

    /// Action distribution for a transition.
    pub fn conditional(&self, s: usize, s2: usize) -> ndarray::ArrayView1<'_, f64> {
        self.probs.slice(ndarray::s![s, s2, ..])
    }
}

/// `P(a | s, s') proportional to count(s, a, s') + smoothing` on observed pairs.
pub fn fit_idm(data: &LabeledDataset, smoothing: f64) -> Result<InverseDynamicsModel> {
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing {smoothing} must be nonnegative")));
    }
    let (n, n_actions) = (data.n_states(), data.n_actions());
    let counts = data.counts();
    let mut probs = Array3::zeros((n, n, n_actions));
    let mut support = Array2::from_elem((n, n), false);
    for s in 0..n {
        for s2 in 0..n {
            let total: u64 = (0..n_actions).map(|a| counts[[s, a, s2]]).sum();
            if total == 0 {
                probs.slice_mut(ndarray::s![s, s2, ..]).fill(1.0 / n_actions as f64);
                continue;
            }
            support[[s, s2]] = true;
            let denom = total as f64 + smoothing * n_actions as f64;
            for a in 0..n_actions {
                probs[[s, s2, a]] = (counts[[s, a, s2]] as f64 + smoothing) / denom;
            }
        }
    }
    Ok(InverseDynamicsModel { probs, support })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillMode {
    /// Draw from `P(. | s, s')`; uniform off the support.
    #[default]
    Sample,
    /// Most likely action (lowest index on ties); action 0 off the support.
    Argmax,
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (a, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = a;
        }
    }
    best
}

/// Labels every expert transition with an action from the inverse dynamics model.
pub fn fill_actions<R: Rng + ?Sized>(
    expert: &StateOnlyDataset,
    idm: &InverseDynamicsModel,
    mode: FillMode,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let (n, n_actions) = (idm.n_states(), idm.n_actions());
    if expert.n_states() != n {
        return Err(Error::ShapeMismatch { expected: vec![n], actual: vec![expert.n_states()] });
    }
    let mut samplers: Vec<Option<WeightedIndex<f64>>> = vec![None; n * n];
    let mut triples = Vec::with_capacity(expert.len());
    for &(s, s2) in expert.pairs() {
        let a = match mode {
            FillMode::Argmax if idm.support[[s, s2]] => argmax(idm.conditional(s, s2)),
            FillMode::Argmax => 0,
            FillMode::Sample if idm.support[[s, s2]] => {
                let slot = &mut samplers[s * n + s2];
                if slot.is_none() {
                    *slot = Some(
                        WeightedIndex::new(idm.conditional(s, s2).iter().copied())
                            .map_err(|e| Error::InvalidArgument(format!("inverse dynamics row: {e}")))?,
                    );
                }
                slot.as_ref().expect("just filled").sample(rng)
            }
            FillMode::Sample => rng.random_range(0..n_actions),
        };
        triples.push((s, a, s2));
    }
    LabeledDataset::new(n, n_actions, triples)
}

/// Behavior cloning on expected action counts: `pi(a | s) proportional to
/// sum over expert pairs (s, s') of P(a | s, s')`. States without expert data are uniform.
pub fn bco_policy(expert: &StateOnlyDataset, idm: &InverseDynamicsModel) -> Result<Policy> {
    let (n, n_actions) = (idm.n_states(), idm.n_actions());
    if expert.n_states() != n {
        return Err(Error::ShapeMismatch { expected: vec![n], actual: vec![expert.n_states()] });
    }
    let mut scores = Array2::zeros((n, n_actions));
    for ((s, s2), &c) in expert.counts().indexed_iter() {
        if c > 0 {
            for a in 0..n_actions {
                scores[[s, a]] += c as f64 * idm.probs[[s, s2, a]];
            }
        }
    }
    Ok(Policy::from_scores(&scores))
}
