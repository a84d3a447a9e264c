//! Random MDP generation, offline dataset sampling and count-based estimates.

mod empirical;
mod format;

pub use empirical::{build_empirical_model, empirical_log_ratio, EmpiricalModel, LogRatioTable};
pub use format::{parse_dataset, read_dataset, write_dataset, Dataset};

use ndarray::{Array1, Array2, Array3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::mdp::{self, Policy, TabularMdp};

/// Parameters of the random MDP family.
///
/// Each `(s, a)` gets `connectivity` distinct successors whose probabilities mix a uniformly
/// drawn one-hot vector with a flat Dirichlet draw: `(1 - beta) X + beta Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpGenParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub connectivity: usize,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for MdpGenParams {
    fn default() -> Self {
        Self { n_states: 20, n_actions: 4, connectivity: 4, beta: 1.0, gamma: 0.95, seed: 0 }
    }
}

impl MdpGenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidArgument("need at least one state and one action".into()));
        }
        if self.connectivity == 0 || self.connectivity > self.n_states {
            return Err(Error::InvalidArgument(format!(
                "connectivity {} must be in 1..={}",
                self.connectivity, self.n_states
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta {} not in [0, 1]", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// The initial state is always state 0.
pub const INITIAL_STATE: usize = 0;

/// Draws a random MDP. The random draws do not depend on `beta`, so one seed yields the same
/// successor sets, one-hot choices and Dirichlet vectors at every stochasticity level.
///
/// Reward 1 is placed on a single uniformly chosen non-initial state (for every action taken
/// there); everything else pays 0.
pub fn generate_random_mdp(params: &MdpGenParams) -> Result<TabularMdp> {
    params.validate()?;
    let MdpGenParams { n_states, n_actions, connectivity, beta, gamma, seed } = *params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut y = vec![0.0; connectivity];
    for s in 0..n_states {
        for a in 0..n_actions {
            let successors = rand::seq::index::sample(&mut rng, n_states, connectivity);
            let hot = rng.random_range(0..connectivity);
            for v in y.iter_mut() {
                *v = rng.sample::<f64, _>(Exp1);
            }
            let total: f64 = y.iter().sum();
            for (i, s2) in successors.iter().enumerate() {
                let x = if i == hot { 1.0 } else { 0.0 };
                transition[[s, a, s2]] = (1.0 - beta) * x + beta * y[i] / total;
            }
        }
    }

    let goal = if n_states > 1 { rng.random_range(1..n_states) } else { INITIAL_STATE };
    let mut reward = Array2::zeros((n_states, n_actions));
    reward.row_mut(goal).fill(1.0);
    let mut p0 = Array1::zeros(n_states);
    p0[INITIAL_STATE] = 1.0;
    TabularMdp::new(transition, reward, p0, gamma)
}

/// State-only demonstrations `(s, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateOnlyDataset {
    n_states: usize,
    n_actions: usize,
    pairs: Vec<(usize, usize)>,
    counts: Array2<u64>,
}

impl StateOnlyDataset {
    /// `n_actions` is metadata about the source MDP; state-only records never carry actions.
    pub fn new(n_states: usize, n_actions: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut counts = Array2::zeros((n_states, n_states));
        for (i, &(s, s2)) in pairs.iter().enumerate() {
            if s >= n_states || s2 >= n_states {
                return Err(Error::InvalidArgument(format!("pair {i} = ({s}, {s2}) out of range")));
            }
            counts[[s, s2]] += 1;
        }
        Ok(Self { n_states, n_actions, pairs, counts })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Keeps the first `n` records.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.n_states, self.n_actions, self.pairs[..n.min(self.len())].to_vec())
            .expect("prefix of a valid dataset")
    }
}

/// Action-labeled transitions `(s, a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n_states: usize,
    n_actions: usize,
    triples: Vec<(usize, usize, usize)>,
    counts: Array3<u64>,
}

impl LabeledDataset {
    pub fn new(n_states: usize, n_actions: usize, triples: Vec<(usize, usize, usize)>) -> Result<Self> {
        let mut counts = Array3::zeros((n_states, n_actions, n_states));
        for (i, &(s, a, s2)) in triples.iter().enumerate() {
            if s >= n_states || a >= n_actions || s2 >= n_states {
                return Err(Error::InvalidArgument(format!(
                    "triple {i} = ({s}, {a}, {s2}) out of range"
                )));
            }
            counts[[s, a, s2]] += 1;
        }
        Ok(Self { n_states, n_actions, triples, counts })
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn counts(&self) -> &Array3<u64> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Keeps the first `n` records.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.n_states, self.n_actions, self.triples[..n.min(self.len())].to_vec())
            .expect("prefix of a valid dataset")
    }

    pub fn pair_counts(&self) -> Array2<u64> {
        let mut out = Array2::zeros((self.n_states, self.n_states));
        for &(s, _, s2) in &self.triples {
            out[[s, s2]] += 1;
        }
        out
    }

    pub fn state_action_counts(&self) -> Array2<u64> {
        let mut out = Array2::zeros((self.n_states, self.n_actions));
        for &(s, a, _) in &self.triples {
            out[[s, a]] += 1;
        }
        out
    }
}

fn weighted(weights: impl IntoIterator<Item = f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))
}

/// Draws `n` i.i.d. pairs from the exact state-transition occupancy of `expert`.
pub fn sample_expert_dataset<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    expert: &Policy,
    n: usize,
    rng: &mut R,
) -> Result<StateOnlyDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let occupancy = mdp::stationary_distribution(mdp, expert)?;
    let n_states = mdp.n_states();
    let index = weighted(occupancy.d_ss.iter().copied())?;
    let pairs = (0..n)
        .map(|_| {
            let k = index.sample(rng);
            (k / n_states, k % n_states)
        })
        .collect();
    StateOnlyDataset::new(n_states, mdp.n_actions(), pairs)
}

/// Draws `(s, a)` i.i.d. from the occupancy of `agent`, then `s'` from the true dynamics.
pub fn sample_imperfect_dataset<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    agent: &Policy,
    n: usize,
    rng: &mut R,
) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let occupancy = mdp::stationary_distribution(mdp, agent)?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let index = weighted(occupancy.d_sa.iter().copied())?;
    let t = mdp.transition();
    let mut rows: Vec<Option<WeightedIndex<f64>>> = vec![None; n_states * n_actions];
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let k = index.sample(rng);
        let (s, a) = (k / n_actions, k % n_actions);
        if rows[k].is_none() {
            rows[k] = Some(weighted(t.slice(ndarray::s![s, a, ..]).iter().copied())?);
        }
        let s2 = rows[k].as_ref().expect("just filled").sample(rng);
        triples.push((s, a, s2));
    }
    LabeledDataset::new(n_states, n_actions, triples)
}
