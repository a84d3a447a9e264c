use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

use super::{LabeledDataset, StateOnlyDataset};
use crate::error::{check_shape, Error, Result};
use crate::mdp::{self, StationaryDistribution, TabularMdp};

/// Count-based estimates from action-labeled data.
///
/// `(s, a)` pairs that never occur get a self-loop in `t_hat` so every row stays a
/// distribution; their empirical mass is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    t_hat: Array3<f64>,
    d_i_sa: Array2<f64>,
    d_i_ss: Array2<f64>,
    p0: Array1<f64>,
    gamma: f64,
    support_sa: Array2<bool>,
    n_samples: Option<usize>,
}

pub fn build_empirical_model(data: &LabeledDataset, p0: &Array1<f64>, gamma: f64) -> Result<EmpiricalModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n_states, n_actions) = (data.n_states(), data.n_actions());
    check_shape(&[n_states], p0.shape())?;
    let counts = data.counts();
    let n = data.len() as f64;

    let mut t_hat = Array3::zeros((n_states, n_actions, n_states));
    let mut d_i_sa = Array2::zeros((n_states, n_actions));
    let mut support_sa = Array2::from_elem((n_states, n_actions), false);
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = counts.slice(ndarray::s![s, a, ..]);
            let total: u64 = row.sum();
            if total == 0 {
                t_hat[[s, a, s]] = 1.0;
                continue;
            }
            support_sa[[s, a]] = true;
            d_i_sa[[s, a]] = total as f64 / n;
            for s2 in 0..n_states {
                t_hat[[s, a, s2]] = row[s2] as f64 / total as f64;
            }
        }
    }
    let d_i_ss = data.pair_counts().mapv(|c| c as f64 / n);
    Ok(EmpiricalModel {
        t_hat,
        d_i_sa,
        d_i_ss,
        p0: p0.clone(),
        gamma,
        support_sa,
        n_samples: Some(data.len()),
    })
}

impl EmpiricalModel {
    /// Uses exact dynamics and an exact occupancy in place of data estimates.
    pub fn from_exact(mdp: &TabularMdp, occupancy: &StationaryDistribution) -> Result<Self> {
        Self::from_parts(mdp.transition().to_owned(), occupancy.d_sa.clone(), mdp.initial_dist().clone(), mdp.discount())
    }

    /// Builds a model from an explicit kernel and state-action distribution. Rows of
    /// `t_hat` where `d_i_sa` is zero are replaced by self-loops.
    pub fn from_parts(mut t_hat: Array3<f64>, d_i_sa: Array2<f64>, p0: Array1<f64>, gamma: f64) -> Result<Self> {
        let (n_states, n_actions, _) = t_hat.dim();
        check_shape(&[n_states, n_actions, n_states], t_hat.shape())?;
        check_shape(&[n_states, n_actions], d_i_sa.shape())?;
        check_shape(&[n_states], p0.shape())?;
        if d_i_sa.iter().any(|&x| !(x >= 0.0)) || (d_i_sa.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("state-action distribution must be normalized".into()));
        }
        let support_sa = d_i_sa.mapv(|x| x > 0.0);
        for s in 0..n_states {
            for a in 0..n_actions {
                if !support_sa[[s, a]] {
                    t_hat.slice_mut(ndarray::s![s, a, ..]).fill(0.0);
                    t_hat[[s, a, s]] = 1.0;
                }
            }
        }
        // Validates the kernel and discount.
        let check = TabularMdp::new(t_hat, Array2::zeros((n_states, n_actions)), p0, gamma)?;
        let t_hat = check.transition().to_owned();
        let d_i_ss = mdp::marginalize(t_hat.view(), &d_i_sa);
        Ok(Self {
            t_hat,
            d_i_sa,
            d_i_ss,
            p0: check.initial_dist().clone(),
            gamma,
            support_sa,
            n_samples: None,
        })
    }

    pub fn n_states(&self) -> usize {
        self.t_hat.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.t_hat.dim().1
    }

    pub fn t_hat(&self) -> ArrayView3<'_, f64> {
        self.t_hat.view()
    }

    pub fn d_i_sa(&self) -> &Array2<f64> {
        &self.d_i_sa
    }

    pub fn d_i_ss(&self) -> &Array2<f64> {
        &self.d_i_ss
    }

    pub fn p0(&self) -> &Array1<f64> {
        &self.p0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn support_sa(&self) -> &Array2<bool> {
        &self.support_sa
    }

    /// Number of transitions the estimates came from; `None` for exact models.
    pub fn n_samples(&self) -> Option<usize> {
        self.n_samples
    }

    /// `(s, a)` pairs an occupancy supported on the data can use while still satisfying the
    /// flow constraint: observed pairs whose estimated successors are all themselves able to
    /// continue inside the data. Computed as a greatest fixed point.
    pub fn viable_support(&self) -> Array2<bool> {
        let (n_states, n_actions) = (self.n_states(), self.n_actions());
        let mut viable = self.support_sa.clone();
        loop {
            let alive: Vec<bool> = viable.outer_iter().map(|row| row.iter().any(|&v| v)).collect();
            let mut changed = false;
            for s in 0..n_states {
                for a in 0..n_actions {
                    if viable[[s, a]]
                        && (0..n_states).any(|s2| self.t_hat[[s, a, s2]] > 0.0 && !alive[s2])
                    {
                        viable[[s, a]] = false;
                        changed = true;
                    }
                }
            }
            if !changed {
                return viable;
            }
        }
    }

    /// True when every initial state has a viable action.
    pub fn is_feasible(&self) -> bool {
        let viable = self.viable_support();
        self.p0
            .iter()
            .enumerate()
            .all(|(s, &p)| p == 0.0 || viable.row(s).iter().any(|&v| v))
    }

    /// The data distribution restricted to the viable support and renormalized. Equals
    /// `d_i_sa` whenever every observed pair is viable.
    pub fn reference_sa(&self) -> Array2<f64> {
        let viable = self.viable_support();
        if viable == self.support_sa {
            return self.d_i_sa.clone();
        }
        let mut r = self.d_i_sa.clone();
        r.zip_mut_with(&viable, |x, &v| {
            if !v {
                *x = 0.0
            }
        });
        let total = r.sum();
        if total > 0.0 {
            r /= total;
        }
        r
    }

    /// `d_i(s, a) T_hat(s' | s, a)` as a dense tensor.
    pub fn joint(&self, d_sa: &Array2<f64>) -> Array3<f64> {
        let mut out = self.t_hat.clone();
        for ((s, a, _), v) in out.indexed_iter_mut() {
            *v *= d_sa[[s, a]];
        }
        out
    }

    pub fn state_marginal(&self) -> Array1<f64> {
        self.d_i_sa.sum_axis(Axis(1))
    }
}

/// Estimate of `log(d_E(s, s') / d_I(s, s'))`, clipped to `[-clip_bound, clip_bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioTable {
    pub r: Array2<f64>,
    pub clip_bound: f64,
}

impl LogRatioTable {
    pub fn new(r: Array2<f64>, clip_bound: f64) -> Result<Self> {
        if !(clip_bound > 0.0) {
            return Err(Error::InvalidArgument(format!("clip {clip_bound} must be positive")));
        }
        let r = r.mapv(|x| x.clamp(-clip_bound, clip_bound));
        Ok(Self { r, clip_bound })
    }

    /// Log ratio of two exact distributions. Entries where both are zero are set to 0.
    pub fn exact(d_expert: &Array2<f64>, d_imperfect: &Array2<f64>, clip: f64) -> Result<Self> {
        check_shape(d_expert.shape(), d_imperfect.shape())?;
        let mut r = Array2::zeros(d_expert.raw_dim());
        for ((idx, out), (&e, &i)) in r.indexed_iter_mut().zip(d_expert.iter().zip(d_imperfect.iter())) {
            let _: (usize, usize) = idx;
            *out = log_ratio(e, i);
        }
        Self::new(r, clip)
    }

    pub fn zeros(n_states: usize) -> Self {
        Self { r: Array2::zeros((n_states, n_states)), clip_bound: f64::INFINITY }
    }

    pub fn n_states(&self) -> usize {
        self.r.nrows()
    }
}

fn log_ratio(num: f64, den: f64) -> f64 {
    match (num > 0.0, den > 0.0) {
        (false, false) => 0.0,
        _ => num.ln() - den.ln(),
    }
}

/// Additively smoothed count ratio:
/// `log((c_E + k) / (N_E + k S^2)) - log((c_I + k) / (N_I + k S^2))`, then clipped.
pub fn empirical_log_ratio(
    expert: &StateOnlyDataset,
    imperfect: &LabeledDataset,
    smoothing: f64,
    clip: f64,
) -> Result<LogRatioTable> {
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing {smoothing} must be nonnegative")));
    }
    if expert.is_empty() && imperfect.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if smoothing == 0.0 && (expert.is_empty() || imperfect.is_empty()) {
        return Err(Error::InvalidArgument("an empty dataset needs positive smoothing".into()));
    }
    let n_states = expert.n_states();
    check_shape(&[n_states], &[imperfect.n_states()])?;
    let cells = (n_states * n_states) as f64;
    let n_e = expert.len() as f64 + smoothing * cells;
    let n_i = imperfect.len() as f64 + smoothing * cells;
    let c_i = imperfect.pair_counts();
    let r = Array2::from_shape_fn((n_states, n_states), |(s, s2)| {
        let pe = (expert.counts()[[s, s2]] as f64 + smoothing) / n_e;
        let pi = (c_i[[s, s2]] as f64 + smoothing) / n_i;
        log_ratio(pe, pi)
    });
    LogRatioTable::new(r, clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_random_mdp, sample_expert_dataset, sample_imperfect_dataset, MdpGenParams};
    use crate::mdp::{softmax_policy, stationary_distribution, uniform_policy, value_iteration};
    use ndarray::arr1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p0(n: usize) -> Array1<f64> {
        let mut p = Array1::zeros(n);
        p[0] = 1.0;
        p
    }

    #[test]
    fn counts_normalize_per_row() {
        let data = LabeledDataset::new(4, 3, vec![(0, 0, 1), (0, 0, 1)]).unwrap();
        let m = build_empirical_model(&data, &p0(4), 0.9).unwrap();
        assert_eq!(m.t_hat()[[0, 0, 1]], 1.0);

        let data = LabeledDataset::new(4, 3, vec![(0, 0, 1), (0, 0, 2)]).unwrap();
        let m = build_empirical_model(&data, &p0(4), 0.9).unwrap();
        assert_eq!(m.t_hat()[[0, 0, 1]], 0.5);
        assert_eq!(m.t_hat()[[0, 0, 2]], 0.5);
        assert_eq!(m.t_hat()[[3, 2, 3]], 1.0);
        assert!(!m.support_sa()[[3, 2]]);
        assert!((m.d_i_sa().sum() - 1.0).abs() < 1e-12);
        assert!((m.d_i_ss().sum() - 1.0).abs() < 1e-12);
        assert_eq!(m.n_samples(), Some(2));
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = LabeledDataset::new(2, 2, vec![]).unwrap();
        assert!(matches!(build_empirical_model(&data, &p0(2), 0.9), Err(Error::EmptyDataset)));
    }

    #[test]
    fn viability_prunes_dead_ends() {
        // 0 -a0-> 1 (1 has no data), 0 -a1-> 0.
        let data = LabeledDataset::new(3, 2, vec![(0, 0, 1), (0, 1, 0)]).unwrap();
        let m = build_empirical_model(&data, &p0(3), 0.9).unwrap();
        let v = m.viable_support();
        assert!(!v[[0, 0]]);
        assert!(v[[0, 1]]);
        assert!(m.is_feasible());
        let r = m.reference_sa();
        assert_eq!(r[[0, 0]], 0.0);
        assert_eq!(r[[0, 1]], 1.0);

        let data = LabeledDataset::new(3, 2, vec![(1, 0, 2)]).unwrap();
        let m = build_empirical_model(&data, &p0(3), 0.9).unwrap();
        assert!(!m.is_feasible());
    }

    #[test]
    fn from_parts_self_loops_unsupported_rows() {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        let d = ndarray::arr2(&[[1.0], [0.0]]);
        let m = EmpiricalModel::from_parts(t, d, arr1(&[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(m.t_hat()[[1, 0, 1]], 1.0);
        assert_eq!(m.d_i_ss()[[0, 1]], 1.0);
    }

    #[test]
    fn log_ratio_examples() {
        let e = StateOnlyDataset::new(2, 1, vec![(0, 1), (1, 0)]).unwrap();
        let i = LabeledDataset::new(2, 1, vec![(0, 0, 1), (1, 0, 0)]).unwrap();
        let r = empirical_log_ratio(&e, &i, 0.0, 20.0).unwrap();
        assert_eq!(r.r[[0, 1]], 0.0);
        assert_eq!(r.r[[1, 0]], 0.0);
        assert_eq!(r.r[[0, 0]], 0.0);

        let e = StateOnlyDataset::new(2, 1, vec![(0, 1)]).unwrap();
        let i = LabeledDataset::new(2, 1, vec![(0, 0, 1), (1, 0, 0)]).unwrap();
        let r = empirical_log_ratio(&e, &i, 0.0, 20.0).unwrap();
        assert_eq!(r.r[[1, 0]], -20.0);

        // c_E / N_E = 0.5, c_I / N_I = 0.25.
        let e = StateOnlyDataset::new(2, 1, vec![(0, 1), (1, 1)]).unwrap();
        let i = LabeledDataset::new(2, 1, vec![(0, 0, 1), (1, 0, 0), (1, 0, 0), (1, 0, 1)]).unwrap();
        let r = empirical_log_ratio(&e, &i, 0.0, 20.0).unwrap();
        assert!((r.r[[0, 1]] - 2f64.ln()).abs() < 1e-15);
        assert!(r.r.iter().all(|x| x.abs() <= 20.0));
    }

    #[test]
    fn log_ratio_errors() {
        let e = StateOnlyDataset::new(2, 1, vec![]).unwrap();
        let i = LabeledDataset::new(2, 1, vec![]).unwrap();
        assert!(empirical_log_ratio(&e, &i, 1e-3, 20.0).is_err());
        let i = LabeledDataset::new(2, 1, vec![(0, 0, 0)]).unwrap();
        assert!(empirical_log_ratio(&e, &i, -1.0, 20.0).is_err());
        assert!(empirical_log_ratio(&e, &i, 1e-3, 0.0).is_err());
        assert!(empirical_log_ratio(&e, &i, 1e-3, 20.0).is_ok());
    }

    #[test]
    fn estimates_are_consistent() {
        let mdp = generate_random_mdp(&MdpGenParams { beta: 1.0, seed: 31, ..Default::default() }).unwrap();
        let uniform = uniform_policy(&mdp);
        let expert = softmax_policy(&value_iteration(&mdp, 1e-10).unwrap(), 0.01).unwrap();
        let d_u = stationary_distribution(&mdp, &uniform).unwrap();
        let d_e = stationary_distribution(&mdp, &expert).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imperfect = sample_imperfect_dataset(&mdp, &uniform, 1_000_000, &mut rng).unwrap();
        let demos = sample_expert_dataset(&mdp, &expert, 1_000_000, &mut rng).unwrap();
        let model = build_empirical_model(&imperfect, mdp.initial_dist(), 0.95).unwrap();

        let mut worst: f64 = 0.0;
        for s in 0..20 {
            for a in 0..4 {
                if d_u.d_sa[[s, a]] > 0.0 {
                    for s2 in 0..20 {
                        worst = worst.max((model.t_hat()[[s, a, s2]] - mdp.transition()[[s, a, s2]]).abs());
                    }
                }
            }
        }
        assert!(worst < 0.02, "kernel error {worst}");

        let r = empirical_log_ratio(&demos, &imperfect, 0.0, 20.0).unwrap();
        let exact = LogRatioTable::exact(&d_e.d_ss, &d_u.d_ss, 20.0).unwrap();
        // Entries whose log ratio is estimable at this sample size: standard error at most a
        // quarter of the tolerance.
        let mut checked = 0;
        for s in 0..20 {
            for s2 in 0..20 {
                let (pe, pu) = (d_e.d_ss[[s, s2]], d_u.d_ss[[s, s2]]);
                if pe > 0.0 && pu > 0.0 && (1.0 / (1e6 * pe) + 1.0 / (1e6 * pu)).sqrt() <= 0.0125 {
                    checked += 1;
                    assert!((r.r[[s, s2]] - exact.r[[s, s2]]).abs() < 0.05, "({s},{s2})");
                }
            }
        }
        assert!(checked > 0);
    }
}
