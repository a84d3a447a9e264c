//! Brute-force reference solver for the regularized occupancy-matching program
//!
//! ```text
//! min_d  KL(T d || target) + alpha KL(d || d_ref)
//! s.t.   d is the discounted occupancy of some policy under T
//! ```
//!
//! solved by projected gradient over one probability simplex per state. Independent of the
//! dual solvers: no Lagrangian, no closed forms.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};

use crate::BenchError;

pub struct OccupancyProgram {
    pub transition: Array3<f64>,
    pub p0: Array1<f64>,
    pub gamma: f64,
    pub d_ref: Array2<f64>,
    pub target_ss: Array2<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub policy: Array2<f64>,
    pub d_sa: Array2<f64>,
    pub d_ss: Array2<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Lower bound kept on every allowed action so logarithms stay finite.
const FLOOR: f64 = 1e-14;

impl OccupancyProgram {
    fn dims(&self) -> (usize, usize) {
        let s = self.transition.shape();
        (s[0], s[1])
    }

    fn allowed(&self) -> Array2<bool> {
        self.d_ref.mapv(|v| v > 0.0)
    }

    /// Solves `(I - gamma P^T) x = rhs` (`transpose`) or `(I - gamma P) x = rhs`.
    fn solve(&self, policy: &Array2<f64>, rhs: &Array1<f64>, transpose: bool) -> Result<Array1<f64>, BenchError> {
        let (n, na) = self.dims();
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for s2 in 0..n {
                let p: f64 = (0..na).map(|a| policy[[s, a]] * self.transition[[s, a, s2]]).sum();
                if transpose {
                    m[(s2, s)] -= self.gamma * p;
                } else {
                    m[(s, s2)] -= self.gamma * p;
                }
            }
        }
        let x = m
            .lu()
            .solve(&DVector::from_iterator(n, rhs.iter().copied()))
            .ok_or_else(|| BenchError::Parse("singular occupancy system".into()))?;
        Ok(Array1::from_iter(x.iter().copied()))
    }

    fn occupancy(&self, policy: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>), BenchError> {
        let (n, na) = self.dims();
        let rho = self.solve(policy, &(&self.p0 * (1.0 - self.gamma)), true)?;
        let d_sa = Array2::from_shape_fn((n, na), |(s, a)| rho[s].max(0.0) * policy[[s, a]]);
        let d_ss = Array2::from_shape_fn((n, n), |(s, s2)| (0..na).map(|a| d_sa[[s, a]] * self.transition[[s, a, s2]]).sum());
        Ok((d_sa, d_ss))
    }

    fn value(&self, d_sa: &Array2<f64>, d_ss: &Array2<f64>) -> f64 {
        let kl = |p: &Array2<f64>, q: &Array2<f64>| -> f64 {
            p.iter()
                .zip(q.iter())
                .filter(|(&x, _)| x > 0.0)
                .map(|(&x, &y)| if y > 0.0 { x * (x / y).ln() } else { f64::INFINITY })
                .sum()
        };
        kl(d_ss, &self.target_ss) + self.alpha * kl(d_sa, &self.d_ref)
    }

    /// `Q(s, a)` of the per-step cost `dF/dd(s, a)`: the policy gradient up to the positive
    /// per-state factor `rho(s)`.
    fn action_values(&self, policy: &Array2<f64>, d_sa: &Array2<f64>, d_ss: &Array2<f64>) -> Result<Array2<f64>, BenchError> {
        let (n, na) = self.dims();
        let allowed = self.allowed();
        let log_ss = Array2::from_shape_fn((n, n), |(s, s2)| {
            let (x, y) = (d_ss[[s, s2]], self.target_ss[[s, s2]]);
            if x > 0.0 && y > 0.0 {
                (x / y).ln() + 1.0
            } else {
                0.0
            }
        });
        let cost = Array2::from_shape_fn((n, na), |(s, a)| {
            if !allowed[[s, a]] {
                return 0.0;
            }
            let matching: f64 = (0..n).map(|s2| self.transition[[s, a, s2]] * log_ss[[s, s2]]).sum();
            let x = d_sa[[s, a]].max(f64::MIN_POSITIVE);
            matching + self.alpha * ((x / self.d_ref[[s, a]]).ln() + 1.0)
        });
        let c_pi = Array1::from_shape_fn(n, |s| (0..na).map(|a| policy[[s, a]] * cost[[s, a]]).sum());
        let v = self.solve(policy, &c_pi, false)?;
        Ok(Array2::from_shape_fn((n, na), |(s, a)| {
            cost[[s, a]] + self.gamma * (0..n).map(|s2| self.transition[[s, a, s2]] * v[s2]).sum::<f64>()
        }))
    }

    pub fn solve_brute_force(&self, max_iters: usize, tol: f64) -> Result<OracleSolution, BenchError> {
        let (n, na) = self.dims();
        let allowed = self.allowed();
        let mut policy = Array2::from_shape_fn((n, na), |(s, a)| {
            let k = allowed.row(s).iter().filter(|&&b| b).count();
            match k {
                0 => 1.0 / na as f64,
                _ if allowed[[s, a]] => 1.0 / k as f64,
                _ => 0.0,
            }
        });
        let (mut d_sa, mut d_ss) = self.occupancy(&policy)?;
        let mut f = self.value(&d_sa, &d_ss);
        let mut step: f64 = 1.0;
        for it in 0..max_iters {
            let q = self.action_values(&policy, &d_sa, &d_ss)?;
            let mut t = (2.0 * step).min(1e3);
            let accepted = loop {
                let mut trial = policy.clone();
                for s in 0..n {
                    let idx: Vec<usize> = (0..na).filter(|&a| allowed[[s, a]]).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let point: Vec<f64> = idx.iter().map(|&a| policy[[s, a]] - t * q[[s, a]]).collect();
                    for (&a, p) in idx.iter().zip(project_simplex(&point, FLOOR)) {
                        trial[[s, a]] = p;
                    }
                }
                let (ts, tss) = self.occupancy(&trial)?;
                let ft = self.value(&ts, &tss);
                let moved = (&trial - &policy).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if ft <= f || moved < tol {
                    break Some((trial, ts, tss, ft, moved));
                }
                t *= 0.5;
                if t < 1e-30 {
                    break None;
                }
            };
            let Some((trial, ts, tss, ft, moved)) = accepted else {
                return Ok(OracleSolution { policy, d_sa, d_ss, value: f, iterations: it, converged: false });
            };
            step = t;
            policy = trial;
            (d_sa, d_ss, f) = (ts, tss, ft);
            if moved < tol {
                return Ok(OracleSolution { policy, d_sa, d_ss, value: f, iterations: it + 1, converged: true });
            }
        }
        Ok(OracleSolution { policy, d_sa, d_ss, value: f, iterations: max_iters, converged: false })
    }
}

/// Euclidean projection onto `{x : sum x = 1, x_i >= floor}`.
pub fn project_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let k = v.len();
    let budget = 1.0 - floor * k as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut u = shifted.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let candidate = (cumsum - budget) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            theta = candidate;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect()
}
