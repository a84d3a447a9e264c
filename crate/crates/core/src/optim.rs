//! Smooth unconstrained minimization: damped Newton or gradient descent, both with
//! Armijo backtracking.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Search direction used by [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Regularized Newton direction.
    #[default]
    Newton,
    /// Steepest descent.
    GradientDescent,
}

pub const ARMIJO_C: f64 = 1e-4;
pub const SHRINK: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;

/// Block structure of a symmetric matrix: `hub` leading variables coupled to everything,
/// followed by contiguous groups that only couple within themselves and to the hub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    hub: usize,
    groups: Vec<(usize, usize)>,
    place: Vec<Place>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Hub(usize),
    Leaf(usize, usize),
}

impl Layout {
    pub fn dense(n: usize) -> Self {
        Self::new(n, &[])
    }

    /// `group_sizes` lists the sizes of consecutive groups after the hub.
    pub fn new(hub: usize, group_sizes: &[usize]) -> Self {
        let mut place: Vec<Place> = (0..hub).map(Place::Hub).collect();
        let mut groups = Vec::with_capacity(group_sizes.len());
        let mut start = hub;
        for (g, &len) in group_sizes.iter().enumerate() {
            groups.push((start, len));
            place.extend((0..len).map(|i| Place::Leaf(g, i)));
            start += len;
        }
        Self { hub, groups, place }
    }

    pub fn dim(&self) -> usize {
        self.place.len()
    }

    pub fn hub(&self) -> usize {
        self.hub
    }

    /// True if a term touching `vars` keeps the block structure.
    pub fn admits(&self, vars: &[usize]) -> bool {
        let mut group = None;
        for &v in vars {
            if let Place::Leaf(g, _) = self.place[v] {
                match group {
                    None => group = Some(g),
                    Some(h) if h != g => return false,
                    _ => {}
                }
            }
        }
        true
    }

    pub fn is_hub(&self, v: usize) -> bool {
        matches!(self.place[v], Place::Hub(_))
    }
}

/// Symmetric matrix with [`Layout`] structure.
#[derive(Debug, Clone)]
pub struct ArrowMatrix {
    layout: Layout,
    hub: DMatrix<f64>,
    leaves: Vec<DMatrix<f64>>,
    coupling: Vec<DMatrix<f64>>,
}

impl ArrowMatrix {
    pub fn zeros(layout: &Layout) -> Self {
        let h = layout.hub;
        Self {
            hub: DMatrix::zeros(h, h),
            leaves: layout.groups.iter().map(|&(_, n)| DMatrix::zeros(n, n)).collect(),
            coupling: layout.groups.iter().map(|&(_, n)| DMatrix::zeros(n, h)).collect(),
            layout: layout.clone(),
        }
    }

    /// Adds `weight * a a^T` for a sparse vector `a`.
    pub fn add_outer(&mut self, a: &[(usize, f64)], weight: f64) {
        for &(i, vi) in a {
            for &(j, vj) in a {
                let v = weight * vi * vj;
                match (self.layout.place[i], self.layout.place[j]) {
                    (Place::Hub(p), Place::Hub(q)) => self.hub[(p, q)] += v,
                    (Place::Leaf(g, p), Place::Leaf(h, q)) => {
                        debug_assert_eq!(g, h, "term crosses groups");
                        self.leaves[g][(p, q)] += v;
                    }
                    (Place::Leaf(g, p), Place::Hub(q)) => self.coupling[g][(p, q)] += v,
                    (Place::Hub(_), Place::Leaf(..)) => {}
                }
            }
        }
    }

    /// Adds `weight * a a^T` for a vector supported on the hub.
    pub fn add_hub_outer(&mut self, a: &[f64], weight: f64) {
        let h = self.layout.hub;
        for p in 0..h {
            if a[p] == 0.0 {
                continue;
            }
            for q in 0..h {
                self.hub[(p, q)] += weight * a[p] * a[q];
            }
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.hub.nrows() {
            m = m.max(self.hub[(i, i)].abs());
        }
        for b in &self.leaves {
            for i in 0..b.nrows() {
                m = m.max(b[(i, i)].abs());
            }
        }
        m
    }

    /// Dense copy, mainly for tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.layout.dim();
        let h = self.layout.hub;
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (h, h)).copy_from(&self.hub);
        for (g, &(start, len)) in self.layout.groups.iter().enumerate() {
            out.view_mut((start, start), (len, len)).copy_from(&self.leaves[g]);
            out.view_mut((start, 0), (len, h)).copy_from(&self.coupling[g]);
            out.view_mut((0, start), (h, len)).copy_from(&self.coupling[g].transpose());
        }
        out
    }

    /// Solves `(M + ridge I) x = rhs` by block elimination of the groups. Returns `None`
    /// if a block is not positive definite.
    pub fn solve(&self, rhs: &[f64], ridge: f64) -> Option<Vec<f64>> {
        let h = self.layout.hub;
        let mut schur = self.hub.clone();
        for i in 0..h {
            schur[(i, i)] += ridge;
        }
        let mut hub_rhs = DVector::from_column_slice(&rhs[..h]);
        let mut factors = Vec::with_capacity(self.leaves.len());
        for (g, &(start, len)) in self.layout.groups.iter().enumerate() {
            let mut block = self.leaves[g].clone();
            for i in 0..len {
                block[(i, i)] += ridge;
            }
            let chol = Cholesky::new(block)?;
            let b = &self.coupling[g];
            let w = chol.solve(b);
            let local = chol.solve(&DVector::from_column_slice(&rhs[start..start + len]));
            schur -= b.transpose() * &w;
            hub_rhs -= b.transpose() * &local;
            factors.push((w, local));
        }
        let x_hub = if h > 0 { Cholesky::new(schur)?.solve(&hub_rhs) } else { DVector::zeros(0) };
        let mut x = vec![0.0; self.layout.dim()];
        x[..h].copy_from_slice(x_hub.as_slice());
        for (g, &(start, len)) in self.layout.groups.iter().enumerate() {
            let (w, local) = &factors[g];
            let xg = local - w * &x_hub;
            x[start..start + len].copy_from_slice(xg.as_slice());
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// A smooth function of a real vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn hessian(&self, x: &[f64]) -> Result<ArrowMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_rule: StepRule,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { max_iters: 200_000, grad_tol: 1e-8, step_rule: StepRule::Newton }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn newton_direction(obj: &impl Objective, x: &[f64], g: &[f64]) -> Result<Option<Vec<f64>>> {
    let hess = obj.hessian(x)?;
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let scale = hess.max_diagonal().max(1.0);
    let mut ridge = 1e-12 * scale;
    while ridge < 1e-2 * scale {
        if let Some(d) = hess.solve(&neg, ridge) {
            return Ok(Some(d));
        }
        ridge *= 100.0;
    }
    Ok(None)
}

/// Minimizes `obj` from `x0` until the gradient's infinity norm drops below `grad_tol`.
///
/// Trial points whose evaluation fails (for example with an exponent overflow) are treated
/// like points with infinite value. Stops early, unconverged, if the line search cannot make
/// progress.
pub fn minimize(obj: &impl Objective, x0: Vec<f64>, opts: &MinimizeOptions) -> Result<Minimum> {
    if !(opts.grad_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("grad_tol {} must be positive", opts.grad_tol)));
    }
    if x0.len() != obj.dim() {
        return Err(Error::ShapeMismatch { expected: vec![obj.dim()], actual: vec![x0.len()] });
    }
    let mut x = x0;
    let (mut f, mut g) = obj.value_grad(&x)?;
    let mut last_step: f64 = 1.0;
    let mut iterations = 0;
    loop {
        let grad_inf_norm = inf_norm(&g);
        if grad_inf_norm < opts.grad_tol || iterations >= opts.max_iters {
            return Ok(Minimum { x, value: f, grad_inf_norm, iterations, converged: grad_inf_norm < opts.grad_tol });
        }
        let (mut dir, mut t) = match opts.step_rule {
            StepRule::Newton => (newton_direction(obj, &x, &g)?, 1.0),
            StepRule::GradientDescent => (None, (2.0 * last_step).min(1e6)),
        };
        let mut slope = dir.as_deref().map_or(0.0, |d| dot(&g, d));
        if dir.is_none() || !(slope < 0.0) {
            dir = Some(g.iter().map(|v| -v).collect());
            slope = -dot(&g, &g);
        }
        let dir = dir.expect("direction set above");
        let slack = 8.0 * f64::EPSILON * (1.0 + f.abs());
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if let Ok(ft) = obj.value(&trial) {
                let bound = f + ARMIJO_C * t * slope;
                if ft.is_finite() && ft <= bound {
                    break Some(trial);
                }
                // Within roundoff of the bound, accept only if the gradient shrinks.
                if ft.is_finite() && ft <= bound + slack {
                    if let Ok((_, gt)) = obj.value_grad(&trial) {
                        if inf_norm(&gt) < grad_inf_norm {
                            break Some(trial);
                        }
                    }
                }
            }
            t *= SHRINK;
            if t < MIN_STEP {
                break None;
            }
        };
        iterations += 1;
        let Some(next) = accepted else {
            return Ok(Minimum { x, value: f, grad_inf_norm, iterations, converged: false });
        };
        last_step = t;
        x = next;
        (f, g) = obj.value_grad(&x)?;
    }
}
