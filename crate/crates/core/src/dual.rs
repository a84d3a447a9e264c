//! Convex dual objectives of the form `c . x + sum of exponential terms`.
//!
//! Every term works on affine arguments `z_k = a_k . x + b_k` with sparse rows `a_k` and
//! nonnegative weights `p_k`:
//!
//! * exponential: `sum_k p_k tau exp(z_k / tau - 1)`
//! * log-sum-exp: `tau log sum_k p_k exp(z_k / tau)`

use crate::error::{Error, Result};
use crate::optim::{ArrowMatrix, Layout, Objective};

/// Largest exponent accepted by exponential terms.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Exp,
    LogSumExp,
}

#[derive(Debug, Clone)]
pub struct Term {
    kind: TermKind,
    tau: f64,
    p: Vec<f64>,
    b: Vec<f64>,
    start: Vec<usize>,
    idx: Vec<usize>,
    coef: Vec<f64>,
}

impl Term {
    pub fn new(kind: TermKind, tau: f64) -> Self {
        Self { kind, tau, p: Vec::new(), b: Vec::new(), start: vec![0], idx: Vec::new(), coef: Vec::new() }
    }

    /// Appends one row. Repeated variables are merged; rows with zero weight are dropped.
    pub fn push(&mut self, p: f64, b: f64, entries: &[(usize, f64)]) {
        if p == 0.0 {
            return;
        }
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        let row_start = self.idx.len();
        for (i, c) in sorted {
            if self.idx.len() > row_start && *self.idx.last().expect("nonempty") == i {
                *self.coef.last_mut().expect("nonempty") += c;
            } else {
                self.idx.push(i);
                self.coef.push(c);
            }
        }
        self.p.push(p);
        self.b.push(b);
        self.start.push(self.idx.len());
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.start[k]..self.start[k + 1];
        self.idx[r.clone()].iter().copied().zip(self.coef[r].iter().copied())
    }

    fn arguments(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|k| self.b[k] + self.row(k).map(|(i, c)| c * x[i]).sum::<f64>()).collect()
    }

    /// Per-row multipliers `d value / d z_k`.
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let z = self.arguments(x);
        match self.kind {
            TermKind::Exp => {
                let mut value = 0.0;
                let mut mult = Vec::with_capacity(z.len());
                for (k, &zk) in z.iter().enumerate() {
                    let arg = zk / self.tau - 1.0;
                    if arg > MAX_EXPONENT || arg.is_nan() {
                        return Err(Error::ExponentOverflow(arg));
                    }
                    let e = self.p[k] * arg.exp();
                    value += self.tau * e;
                    mult.push(e);
                }
                Ok((value, mult))
            }
            TermKind::LogSumExp => {
                if z.is_empty() {
                    return Ok((0.0, Vec::new()));
                }
                let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / self.tau));
                let e: Vec<f64> = z.iter().zip(&self.p).map(|(&zk, &p)| p * (zk / self.tau - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Ok((self.tau * (m + s.ln()), e.into_iter().map(|v| v / s).collect()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualProgram {
    linear: Vec<f64>,
    terms: Vec<Term>,
    layout: Layout,
}

impl DualProgram {
    pub fn new(linear: Vec<f64>, terms: Vec<Term>, layout: Layout) -> Result<Self> {
        let n = layout.dim();
        if linear.len() != n {
            return Err(Error::ShapeMismatch { expected: vec![n], actual: vec![linear.len()] });
        }
        for t in &terms {
            if !(t.tau > 0.0) {
                return Err(Error::InvalidArgument(format!("temperature {} must be positive", t.tau)));
            }
            for k in 0..t.len() {
                let vars: Vec<usize> = t.row(k).map(|(i, _)| i).collect();
                if vars.iter().any(|&v| v >= n) {
                    return Err(Error::InvalidArgument("term row references a missing variable".into()));
                }
                let fits = match t.kind {
                    TermKind::Exp => layout.admits(&vars),
                    TermKind::LogSumExp => vars.iter().all(|&v| layout.is_hub(v)),
                };
                if !fits {
                    return Err(Error::InvalidArgument("term does not respect the variable layout".into()));
                }
            }
        }
        Ok(Self { linear, terms, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }
}

impl Objective for DualProgram {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut v: f64 = self.linear.iter().zip(x).map(|(c, x)| c * x).sum();
        for t in &self.terms {
            v += t.eval(x)?.0;
        }
        Ok(v)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut v: f64 = self.linear.iter().zip(x).map(|(c, x)| c * x).sum();
        let mut g = self.linear.clone();
        for t in &self.terms {
            let (tv, mult) = t.eval(x)?;
            v += tv;
            for (k, m) in mult.iter().enumerate() {
                for (i, c) in t.row(k) {
                    g[i] += m * c;
                }
            }
        }
        Ok((v, g))
    }

    fn hessian(&self, x: &[f64]) -> Result<ArrowMatrix> {
        let mut h = ArrowMatrix::zeros(&self.layout);
        let mut row = Vec::new();
        for t in &self.terms {
            let (_, mult) = t.eval(x)?;
            let mut mean = vec![0.0; self.layout.hub()];
            for (k, m) in mult.iter().enumerate() {
                row.clear();
                row.extend(t.row(k));
                h.add_outer(&row, m / t.tau);
                if t.kind == TermKind::LogSumExp {
                    for &(i, c) in &row {
                        mean[i] += m * c;
                    }
                }
            }
            if t.kind == TermKind::LogSumExp {
                h.add_hub_outer(&mean, -1.0 / t.tau);
            }
        }
        Ok(h)
    }
}
