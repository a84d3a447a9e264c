//! Experiment manifests.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::BenchError;

/// The algorithms a grid can run. The declaration order is the canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bc,
    Bco,
    Demodicefo,
    Opolo,
    Lobsdice,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Bc, Algorithm::Bco, Algorithm::Demodicefo, Algorithm::Opolo, Algorithm::Lobsdice];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Bco => "bco",
            Algorithm::Demodicefo => "demodicefo",
            Algorithm::Opolo => "opolo",
            Algorithm::Lobsdice => "lobsdice",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| BenchError::Config(format!("unknown algorithm `{s}`")))
    }
}

impl clap::ValueEnum for Algorithm {
    fn value_variants<'a>() -> &'a [Self] {
        &Algorithm::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// A benchmark grid. Every field has a default, so a manifest only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub betas: Vec<f64>,
    pub n_expert: Vec<usize>,
    pub n_imperfect: Vec<usize>,
    pub n_seeds: u64,
    pub algorithms: Vec<Algorithm>,
    pub alpha: f64,
    pub expert_temperature: f64,
    pub smoothing: f64,
    pub clip: f64,
    pub master_seed: u64,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
    /// Measure per-run wall time. Timed output is not byte-reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.01, 0.1, 1.0],
            n_expert: vec![10, 100, 1000, 10000],
            n_imperfect: vec![1, 3, 10, 30, 100, 300, 1000, 3000, 10000],
            n_seeds: 100,
            algorithms: Algorithm::ALL.to_vec(),
            alpha: 0.01,
            expert_temperature: 0.01,
            smoothing: 1e-3,
            clip: 20.0,
            master_seed: 0,
            threads: 0,
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.betas.is_empty() || self.n_expert.is_empty() || self.n_imperfect.is_empty() {
            return bad("betas, n_expert and n_imperfect must be non-empty".into());
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return bad(format!("beta {b} not in (0, 1]"));
        }
        if self.n_expert.contains(&0) || self.n_imperfect.contains(&0) {
            return bad("dataset sizes must be positive".into());
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be positive".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must be non-empty".into());
        }
        for (name, v) in [("alpha", self.alpha), ("expert_temperature", self.expert_temperature), ("clip", self.clip)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return bad(format!("smoothing = {} must be non-negative", self.smoothing));
        }
        Ok(())
    }

    /// Grid axes in canonical order: sorted and de-duplicated.
    pub(crate) fn axes(&self) -> (Vec<f64>, Vec<usize>, Vec<usize>, Vec<Algorithm>) {
        let mut betas = self.betas.clone();
        betas.sort_by(f64::total_cmp);
        betas.dedup();
        let mut n_e = self.n_expert.clone();
        n_e.sort_unstable();
        n_e.dedup();
        let mut n_i = self.n_imperfect.clone();
        n_i.sort_unstable();
        n_i.dedup();
        let mut algorithms = self.algorithms.clone();
        algorithms.sort_unstable();
        algorithms.dedup();
        (betas, n_e, n_i, algorithms)
    }

    /// Number of records [`crate::run_grid`] produces.
    pub fn n_records(&self) -> usize {
        let (b, e, i, a) = self.axes();
        b.len() * e.len() * i.len() * a.len() * self.n_seeds as usize
    }
}
