//! The full `(beta, n_e, n_i, algorithm, seed)` grid.

use crate::config::ExperimentConfig;
use crate::run::{run_seed, RunRecord};
use crate::BenchError;

/// A `(beta, seed)` pair that failed as a whole, e.g. because its MDP could not be built.
#[derive(Debug)]
pub struct SeedFailure {
    pub beta: f64,
    pub seed: u64,
    pub error: BenchError,
}

#[derive(Debug, Default)]
pub struct GridOutput {
    /// Canonical order: beta, n_e, n_i, algorithm, then seed.
    pub records: Vec<RunRecord>,
    pub failures: Vec<SeedFailure>,
}

type Unit = (usize, f64, u64);

fn units(config: &ExperimentConfig) -> Vec<Unit> {
    let (betas, ..) = config.axes();
    betas
        .iter()
        .enumerate()
        .flat_map(|(i, &b)| (0..config.n_seeds).map(move |seed| (i, b, seed)))
        .collect()
}

fn run_unit(config: &ExperimentConfig, (_, beta, seed): Unit) -> Result<Vec<RunRecord>, SeedFailure> {
    run_seed(config, beta, seed).map_err(|error| SeedFailure { beta, seed, error })
}

/// How the `(beta, seed)` work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// A rayon pool with `config.threads` workers.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        Execution::Sequential
    }
}

type UnitResult = Result<Vec<RunRecord>, SeedFailure>;

fn run_units(config: &ExperimentConfig, units: &[Unit], execution: Execution) -> Result<Vec<UnitResult>, BenchError> {
    match execution {
        Execution::Sequential => Ok(units.iter().map(|&u| run_unit(config, u)).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(|| units.par_iter().map(|&u| run_unit(config, u)).collect()))
        }
    }
}

/// Runs every cell of the grid. Each `(beta, seed)` is an independent work item with its own
/// random streams, so the output does not depend on the thread count or scheduling.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutput, BenchError> {
    run_grid_with(config, Execution::default())
}

pub fn run_grid_with(config: &ExperimentConfig, execution: Execution) -> Result<GridOutput, BenchError> {
    config.validate()?;
    let (_, n_es, n_is, algorithms) = config.axes();
    let units = units(config);
    let mut out = GridOutput { records: Vec::with_capacity(config.n_records()), failures: Vec::new() };
    let mut keyed = Vec::with_capacity(config.n_records());
    for (unit, result) in units.iter().zip(run_units(config, &units, execution)?) {
        match result {
            Ok(records) => keyed.extend(records.into_iter().map(|r| (unit.0, r))),
            Err(failure) => out.failures.push(failure),
        }
    }
    let position = |r: &RunRecord| {
        let e = n_es.binary_search(&r.n_e).expect("n_e on axis");
        let i = n_is.binary_search(&r.n_i).expect("n_i on axis");
        let a = algorithms.binary_search(&r.algorithm).expect("algorithm on axis");
        (e, i, a, r.seed)
    };
    keyed.sort_by_key(|(b, r)| (*b, position(r)));
    out.records = keyed.into_iter().map(|(_, r)| r).collect();
    Ok(out)
}
