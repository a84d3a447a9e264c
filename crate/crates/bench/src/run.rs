//! One random MDP per `(beta, seed)`, every algorithm on every dataset size.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use ifo_core::baselines::{bc_policy, bco_policy, fit_idm, fill_actions, FillMode};
use ifo_core::datagen::{
    build_empirical_model, empirical_log_ratio, generate_random_mdp, sample_expert_dataset, sample_imperfect_dataset,
    EmpiricalModel, LabeledDataset, LogRatioTable, MdpGenParams, StateOnlyDataset,
};
use ifo_core::dice::{
    demodicefo_solve, extract_policy, opolo_tabular_solve, solve_ld_double, DualSolution, SolverOptions,
};
use ifo_core::mdp::{softmax_policy, stationary_distribution, tv_distance, uniform_policy, value_iteration, Policy, TabularMdp};
use ifo_core::rng::{derive_seed, stream, Purpose};

use crate::config::{Algorithm, ExperimentConfig};
use crate::BenchError;

/// One `(beta, n_e, n_i, algorithm, seed)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub beta: f64,
    pub n_e: usize,
    pub n_i: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub tv: f64,
    pub wall_time_ms: f64,
    pub solver_iterations: u64,
    pub converged: bool,
}

/// The environment and data shared by every cell of one `(beta, seed)`.
///
/// Datasets are drawn once at the largest requested size. Draws are sequential and
/// i.i.d., so a prefix of length `n` is exactly the dataset a run of size `n` would draw.
pub struct World {
    pub mdp: TabularMdp,
    pub expert: Policy,
    pub expert_ss: Array2<f64>,
    demos: StateOnlyDataset,
    imperfect: LabeledDataset,
}

impl World {
    pub fn new(config: &ExperimentConfig, beta: f64, seed: u64, max_e: usize, max_i: usize) -> Result<Self, BenchError> {
        let params = MdpGenParams { beta, seed: derive_seed(config.master_seed, seed, Purpose::Mdp), ..Default::default() };
        let mdp = generate_random_mdp(&params)?;
        let expert = softmax_policy(&value_iteration(&mdp, 1e-10)?, config.expert_temperature)?;
        let expert_ss = stationary_distribution(&mdp, &expert)?.d_ss;
        let mut rng = stream(config.master_seed, seed, Purpose::ExpertData);
        let demos = sample_expert_dataset(&mdp, &expert, max_e, &mut rng)?;
        let mut rng = stream(config.master_seed, seed, Purpose::ImperfectData);
        let imperfect = sample_imperfect_dataset(&mdp, &uniform_policy(&mdp), max_i, &mut rng)?;
        Ok(Self { mdp, expert, expert_ss, demos, imperfect })
    }
}

/// `TV(d_pi(s, s'), d_expert(s, s'))` under the true dynamics.
pub fn evaluate(mdp: &TabularMdp, policy: &Policy, expert_ss: &Array2<f64>) -> Result<f64, BenchError> {
    let d = stationary_distribution(mdp, policy)?;
    Ok(tv_distance(&d.d_ss, expert_ss)?.clamp(0.0, 1.0))
}

struct Inputs {
    demos: StateOnlyDataset,
    imperfect: LabeledDataset,
    model: EmpiricalModel,
    ratio: LogRatioTable,
}

struct Outcome {
    policy: Policy,
    iterations: u64,
    converged: bool,
}

/// Extracts a policy from a DICE solve. A solve that stops early still yields weights; one
/// that cannot produce any falls back to behavior cloning.
fn dice_outcome(model: &EmpiricalModel, result: ifo_core::Result<DualSolution>, fallback: &Policy) -> Outcome {
    let sol = match result {
        Ok(sol) => sol,
        Err(ifo_core::Error::NotConverged(sol)) => *sol,
        Err(_) => return Outcome { policy: fallback.clone(), iterations: 0, converged: false },
    };
    match extract_policy(model, &sol.w_sa) {
        Ok(policy) => Outcome { policy, iterations: sol.iterations as u64, converged: sol.converged },
        Err(_) => Outcome { policy: fallback.clone(), iterations: sol.iterations as u64, converged: false },
    }
}

fn run_algorithm(config: &ExperimentConfig, seed: u64, inputs: &Inputs, algorithm: Algorithm) -> Result<Outcome, BenchError> {
    let opts = SolverOptions::with_alpha(config.alpha);
    let bc = || bc_policy(&inputs.imperfect);
    let outcome = match algorithm {
        Algorithm::Bc => Outcome { policy: bc(), iterations: 0, converged: true },
        Algorithm::Bco => {
            let idm = fit_idm(&inputs.imperfect, 0.0)?;
            Outcome { policy: bco_policy(&inputs.demos, &idm)?, iterations: 0, converged: true }
        }
        Algorithm::Demodicefo => {
            let idm = fit_idm(&inputs.imperfect, 0.0)?;
            let mut rng = stream(config.master_seed, seed, Purpose::ActionFill);
            let filled = fill_actions(&inputs.demos, &idm, FillMode::Sample, &mut rng)?;
            let result = demodicefo_solve(&inputs.model, &filled, config.smoothing, config.clip, &opts);
            dice_outcome(&inputs.model, result, &bc())
        }
        Algorithm::Opolo => dice_outcome(&inputs.model, opolo_tabular_solve(&inputs.model, &inputs.ratio, &opts), &bc()),
        Algorithm::Lobsdice => dice_outcome(&inputs.model, solve_ld_double(&inputs.model, &inputs.ratio, &opts), &bc()),
    };
    Ok(outcome)
}

/// Runs every `(n_e, n_i, algorithm)` of `config` on the world of `(beta, seed)`, in
/// canonical order.
pub fn run_seed(config: &ExperimentConfig, beta: f64, seed: u64) -> Result<Vec<RunRecord>, BenchError> {
    let (_, n_es, n_is, algorithms) = config.axes();
    run_seed_on(config, beta, seed, &n_es, &n_is, &algorithms)
}

fn run_seed_on(
    config: &ExperimentConfig,
    beta: f64,
    seed: u64,
    n_es: &[usize],
    n_is: &[usize],
    algorithms: &[Algorithm],
) -> Result<Vec<RunRecord>, BenchError> {
    let max_e = n_es.iter().copied().max().unwrap_or(1);
    let max_i = n_is.iter().copied().max().unwrap_or(1);
    let world = World::new(config, beta, seed, max_e, max_i)?;
    let mut records = Vec::with_capacity(n_es.len() * n_is.len() * algorithms.len());
    for &n_e in n_es {
        for &n_i in n_is {
            let demos = world.demos.truncated(n_e);
            let imperfect = world.imperfect.truncated(n_i);
            let model = build_empirical_model(&imperfect, world.mdp.initial_dist(), world.mdp.discount())?;
            let ratio = empirical_log_ratio(&demos, &imperfect, config.smoothing, config.clip)?;
            let inputs = Inputs { demos, imperfect, model, ratio };
            for &algorithm in algorithms {
                let start = Instant::now();
                let outcome = run_algorithm(config, seed, &inputs, algorithm)?;
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                records.push(RunRecord {
                    beta,
                    n_e,
                    n_i,
                    algorithm,
                    seed,
                    tv: evaluate(&world.mdp, &outcome.policy, &world.expert_ss)?,
                    wall_time_ms: if config.record_timing { elapsed } else { 0.0 },
                    solver_iterations: outcome.iterations,
                    converged: outcome.converged,
                });
            }
        }
    }
    Ok(records)
}

/// A single grid cell. Produces the same record as the corresponding entry of
/// [`crate::run_grid`].
pub fn run_cell(
    config: &ExperimentConfig,
    beta: f64,
    n_e: usize,
    n_i: usize,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunRecord, BenchError> {
    config.validate()?;
    if !(beta > 0.0 && beta <= 1.0) || n_e == 0 || n_i == 0 {
        return Err(BenchError::Config(format!("invalid cell beta={beta} n_e={n_e} n_i={n_i}")));
    }
    let mut records = run_seed_on(config, beta, seed, &[n_e], &[n_i], &[algorithm])?;
    Ok(records.pop().expect("one record per cell"))
}
