use super::*;
use crate::baselines::bc_policy;
use crate::mdp::{stationary_distribution, tv_distance, TabularMdp};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const E: f64 = std::f64::consts::E;

/// Dense synthetic model: every transition and every (s, a) has positive mass.
fn dense_model(rng: &mut ChaCha8Rng, n: usize, n_actions: usize) -> EmpiricalModel {
    let mut t = Array3::zeros((n, n_actions, n));
    for s in 0..n {
        for a in 0..n_actions {
            let row: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for s2 in 0..n {
                t[[s, a, s2]] = row[s2] / total;
            }
        }
    }
    let mut d = Array2::from_shape_fn((n, n_actions), |_| 0.1 + rng.random::<f64>());
    d /= d.sum();
    let mut p0 = Array1::zeros(n);
    p0[0] = 1.0;
    EmpiricalModel::from_parts(t, d, p0, 0.9).unwrap()
}

fn random_ratio(rng: &mut ChaCha8Rng, n: usize) -> LogRatioTable {
    LogRatioTable::new(Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0)), 20.0).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-scale..scale))
}

fn random_table(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |_| rng.random_range(-scale..scale))
}

/// Population double form written out with plain loops.
fn oracle_ld_double(m: &EmpiricalModel, r: &LogRatioTable, alpha: f64, mu: &Array2<f64>, nu: &Array1<f64>) -> f64 {
    let (n, na, g) = (m.n_states(), m.n_actions(), m.gamma());
    let t = m.t_hat();
    let mut v = 0.0;
    for s in 0..n {
        v += (1.0 - g) * m.p0()[s] * nu[s];
        for s2 in 0..n {
            v += m.d_i_ss()[[s, s2]] * (r.r[[s, s2]] + mu[[s, s2]] - 1.0).exp();
        }
        for a in 0..na {
            let mut e = -nu[s];
            for s2 in 0..n {
                e += t[[s, a, s2]] * (-mu[[s, s2]] + g * nu[s2]);
            }
            v += alpha * m.d_i_sa()[[s, a]] * (e / alpha - 1.0).exp();
        }
    }
    v
}

/// Per-sample log-sum-exp single form written out with plain loops.
fn oracle_fd_single(m: &EmpiricalModel, r: &LogRatioTable, alpha: f64, nu: &Array1<f64>) -> f64 {
    let (n, na, g) = (m.n_states(), m.n_actions(), m.gamma());
    let mut inner = 0.0;
    for s in 0..n {
        for a in 0..na {
            for s2 in 0..n {
                let x = m.d_i_sa()[[s, a]] * m.t_hat()[[s, a, s2]];
                inner += x * ((r.r[[s, s2]] + g * nu[s2] - nu[s]) / (1.0 + alpha)).exp();
            }
        }
    }
    (1.0 - g) * m.p0().dot(nu) + (1.0 + alpha) * inner.ln()
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn assert_rel(a: f64, b: f64, tol: f64, what: &str) {
    let scale = a.abs().max(b.abs()).max(1.0);
    assert!((a - b).abs() <= tol * scale, "{what}: {a} vs {b}");
}

fn max_state_tv(p: &Policy, q: &Policy) -> f64 {
    p.probs()
        .outer_iter()
        .zip(q.probs().outer_iter())
        .map(|(a, b)| 0.5 * a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[test]
fn zero_point_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = dense_model(&mut rng, 4, 2);
    let r = LogRatioTable::zeros(4);
    let (mu, nu) = (Array2::zeros((4, 4)), Array1::zeros(4));
    assert_rel(loss_ld_double(&m, &r, 1.0, &mu, &nu).unwrap(), 2.0 / E, 1e-14, "ld_double");
    assert_rel(loss_ld_single(&m, &r, 0.5, &nu).unwrap(), 1.5 / E, 1e-14, "ld_single");
    assert!(loss_fd_single(&m, &r, 0.5, &nu).unwrap().abs() < 1e-14);
    let (w_sa, w_ss) = closed_form_w(&m, &r, 0.3, &mu, &nu).unwrap();
    assert!(w_sa.iter().chain(w_ss.iter()).all(|&w| (w - 1.0 / E).abs() < 1e-15));
    assert_eq!(mu_closed_form(&nu, &r, 0.3, 0.9).unwrap(), mu);
}

#[test]
fn losses_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let m = dense_model(&mut rng, 5, 3);
        let r = random_ratio(&mut rng, 5);
        let alpha = rng.random_range(0.05..2.0);
        let mu = random_table(&mut rng, 5, 1.0);
        let nu = random_vec(&mut rng, 5, 1.0);
        assert_rel(loss_ld_double(&m, &r, alpha, &mu, &nu).unwrap(), oracle_ld_double(&m, &r, alpha, &mu, &nu), 1e-12, "ld_double");
        assert_rel(loss_fd_single(&m, &r, alpha, &nu).unwrap(), oracle_fd_single(&m, &r, alpha, &nu), 1e-12, "fd_single");
    }
}

#[test]
fn single_form_is_double_form_at_mu_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let m = dense_model(&mut rng, 6, 2);
        let r = random_ratio(&mut rng, 6);
        let alpha = rng.random_range(0.01..1.0);
        let nu = random_vec(&mut rng, 6, 2.0);
        let mu = mu_closed_form(&nu, &r, alpha, m.gamma()).unwrap();
        let double = loss_ld_double_sampled(&m, &r, alpha, &mu, &nu).unwrap();
        assert_rel(loss_ld_single(&m, &r, alpha, &nu).unwrap(), double, 1e-10, "substitution");
        // Local minimality in mu.
        for _ in 0..100 {
            let noise = random_table(&mut rng, 6, 1e-3);
            assert!(loss_ld_double_sampled(&m, &r, alpha, &(&mu + &noise), &nu).unwrap() >= double - 1e-15);
        }
    }
}

#[test]
fn mu_closed_form_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = random_ratio(&mut rng, 3);
    let nu = random_vec(&mut rng, 3, 1.0);
    let mu = mu_closed_form(&nu, &r, 1e8, 0.9).unwrap();
    assert!((&mu + &r.r).iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn closed_form_alpha_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = dense_model(&mut rng, 4, 2);
    let r = random_ratio(&mut rng, 4);
    let mu = random_table(&mut rng, 4, 0.5);
    let nu = random_vec(&mut rng, 4, 0.5);
    let (w1, _) = closed_form_w(&m, &r, 0.5, &mu, &nu).unwrap();
    let (w2, _) = closed_form_w(&m, &r, 1.0, &mu, &nu).unwrap();
    for (a, b) in w1.iter().zip(w2.iter()) {
        assert!(((a.ln() + 1.0) / 2.0 - (b.ln() + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn closed_form_is_stationary_for_lagrangian() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = dense_model(&mut rng, 4, 3);
    let r = random_ratio(&mut rng, 4);
    let alpha = 0.2;
    let mu = random_table(&mut rng, 4, 0.5);
    let nu = random_vec(&mut rng, 4, 0.5);
    let (w_sa, w_ss) = closed_form_w(&m, &r, alpha, &mu, &nu).unwrap();
    for idx in [(0, 0), (2, 1), (3, 2)] {
        let d = central_diff(
            |x| {
                let mut w = w_sa.clone();
                w[idx] = x;
                lagrangian_ld(&m, &r, alpha, &w, &w_ss, &mu, &nu).unwrap()
            },
            w_sa[idx],
        );
        assert!(d.abs() < 1e-7, "w_sa {idx:?}: {d}");
        let d = central_diff(
            |x| {
                let mut w = w_ss.clone();
                w[idx] = x;
                lagrangian_ld(&m, &r, alpha, &w_sa, &w, &mu, &nu).unwrap()
            },
            w_ss[idx],
        );
        assert!(d.abs() < 1e-7, "w_ss {idx:?}: {d}");
    }
}

#[test]
fn gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = dense_model(&mut rng, 5, 2);
    let r = random_ratio(&mut rng, 5);
    let alpha = 0.3;
    let mu = random_table(&mut rng, 5, 0.5);
    let nu = random_vec(&mut rng, 5, 0.5);
    let r_sa = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));

    type NuLoss<'a> = Box<dyn Fn(&Array1<f64>) -> f64 + 'a>;
    type NuGrad<'a> = Box<dyn Fn(&Array1<f64>) -> Array1<f64> + 'a>;
    let nu_forms: Vec<(&str, NuLoss, NuGrad)> = vec![
        ("ld_single", Box::new(|v| loss_ld_single(&m, &r, alpha, v).unwrap()), Box::new(|v| grad_ld_single(&m, &r, alpha, v).unwrap())),
        ("fd_single", Box::new(|v| loss_fd_single(&m, &r, alpha, v).unwrap()), Box::new(|v| grad_fd_single(&m, &r, alpha, v).unwrap())),
        ("demodice", Box::new(|v| loss_demodice(&m, &r_sa, alpha, v).unwrap()), Box::new(|v| grad_demodice(&m, &r_sa, alpha, v).unwrap())),
        ("opolo", Box::new(|v| loss_opolo(&m, &r, v).unwrap()), Box::new(|v| grad_opolo(&m, &r, v).unwrap())),
    ];
    for (name, f, g) in &nu_forms {
        let grad = g(&nu);
        for i in 0..5 {
            let fd = central_diff(
                |x| {
                    let mut v = nu.clone();
                    v[i] = x;
                    f(&v)
                },
                nu[i],
            );
            assert_rel(grad[i], fd, 1e-6, name);
        }
    }

    type DLoss = fn(&EmpiricalModel, &LogRatioTable, f64, &Array2<f64>, &Array1<f64>) -> Result<f64>;
    type DGrad = fn(&EmpiricalModel, &LogRatioTable, f64, &Array2<f64>, &Array1<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
    let double_forms: [(&str, DLoss, DGrad); 3] = [
        ("ld_double", loss_ld_double, grad_ld_double),
        ("ld_double_sampled", loss_ld_double_sampled, grad_ld_double_sampled),
        ("fd_double", loss_fd_double, grad_fd_double),
    ];
    for (name, f, g) in double_forms {
        let (gmu, gnu) = g(&m, &r, alpha, &mu, &nu).unwrap();
        for i in 0..5 {
            let fd = central_diff(
                |x| {
                    let mut v = nu.clone();
                    v[i] = x;
                    f(&m, &r, alpha, &mu, &v).unwrap()
                },
                nu[i],
            );
            assert_rel(gnu[i], fd, 1e-6, name);
            for j in 0..5 {
                let fd = central_diff(
                    |x| {
                        let mut v = mu.clone();
                        v[[i, j]] = x;
                        f(&m, &r, alpha, &v, &nu).unwrap()
                    },
                    mu[[i, j]],
                );
                assert_rel(gmu[[i, j]], fd, 1e-6, name);
            }
        }
    }
}

#[test]
fn log_sum_exp_forms_are_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = dense_model(&mut rng, 5, 2);
    let r = random_ratio(&mut rng, 5);
    let nu = random_vec(&mut rng, 5, 1.0);
    let mu = random_table(&mut rng, 5, 1.0);
    let base = loss_fd_single(&m, &r, 0.01, &nu).unwrap();
    for c in [-3.0, 0.5, 17.3, 1e3] {
        let shifted = loss_fd_single(&m, &r, 0.01, &(&nu + c)).unwrap();
        assert!((base - shifted).abs() <= 1e-12 * base.abs().max(1.0) * c.abs().max(1.0), "{c}");
        let d1 = loss_fd_double(&m, &r, 0.1, &mu, &nu).unwrap();
        let d2 = loss_fd_double(&m, &r, 0.1, &(&mu + c), &(&nu - 0.5 * c)).unwrap();
        assert!((d1 - d2).abs() < 1e-10 * c.abs().max(1.0), "{c}");
    }
    // Large advantages do not overflow the gradient.
    let g = grad_fd_single(&m, &r, 0.01, &(&nu * 1e4)).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn overflow_guard_on_exponential_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = dense_model(&mut rng, 3, 2);
    let r = LogRatioTable::zeros(3);
    let nu = Array1::from(vec![-1e4, 0.0, 0.0]);
    assert!(matches!(loss_ld_single(&m, &r, 0.01, &nu), Err(Error::ExponentOverflow(_))));
    assert!(loss_fd_single(&m, &r, 0.01, &nu).unwrap().is_finite());
}

#[test]
fn sampled_double_solution_satisfies_mu_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let m = dense_model(&mut rng, 6, 3);
        let r = random_ratio(&mut rng, 6);
        let sol = solve_ld_double_sampled(&m, &r, &SolverOptions::default()).unwrap();
        let mu = sol.mu.unwrap();
        let expected = mu_closed_form(&sol.nu, &r, 0.01, m.gamma()).unwrap();
        assert!((&mu - &expected).iter().all(|v| v.abs() < 1e-5));
        let single = solve_ld_single(&m, &r, &SolverOptions::default()).unwrap();
        assert_rel(sol.loss, single.loss, 1e-8, "double vs single");
    }
}

#[test]
fn population_solution_is_flow_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let m = dense_model(&mut rng, 6, 3);
        let r = random_ratio(&mut rng, 6);
        let sol = solve_ld_double(&m, &r, &SolverOptions::default()).unwrap();
        assert!(sol.converged && sol.grad_inf_norm < 1e-8);
        let d = m.d_i_sa() * &sol.w_sa;
        assert!(crate::mdp::flow_residual(m.t_hat(), m.p0(), m.gamma(), &d) < 1e-4);
        assert!((d.sum() - 1.0).abs() < 1e-6);
        // Marginalization: the transition weights reproduce T_hat applied to d.
        let d_bar = crate::mdp::marginalize(m.t_hat(), &d);
        let implied = m.d_i_ss() * &sol.w_ss;
        assert!((&d_bar - &implied).iter().all(|v| v.abs() < 1e-6));
    }
}

#[test]
fn population_double_on_deterministic_model_has_mu_closed_form() {
    // With one successor per (s, a), averaging under T_hat is a single sample.
    let n = 4;
    let mut t = Array3::zeros((n, 2, n));
    for s in 0..n {
        t[[s, 0, (s + 1) % n]] = 1.0;
        t[[s, 1, (s + 2) % n]] = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut d = Array2::from_shape_fn((n, 2), |_| 0.2 + rng.random::<f64>());
    d /= d.sum();
    let p0 = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
    let m = EmpiricalModel::from_parts(t, d, p0, 0.9).unwrap();
    let r = random_ratio(&mut rng, n);
    let sol = solve_ld_double(&m, &r, &SolverOptions::with_alpha(0.1)).unwrap();
    let mu = sol.mu.unwrap();
    let expected = mu_closed_form(&sol.nu, &r, 0.1, 0.9).unwrap();
    for s in 0..n {
        for s2 in [(s + 1) % n, (s + 2) % n] {
            assert!((mu[[s, s2]] - expected[[s, s2]]).abs() < 1e-5);
        }
    }
}

fn exact_model(seed: u64, beta: f64) -> (TabularMdp, EmpiricalModel, Policy) {
    use crate::datagen::{generate_random_mdp, MdpGenParams};
    use crate::mdp::{softmax_policy, uniform_policy, value_iteration};
    let mdp = generate_random_mdp(&MdpGenParams { beta, seed, ..Default::default() }).unwrap();
    let occ = stationary_distribution(&mdp, &uniform_policy(&mdp)).unwrap();
    let expert = softmax_policy(&value_iteration(&mdp, 1e-10).unwrap(), 0.01).unwrap();
    (mdp.clone(), EmpiricalModel::from_exact(&mdp, &occ).unwrap(), expert)
}

#[test]
fn matching_data_gives_unit_weights() {
    let (_, m, _) = exact_model(3, 1.0);
    let r = LogRatioTable::zeros(20);
    let sol = solve_ld_double(&m, &r, &SolverOptions::default()).unwrap();
    for (&w, &d) in sol.w_sa.iter().zip(m.d_i_sa().iter()) {
        if d > 0.0 {
            assert!((w - 1.0).abs() < 1e-6, "{w}");
        }
    }
    for (&w, &d) in sol.w_ss.iter().zip(m.d_i_ss().iter()) {
        if d > 0.0 {
            assert!((w - 1.0).abs() < 1e-6, "{w}");
        }
    }
    // The exponential terms sum to 1 + alpha; the linear term cancels them at the optimum.
    let linear = (1.0 - m.gamma()) * m.p0().dot(&sol.nu);
    assert_rel(sol.loss - linear, 1.01, 1e-6, "exponential terms");
    assert!(sol.loss.abs() < 1e-6, "{}", sol.loss);
}

#[test]
fn fd_and_ld_single_agree_up_to_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let m = dense_model(&mut rng, 8, 3);
        let r = random_ratio(&mut rng, 8);
        let ld = solve_ld_single(&m, &r, &SolverOptions::default()).unwrap();
        let fd = solve_fd_single(&m, &r, &SolverOptions::default()).unwrap();
        assert_rel(ld.loss, fd.loss, 1e-5, "minimum");
        let diff = &fd.nu - &ld.nu;
        let spread = diff.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - diff.fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread < 1e-4, "{spread}");
        let p_ld = extract_policy(&m, &ld.w_sa).unwrap();
        let p_fd = extract_policy(&m, &fd.w_sa).unwrap();
        assert!(max_state_tv(&p_ld, &p_fd) < 1e-3);
    }
}

#[test]
fn fd_weights_ignore_shift_of_nu() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = dense_model(&mut rng, 6, 3);
    let r = random_ratio(&mut rng, 6);
    let fd = solve_fd_single(&m, &r, &SolverOptions::default()).unwrap();
    let (_, w1) = fd_single_weights(&m, &r, 0.01, &fd.nu).unwrap();
    let (_, w2) = fd_single_weights(&m, &r, 0.01, &(&fd.nu + 17.3)).unwrap();
    let p1 = extract_policy(&m, &w1).unwrap();
    let p2 = extract_policy(&m, &w2).unwrap();
    assert!((p1.probs() - p2.probs()).iter().all(|v| v.abs() < 1e-10));

    let init = random_vec(&mut rng, 6, 1.0);
    let a = solve_fd_single(&m, &r, &SolverOptions { init: Init::Nu(init.clone()), ..Default::default() }).unwrap();
    let b = solve_fd_single(&m, &r, &SolverOptions { init: Init::Nu(&init + 5.0), ..Default::default() }).unwrap();
    let pa = extract_policy(&m, &a.w_sa).unwrap();
    let pb = extract_policy(&m, &b.w_sa).unwrap();
    assert!(max_state_tv(&pa, &pb) < 1e-8);
}

#[test]
fn fd_double_matches_ld_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..3 {
        let m = dense_model(&mut rng, 5, 2);
        let r = random_ratio(&mut rng, 5);
        let opts = SolverOptions::with_alpha(0.1);
        let ld = solve_ld_double(&m, &r, &opts).unwrap();
        let fd = solve_fd_double(&m, &r, &opts).unwrap();
        assert_rel(ld.loss, fd.loss, 1e-4, "minimum");
        // At the exponential-form optimum both expectations equal one, so the two
        // objectives coincide there.
        let at_ld = loss_fd_double(&m, &r, 0.1, ld.mu.as_ref().unwrap(), &ld.nu).unwrap();
        assert_rel(at_ld, ld.loss, 1e-6, "fd at ld optimum");
        let p_ld = extract_policy(&m, &ld.w_sa).unwrap();
        let p_fd = extract_policy(&m, &fd.w_sa).unwrap();
        assert!(max_state_tv(&p_ld, &p_fd) < 1e-3);
    }
}

#[test]
fn gradient_descent_reaches_the_newton_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let m = dense_model(&mut rng, 4, 2);
    let r = random_ratio(&mut rng, 4);
    let newton = solve_fd_single(&m, &r, &SolverOptions::with_alpha(1.0)).unwrap();
    let gd = solve_fd_single(
        &m,
        &r,
        &SolverOptions { alpha: 1.0, step_rule: StepRule::GradientDescent, grad_tol: 1e-9, ..Default::default() },
    )
    .unwrap();
    assert_rel(newton.loss, gd.loss, 1e-10, "loss");
}

#[test]
fn non_convergence_and_bad_input_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = dense_model(&mut rng, 4, 2);
    let r = random_ratio(&mut rng, 4);
    let opts = SolverOptions { max_iters: 1, ..Default::default() };
    match solve_ld_double(&m, &r, &opts) {
        Err(Error::NotConverged(sol)) => {
            assert!(!sol.converged);
            assert_eq!(sol.iterations, 1);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
    assert!(solve_fd_single(&m, &r, &SolverOptions::with_alpha(0.0)).is_err());
    assert!(solve_fd_single(&m, &LogRatioTable::zeros(3), &SolverOptions::default()).is_err());
}

#[test]
fn infeasible_data_is_rejected() {
    let data = LabeledDataset::new(3, 2, vec![(1, 0, 2), (2, 1, 1)]).unwrap();
    let m = crate::datagen::build_empirical_model(&data, &Array1::from(vec![1.0, 0.0, 0.0]), 0.9).unwrap();
    let r = LogRatioTable::zeros(3);
    assert!(matches!(solve_ld_double(&m, &r, &SolverOptions::default()), Err(Error::Infeasible)));
    assert!(matches!(solve_fd_single(&m, &r, &SolverOptions::default()), Err(Error::Infeasible)));
}

#[test]
fn dead_end_pairs_are_pruned() {
    // (0, 1) leads to state 2, which never appears as a source.
    let data = LabeledDataset::new(3, 2, vec![(0, 0, 1), (1, 0, 0), (0, 1, 2), (1, 1, 1)]).unwrap();
    let m = crate::datagen::build_empirical_model(&data, &Array1::from(vec![1.0, 0.0, 0.0]), 0.9).unwrap();
    let r = LogRatioTable::zeros(3);
    let sol = solve_ld_double(&m, &r, &SolverOptions::default()).unwrap();
    assert_eq!(sol.w_sa[[0, 1]], 0.0);
    let pi = extract_policy(&m, &sol.w_sa).unwrap();
    assert_eq!(pi.probs()[[0, 0]], 1.0);
    let reference = m.reference_sa();
    let d = &reference * &sol.w_sa;
    assert!(crate::mdp::flow_residual(m.t_hat(), m.p0(), m.gamma(), &d) < 1e-6);
}

#[test]
fn extraction_examples() {
    let data = LabeledDataset::new(3, 2, vec![(0, 0, 1), (0, 1, 1), (1, 1, 0), (1, 0, 0)]).unwrap();
    let m = crate::datagen::build_empirical_model(&data, &Array1::from(vec![1.0, 0.0, 0.0]), 0.9).unwrap();
    assert_eq!(extract_policy(&m, &Array2::ones((3, 2))).unwrap(), bc_policy(&data));
    let mut w = Array2::zeros((3, 2));
    w[[0, 1]] = 1.0;
    let pi = extract_policy(&m, &w).unwrap();
    assert_eq!(pi.probs().row(0).to_vec(), vec![0.0, 1.0]);
    assert_eq!(pi.probs().row(2).to_vec(), vec![0.5, 0.5]);
    assert!(extract_policy(&m, &Array2::from_elem((3, 2), -1.0)).is_err());
}

#[test]
fn weighted_bc_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let triples: Vec<_> = (0..200).map(|_| (rng.random_range(0..4), rng.random_range(0..3), rng.random_range(0..4))).collect();
    let data = LabeledDataset::new(4, 3, triples).unwrap();
    let m = crate::datagen::build_empirical_model(&data, &Array1::from(vec![1.0, 0.0, 0.0, 0.0]), 0.9).unwrap();
    assert_eq!(extract_policy_weighted_bc(&data, &Array3::ones((4, 3, 4))).unwrap(), bc_policy(&data));
    let w_tilde = Array3::from_shape_fn((4, 3, 4), |_| rng.random::<f64>());
    let pi = extract_policy_weighted_bc(&data, &w_tilde).unwrap();
    let scaled = extract_policy_weighted_bc(&data, &(&w_tilde * 3.0)).unwrap();
    assert!((pi.probs() - scaled.probs()).iter().all(|v| v.abs() < 1e-15));
    let w_sa = Array2::from_shape_fn((4, 3), |(s, a)| (0..4).map(|s2| m.t_hat()[[s, a, s2]] * w_tilde[[s, a, s2]]).sum());
    let via_model = extract_policy(&m, &w_sa).unwrap();
    assert!((pi.probs() - via_model.probs()).iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn zero_ratios_reduce_to_behavior_cloning() {
    use crate::datagen::{generate_random_mdp, sample_imperfect_dataset, MdpGenParams};
    let mdp = generate_random_mdp(&MdpGenParams { beta: 0.5, seed: 21, ..Default::default() }).unwrap();
    let data = sample_imperfect_dataset(&mdp, &crate::mdp::uniform_policy(&mdp), 5000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let m = crate::datagen::build_empirical_model(&data, mdp.initial_dist(), 0.95).unwrap();
    let bc = bc_policy(&data);
    // Exact reduction to BC needs flow-consistent data.
    let occ = stationary_distribution(&mdp, &crate::mdp::uniform_policy(&mdp)).unwrap();
    let exact = EmpiricalModel::from_exact(&mdp, &occ).unwrap();
    let exact_bc = Policy::from_scores(exact.d_i_sa());
    let opts = SolverOptions::default();
    let demo = demodice_solve_with_ratio(&exact, &Array2::zeros((20, 4)), &opts).unwrap();
    assert!(max_state_tv(&extract_policy(&exact, &demo.w_sa).unwrap(), &exact_bc) < 1e-3);
    let opolo = opolo_tabular_solve(&exact, &LogRatioTable::zeros(20), &opts).unwrap();
    assert!(max_state_tv(&extract_policy(&exact, &opolo.w_sa).unwrap(), &exact_bc) < 1e-3);
    // On the empirical model the solvers still run and stay near BC on average.
    let opolo = opolo_tabular_solve(&m, &LogRatioTable::zeros(20), &opts).unwrap();
    let pi = extract_policy(&m, &opolo.w_sa).unwrap();
    let occ_pi = stationary_distribution(&mdp, &pi).unwrap();
    let occ_bc = stationary_distribution(&mdp, &bc).unwrap();
    assert!(tv_distance(&occ_pi.d_ss, &occ_bc.d_ss).unwrap() < 0.1);
}

#[test]
fn state_action_ratio_examples() {
    let data = LabeledDataset::new(2, 2, vec![(0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0)]).unwrap();
    let m = crate::datagen::build_empirical_model(&data, &Array1::from(vec![1.0, 0.0]), 0.9).unwrap();
    let filled = LabeledDataset::new(2, 2, vec![(0, 0, 1), (1, 0, 0)]).unwrap();
    let r = state_action_log_ratio(&filled, &m, 0.0, 20.0).unwrap();
    assert!((r[[0, 0]] - 2f64.ln()).abs() < 1e-15);
    assert_eq!(r[[0, 1]], -20.0);
    let same = state_action_log_ratio(&data, &m, 1e-3, 20.0).unwrap();
    assert!(same.iter().all(|v| v.abs() < 1e-15));
    assert!(state_action_log_ratio(&LabeledDataset::new(2, 2, vec![]).unwrap(), &m, 0.0, 20.0).is_err());
}

#[test]
fn demodice_matches_lobsdice_without_inverse_dynamics_gap() {
    use crate::baselines::{fill_actions, fit_idm, FillMode};
    use crate::datagen::{empirical_log_ratio, sample_expert_dataset};
    use crate::mdp::{softmax_policy, uniform_policy, value_iteration};
    // Deterministic MDP whose actions reach distinct successors: s -> s + a + 1 (mod 5).
    let (n, na) = (5, 2);
    let mut t = Array3::zeros((n, na, n));
    for s in 0..n {
        for a in 0..na {
            t[[s, a, (s + a + 1) % n]] = 1.0;
        }
    }
    let mut reward = Array2::zeros((n, na));
    reward.row_mut(3).fill(1.0);
    let mdp = TabularMdp::new(t, reward, Array1::from(vec![1.0, 0.0, 0.0, 0.0, 0.0]), 0.95).unwrap();
    let expert = softmax_policy(&value_iteration(&mdp, 1e-10).unwrap(), 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let demos = sample_expert_dataset(&mdp, &expert, 20_000, &mut rng).unwrap();
    let data = sample_imperfect_dataset_for(&mdp, &uniform_policy(&mdp), &mut rng);
    let m = crate::datagen::build_empirical_model(&data, mdp.initial_dist(), 0.95).unwrap();
    let idm = fit_idm(&data, 0.0).unwrap();
    let filled = fill_actions(&demos, &idm, FillMode::Sample, &mut rng).unwrap();
    let opts = SolverOptions::default();
    let demo = demodicefo_solve(&m, &filled, 1e-3, 20.0, &opts).unwrap();
    let r = empirical_log_ratio(&demos, &data, 1e-3, 20.0).unwrap();
    let lobs = solve_ld_double(&m, &r, &opts).unwrap();
    let occ = |w: &Array2<f64>| stationary_distribution(&mdp, &extract_policy(&m, w).unwrap()).unwrap().d_ss;
    assert!(tv_distance(&occ(&demo.w_sa), &occ(&lobs.w_sa)).unwrap() < 0.05);
}

fn sample_imperfect_dataset_for(mdp: &TabularMdp, agent: &Policy, rng: &mut ChaCha8Rng) -> LabeledDataset {
    crate::datagen::sample_imperfect_dataset(mdp, agent, 20_000, rng).unwrap()
}

#[test]
fn exact_inputs_recover_the_expert() {
    use crate::mdp::softmax_policy;
    for (seed, beta) in [(1, 0.01), (2, 0.1), (3, 1.0)] {
        let (mdp, m, expert) = exact_model(seed, beta);
        let _ = softmax_policy;
        let d_e = stationary_distribution(&mdp, &expert).unwrap();
        let r = LogRatioTable::exact(&d_e.d_ss, m.d_i_ss(), 50.0).unwrap();
        let sol = solve_ld_double(&m, &r, &SolverOptions::with_alpha(1e-4)).unwrap();
        let pi = extract_policy(&m, &sol.w_sa).unwrap();
        let tv = tv_distance(&stationary_distribution(&mdp, &pi).unwrap().d_ss, &d_e.d_ss).unwrap();
        assert!(tv < 0.01, "beta {beta}: {tv}");
    }
}

#[test]
fn solution_record_lists_diagnostics() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let m = dense_model(&mut rng, 3, 2);
    let r = random_ratio(&mut rng, 3);
    let sol = solve_fd_single(&m, &r, &SolverOptions::default()).unwrap();
    let text = sol.to_text();
    assert!(text.starts_with("# ifo-dual-solution v1\n"));
    let nu_line = text.lines().find_map(|l| l.strip_prefix("nu = ")).unwrap();
    let nu: Vec<f64> = nu_line.split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(nu, sol.nu.to_vec());
    assert!(text.contains("converged = true"));
}
