//! Numerical checks of the convergence guarantee and its assumptions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::learner::{run_inner_loop, run_trials, HyperParams, Problem, TrialSummary, WeightVector};
use crate::parallel;
use crate::rng::{self, stream, tag};
use crate::stats::mean_se;
use crate::trigger::{oracle_gain, TriggerKind, TriggerPolicy};

/// Step on `∇J` taken by `w ← w − εg`.
///
/// The sampled gradient has mean `½∇J`, so the learning-rate parameter `ε`
/// moves the iterate by `ε/2` along `∇J`.
pub fn effective_step(epsilon: f64) -> f64 {
    0.5 * epsilon
}

/// `maxᵢ (1 − 2·step·λᵢ)²`.
pub fn minimal_rho(eigenvalues: &[f64], step: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|l| (1.0 - 2.0 * step * l).powi(2))
        .fold(0.0, f64::max)
}

/// Smallest admissible decay for learning rate `ε` plus a `1e-6` margin, capped at 1.
pub fn default_rho(eigenvalues: &[f64], epsilon: f64) -> f64 {
    (minimal_rho(eigenvalues, effective_step(epsilon)) + 1e-6).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub phi_min_eig: f64,
    pub phi_max_eig: f64,
    /// `|1 − 2·step·λᵢ|` per eigenvalue.
    pub margins: Vec<f64>,
    pub epsilon_ok: bool,
    pub rho_min_allowed: f64,
    pub rho: f64,
    pub rho_ok: bool,
    /// `ε < 2/λ_max` for the learning rate `ε` whose effective step is `step`.
    pub sufficient_condition: bool,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.phi_min_eig > 0.0 && self.epsilon_ok && self.rho_ok
    }

    pub fn describe(&self) -> String {
        format!(
            "min eigenvalue {:.6e}, max margin {:.6}, epsilon_ok {}, rho {:.9} vs minimum {:.9}, rho_ok {}",
            self.phi_min_eig,
            self.margins.iter().copied().fold(0.0, f64::max),
            self.epsilon_ok,
            self.rho,
            self.rho_min_allowed,
            self.rho_ok
        )
    }
}

/// Step-size and decay admissibility for a spectrum of `Φ`.
pub fn check_assumptions(eigenvalues: &[f64], step: f64, rho: f64) -> AssumptionReport {
    let margins: Vec<f64> = eigenvalues
        .iter()
        .map(|l| (1.0 - 2.0 * step * l).abs())
        .collect();
    let epsilon_ok = margins.iter().all(|&m| m < 1.0);
    let rho_min_allowed = minimal_rho(eigenvalues, step);
    let phi_max_eig = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    AssumptionReport {
        phi_min_eig: eigenvalues.iter().copied().fold(f64::INFINITY, f64::min),
        phi_max_eig,
        margins,
        epsilon_ok,
        rho_min_allowed,
        rho,
        rho_ok: rho <= 1.0 && rho >= rho_min_allowed - 1e-12,
        sufficient_condition: step > 0.0 && 2.0 * step < 2.0 / phi_max_eig,
    }
}

/// Spectrum of the problem's `Φ`, ascending.
pub fn phi_eigenvalues(problem: &Problem) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(problem.objective.phi().clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Unbiased sample covariance of the sampled gradient at fixed `w`.
pub fn estimate_gradient_covariance(
    problem: &Problem,
    w: &WeightVector,
    batch_size: usize,
    batches: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if batches < 2 {
        return Err(Error::InvalidArgument("covariance needs at least two batches".into()));
    }
    let n = problem.dim();
    let mut rng = stream(seed, &[tag::PROBE]);
    let mut mean = DVector::zeros(n);
    let mut m2 = DMatrix::zeros(n, n);
    for i in 0..batches {
        let tuples = problem.env.sample_tuples_with(&mut rng, batch_size);
        let g = problem.gradient(w, &tuples);
        let delta = &g - &mean;
        mean += &delta / (i + 1) as f64;
        let delta2 = &g - &mean;
        m2 += &delta * delta2.transpose();
    }
    let cov = m2 / (batches - 1) as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariancePlugin {
    /// `G` estimated at `w*`.
    Optimum,
    /// Largest `Tr(ΦG)` along the iterates of one reference trial.
    PathMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lhs_estimate: f64,
    pub lhs_se: f64,
    pub rhs_value: f64,
    pub trials: usize,
    pub g_estimate: DMatrix<f64>,
    pub trace_phi_g: f64,
    pub comm_rate_mean: f64,
    pub final_loss_mean: f64,
    pub initial_loss: f64,
    pub optimal_loss: f64,
    pub assumptions: AssumptionReport,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.lhs_estimate <= self.rhs_value + 2.0 * self.lhs_se
    }
}

/// `(1 − ρᴺ)/(1 − ρ)`, or `N` as `ρ → 1`.
pub fn geometric_factor(rho: f64, horizon: usize) -> f64 {
    if (1.0 - rho).abs() < 1e-12 {
        horizon as f64
    } else {
        (1.0 - rho.powi(horizon as i32)) / (1.0 - rho)
    }
}

/// Monte Carlo comparison of `E[λ·Σα/(mN) + J(w_N)]` against
/// `λ + J* + ρᴺ(J(w₀) − J*) + (1−ρᴺ)/(1−ρ)·ε²·Tr(ΦG)`.
pub fn theorem_bound_check(
    problem: &Problem,
    hyper: &HyperParams,
    trigger: &TriggerPolicy,
    trials: usize,
    seed: u64,
    plugin: CovariancePlugin,
    covariance_batches: usize,
) -> Result<BoundReport> {
    if trigger.kind != TriggerKind::Oracle || !trigger.schedule.divide_by_horizon {
        return Err(Error::Unsupported(
            "bound check needs the oracle trigger with the horizon-scaled threshold".into(),
        ));
    }
    if hyper.agents != 2 {
        return Err(Error::Unsupported("bound check is stated for two agents".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let schedule = trigger.schedule;
    let assumptions = check_assumptions(
        &phi_eigenvalues(problem),
        effective_step(hyper.epsilon),
        schedule.rho,
    );
    if !assumptions.passes() {
        return Err(Error::AssumptionViolated(assumptions.describe()));
    }

    let obj = &problem.objective;
    let phi = obj.phi();
    let cov_seed = rng::derive_seed(seed, &[tag::PROBE]);
    let (g_estimate, trace_phi_g) = match plugin {
        CovariancePlugin::Optimum => {
            let g = estimate_gradient_covariance(
                problem,
                obj.optimal_weights(),
                hyper.batch_size,
                covariance_batches,
                cov_seed,
            )?;
            let tr = (phi * &g).trace();
            (g, tr)
        }
        CovariancePlugin::PathMax => {
            let reference = run_inner_loop(problem, hyper, trigger, rng::trial_seed(seed, 0))?;
            let mut points: Vec<WeightVector> =
                reference.rows.iter().map(|r| r.weights.clone()).collect();
            points.push(reference.summary.final_weights.clone());
            let estimates = parallel::map_indexed(points.len(), |i| {
                let g = estimate_gradient_covariance(
                    problem,
                    &points[i],
                    hyper.batch_size,
                    covariance_batches,
                    rng::derive_seed(cov_seed, &[i as u64]),
                )?;
                let tr = (phi * &g).trace();
                Ok((g, tr))
            })?;
            estimates
                .into_iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one iterate")
        }
    };

    let summaries = run_trials(problem, hyper, trigger, trials, seed)?;
    let (lhs_estimate, lhs_se) = performance_metric(&summaries, schedule.lambda)?;
    let j0 = obj.value(&hyper.initial(problem.dim()));
    let j_star = obj.optimal_value();
    let rho = schedule.rho;
    let n = hyper.iterations;
    let rhs_value = schedule.lambda
        + j_star
        + rho.powi(n as i32) * (j0 - j_star)
        + geometric_factor(rho, n) * hyper.epsilon.powi(2) * trace_phi_g;

    Ok(BoundReport {
        lhs_estimate,
        lhs_se,
        rhs_value,
        trials,
        g_estimate,
        trace_phi_g,
        comm_rate_mean: mean_se(&summaries.iter().map(|s| s.comm_rate()).collect::<Vec<_>>()).0,
        final_loss_mean: mean_se(&summaries.iter().map(|s| s.final_loss).collect::<Vec<_>>()).0,
        initial_loss: j0,
        optimal_loss: j_star,
        assumptions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityPoint {
    pub w: WeightVector,
    /// `E[α·J(w−εg)]`.
    pub lhs: f64,
    /// `E[α]·E[J(w−εg)]`.
    pub rhs: f64,
    /// Standard error of `lhs − rhs`.
    pub se: f64,
    pub alpha_rate: f64,
    pub draws: usize,
}

impl InequalityPoint {
    pub fn passed(&self) -> bool {
        self.lhs - self.rhs <= 2.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub threshold: f64,
    pub points: Vec<InequalityPoint>,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.points.iter().all(InequalityPoint::passed)
    }
}

/// Tests `E[α·J(w−εg)] ≤ E[α]·E[J(w−εg)]` where `α` indicates
/// `J(w−εg) − J(w) ≤ −threshold`, at `points` iterates `w* + U[−1,1]ⁿ`.
pub fn check_key_inequality(
    problem: &Problem,
    hyper: &HyperParams,
    threshold: f64,
    points: usize,
    draws: usize,
    seed: u64,
) -> Result<InequalityReport> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two gradient draws".into()));
    }
    let obj = &problem.objective;
    let mut rng = stream(seed, &[tag::INIT_VALUE]);
    let iterates: Vec<WeightVector> = (0..points)
        .map(|_| obj.optimal_weights() + DVector::from_fn(problem.dim(), |_, _| rng.random_range(-1.0..1.0)))
        .collect();

    let points = parallel::map_indexed(iterates.len(), |i| {
        let w = &iterates[i];
        let j_w = obj.value(w);
        let mut draw_rng = stream(seed, &[tag::PROBE, i as u64]);
        let mut alphas = Vec::with_capacity(draws);
        let mut stepped = Vec::with_capacity(draws);
        for _ in 0..draws {
            let tuples = problem.env.sample_tuples_with(&mut draw_rng, hyper.batch_size);
            let g = problem.gradient(w, &tuples);
            let gain = oracle_gain(w, &g, hyper.epsilon, obj).value;
            alphas.push(if gain <= -threshold { 1.0 } else { 0.0 });
            stepped.push(j_w + gain);
        }
        let (a_bar, _) = mean_se(&alphas);
        let (j_bar, _) = mean_se(&stepped);
        let products: Vec<f64> = alphas
            .iter()
            .zip(&stepped)
            .map(|(a, j)| (a - a_bar) * (j - j_bar))
            .collect();
        let (cov, se) = mean_se(&products);
        Ok(InequalityPoint {
            w: w.clone(),
            lhs: a_bar * j_bar + cov,
            rhs: a_bar * j_bar,
            se,
            alpha_rate: a_bar,
            draws,
        })
    })?;
    Ok(InequalityReport { threshold, points })
}

/// Mean and standard error of `λ·Σα/(mN) + J(w_N)` over trials.
pub fn performance_metric(records: &[TrialSummary], lambda: f64) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records".into()));
    }
    let values: Vec<f64> = records
        .iter()
        .map(|r| lambda * r.comm_rate() + r.final_loss)
        .collect();
    Ok(mean_se(&values))
}
