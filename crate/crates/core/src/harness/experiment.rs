//! Building a validated problem from a config, plus trajectory and scaling runs.

use nalgebra::{DVector, Matrix2};

use crate::analysis::{self, AssumptionReport};
use crate::error::{Error, Result};
use crate::features::FeatureBasis;
use crate::harness::config::{BasisSpec, EnvironmentSpec, RhoSpec, RunConfig};
use crate::learner::{run_inner_loop, simulate, HyperParams, Problem, RunRecord, ValueFunction};
use crate::mdp::{make_gridworld, make_linear_gaussian, Environment};
use crate::parallel;
use crate::rng::{self, tag};
use crate::stats::{mean_se, median};
use crate::trigger::{ThresholdSchedule, TriggerKind, TriggerPolicy};

/// A config resolved into a fixed problem instance.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub problem: Problem,
    pub hyper: HyperParams,
    pub rho: f64,
    /// Spectrum of `Φ`, ascending.
    pub eigenvalues: Vec<f64>,
    pub assumptions: AssumptionReport,
}

pub fn build_environment(spec: &EnvironmentSpec) -> Result<Environment> {
    match *spec {
        EnvironmentSpec::Grid {
            rows,
            cols,
            goal,
            slip_prob,
        } => make_gridworld(rows, cols, goal, slip_prob),
        EnvironmentSpec::LinearGaussian { a, noise_cov, gamma } => make_linear_gaussian(
            Matrix2::new(a[0], a[1], a[2], a[3]),
            Matrix2::new(noise_cov[0], noise_cov[1], noise_cov[2], noise_cov[3]),
            gamma,
        ),
    }
}

impl Experiment {
    /// Draws `V^current` from the root seed and checks the step-size and decay
    /// assumptions unless the config waives them.
    pub fn build(config: RunConfig) -> Result<Self> {
        let env = build_environment(&config.environment)?;
        let basis = match config.basis {
            BasisSpec::Indicator => {
                let n = env.num_states().ok_or_else(|| {
                    Error::config("basis.kind", "indicator basis needs a finite environment")
                })?;
                FeatureBasis::Indicator(n)
            }
            BasisSpec::Poly2 => FeatureBasis::Quadratic2,
        };
        basis
            .check_compatible(&env)
            .map_err(|e| Error::config("basis.kind", e.to_string()))?;
        let mut init = rng::stream(config.seed, &[tag::INIT_VALUE]);
        let v_current = ValueFunction::random_initial(&env, &basis, &mut init);
        let problem = Problem::new(env, basis, v_current, config.quadrature)?;

        let h = &config.hyper;
        let initial_weights = match &h.initial_weights {
            None => None,
            Some(v) if v.len() == basis.dim() => Some(DVector::from_vec(v.clone())),
            Some(v) => {
                return Err(Error::config(
                    "hyper.initial_weights",
                    format!("expected {} entries, got {}", basis.dim(), v.len()),
                ))
            }
        };
        let hyper = HyperParams {
            epsilon: h.epsilon,
            batch_size: h.batch_size,
            iterations: h.iterations,
            agents: h.agents,
            projection_bound: h.projection_bound,
            initial_weights,
        };

        let eigenvalues = analysis::phi_eigenvalues(&problem);
        let rho = match config.trigger.rho {
            RhoSpec::Auto => analysis::default_rho(&eigenvalues, hyper.epsilon),
            RhoSpec::Value(r) => r,
        };
        let assumptions = analysis::check_assumptions(
            &eigenvalues,
            analysis::effective_step(hyper.epsilon),
            rho,
        );
        if !assumptions.passes() && !config.analysis.waive_assumptions {
            return Err(Error::AssumptionViolated(assumptions.describe()));
        }
        Ok(Experiment {
            config,
            problem,
            hyper,
            rho,
            eigenvalues,
            assumptions,
        })
    }

    pub fn policy(&self, kind: TriggerKind, lambda: f64) -> Result<TriggerPolicy> {
        let schedule = ThresholdSchedule::new(
            lambda,
            self.rho,
            self.hyper.iterations,
            self.config.trigger.divide_by_horizon,
        )?;
        Ok(TriggerPolicy::new(kind, schedule))
    }

    /// The policy named by `trigger.*`.
    pub fn configured_policy(&self) -> Result<TriggerPolicy> {
        self.policy(self.config.trigger.kind, self.config.trigger.lambda)
    }

    pub fn with_agents(&self, agents: usize) -> HyperParams {
        HyperParams {
            agents,
            ..self.hyper.clone()
        }
    }
}

/// One seeded inner loop with the full per-iteration log.
pub fn run_trajectory(exp: &Experiment, policy: &TriggerPolicy, seed: u64) -> Result<RunRecord> {
    run_inner_loop(&exp.problem, &exp.hyper, policy, rng::trial_seed(seed, 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub agents: usize,
    pub trials: usize,
    /// Median over trials; infinite when at least half never reach the threshold.
    pub median_iterations: f64,
    pub reached_fraction: f64,
    pub comm_rate_mean: f64,
    pub comm_rate_se: f64,
}

/// First `k` with `J(w_k) − J* ≤ tolerance·(J(w₀) − J*)`, counting `w_N` as `k = N`.
pub fn iterations_to_threshold(
    problem: &Problem,
    hyper: &HyperParams,
    policy: &TriggerPolicy,
    tolerance: f64,
    trial_seed: u64,
) -> Result<(Option<usize>, f64)> {
    let obj = &problem.objective;
    let j_star = obj.optimal_value();
    let level = tolerance * (obj.value(&hyper.initial(problem.dim())) - j_star);
    let mut hit = None;
    let summary = simulate(problem, hyper, policy, trial_seed, |row| {
        if hit.is_none() && row.loss - j_star <= level {
            hit = Some(row.k);
        }
    })?;
    if hit.is_none() && summary.final_loss - j_star <= level {
        hit = Some(hyper.iterations);
    }
    Ok((hit, summary.comm_rate()))
}

/// Iterations-to-threshold and communication rate for each agent count.
///
/// Trial `t` uses the same seed for every count, so agent `i`'s data stream
/// is shared between runs with different `m`.
pub fn run_agent_scaling(
    exp: &Experiment,
    policy: &TriggerPolicy,
    agent_counts: &[usize],
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<ScalingRow>> {
    if agent_counts.is_empty() {
        return Err(Error::InvalidArgument("no agent counts".into()));
    }
    agent_counts
        .iter()
        .map(|&m| {
            let hyper = exp.with_agents(m);
            let results = parallel::map_indexed(trials, |t| {
                iterations_to_threshold(
                    &exp.problem,
                    &hyper,
                    policy,
                    tolerance,
                    rng::trial_seed(seed, t as u64),
                )
            })?;
            let iters: Vec<f64> = results
                .iter()
                .map(|(k, _)| k.map_or(f64::INFINITY, |k| k as f64))
                .collect();
            let rates: Vec<f64> = results.iter().map(|(_, r)| *r).collect();
            let (comm_rate_mean, comm_rate_se) = mean_se(&rates);
            Ok(ScalingRow {
                agents: m,
                trials,
                median_iterations: median(&iters),
                reached_fraction: iters.iter().filter(|k| k.is_finite()).count() as f64
                    / trials as f64,
                comm_rate_mean,
                comm_rate_se,
            })
        })
        .collect()
}
