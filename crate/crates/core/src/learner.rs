//! Least-squares value function fitting with distributed stochastic gradients.
//!
//! One round of approximate value iteration fits `wᵀφ(x)` to the Bellman
//! target of a fixed `V^current` by minimizing
//! `J(w) = E_d[(V^updated(x) − wᵀφ(x))²]`. Agents estimate the gradient from
//! local tuples, a trigger decides who transmits, and the server averages
//! whatever it receives.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureBasis;
use crate::mdp::{DataTuple, Environment, State};
use crate::rng::{self, StreamRng};
use crate::trigger::TriggerPolicy;

/// Learned parameter of the linear value approximation.
pub type WeightVector = DVector<f64>;

/// Norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum ValueFunction {
    /// One value per finite state.
    Tabular(Vec<f64>),
    /// `wᵀφ(x)`.
    Linear {
        basis: FeatureBasis,
        weights: WeightVector,
    },
}

impl ValueFunction {
    pub fn zero(env: &Environment, basis: &FeatureBasis) -> Self {
        match env.num_states() {
            Some(n) => ValueFunction::Tabular(vec![0.0; n]),
            None => ValueFunction::Linear {
                basis: *basis,
                weights: DVector::zeros(basis.dim()),
            },
        }
    }

    /// Random initial guess: i.i.d. uniform[0,1] table entries on finite
    /// environments (absorbing states fixed at 0), uniform[0,1] polynomial
    /// weights on continuous ones.
    pub fn random_initial(env: &Environment, basis: &FeatureBasis, rng: &mut StreamRng) -> Self {
        match env.num_states() {
            Some(n) => ValueFunction::Tabular(
                (0..n)
                    .map(|s| {
                        let u: f64 = rng.random();
                        if env.is_absorbing(&State::Cell(s)) {
                            0.0
                        } else {
                            u
                        }
                    })
                    .collect(),
            ),
            None => ValueFunction::Linear {
                basis: *basis,
                weights: DVector::from_fn(basis.dim(), |_, _| rng.random()),
            },
        }
    }

    pub fn eval(&self, x: &State) -> f64 {
        match (self, x) {
            (ValueFunction::Tabular(v), State::Cell(s)) => v[*s],
            (ValueFunction::Linear { basis, weights }, _) => basis.dot(weights.as_slice(), x),
            _ => panic!("tabular value function cannot evaluate {x:?}"),
        }
    }
}

/// How the continuous objective integrates over `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Exact monomial moments; valid because the target is itself a quadratic.
    ClosedForm,
    /// Midpoint rule on an `r × r` grid over `[0,1]²`.
    Midpoint(usize),
}

pub const DEFAULT_QUADRATURE: Quadrature = Quadrature::Midpoint(512);

/// `J(w) = wᵀΦw − 2bᵀw + c₀` with `Φ = E[φφᵀ]`, `b = E[φ·target]`, `c₀ = E[target²]`.
///
/// The three moments are integrated once (finite sum or quadrature), so every
/// evaluation is exact with respect to that integration rule.
#[derive(Debug, Clone)]
pub struct ExactObjective {
    phi: DMatrix<f64>,
    b: DVector<f64>,
    c0: f64,
    w_star: WeightVector,
    j_star: f64,
}

impl ExactObjective {
    pub fn new(
        env: &Environment,
        basis: &FeatureBasis,
        v_current: &ValueFunction,
        quadrature: Quadrature,
    ) -> Result<Self> {
        basis.check_compatible(env)?;
        let n = basis.dim();
        let mut phi = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut c0 = 0.0;
        let mut f = vec![0.0; n];

        let mut accumulate = |x: &State, target: f64, weight: f64, f: &mut [f64]| {
            basis.eval_into(x, f);
            for i in 0..n {
                if f[i] == 0.0 {
                    continue;
                }
                b[i] += weight * f[i] * target;
                for j in i..n {
                    phi[(i, j)] += weight * f[i] * f[j];
                }
            }
            c0 += weight * target * target;
        };

        match env {
            Environment::Grid(g) => {
                let d = 1.0 / g.num_states() as f64;
                for s in 0..g.num_states() {
                    let x = State::Cell(s);
                    let t = env.exact_bellman_target(v_current, &x)?;
                    accumulate(&x, t, d, &mut f);
                }
            }
            Environment::LinearGaussian(_) => {
                let theta = env.bellman_target_coefficients(v_current)?;
                match quadrature {
                    Quadrature::Midpoint(r) => {
                        if r == 0 {
                            return Err(Error::InvalidArgument(
                                "quadrature resolution must be positive".into(),
                            ));
                        }
                        let h = 1.0 / r as f64;
                        let weight = h * h;
                        for i in 0..r {
                            for j in 0..r {
                                let x = State::Point([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                                let t = basis.dot(&theta, &x);
                                accumulate(&x, t, weight, &mut f);
                            }
                        }
                    }
                    Quadrature::ClosedForm => {
                        let exact = basis
                            .exact_second_moment(env)
                            .expect("checked compatible");
                        let th = DVector::from_row_slice(&theta);
                        b = &exact * &th;
                        c0 = th.dot(&b);
                        phi = exact;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                phi[(i, j)] = phi[(j, i)];
            }
        }

        let min_eig = SymmetricEigen::new(phi.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig <= 0.0 {
            return Err(Error::SingularSecondMoment {
                min_eigenvalue: min_eig,
            });
        }
        let w_star = phi
            .clone()
            .cholesky()
            .ok_or(Error::SingularSecondMoment {
                min_eigenvalue: min_eig,
            })?
            .solve(&b);
        let mut obj = ExactObjective {
            phi,
            b,
            c0,
            w_star,
            j_star: 0.0,
        };
        obj.j_star = obj.value(&obj.w_star.clone());
        Ok(obj)
    }

    pub fn value(&self, w: &WeightVector) -> f64 {
        let pw = &self.phi * w;
        w.dot(&pw) - 2.0 * self.b.dot(w) + self.c0
    }

    /// `∇J(w) = 2(Φw − b)`.
    pub fn gradient(&self, w: &WeightVector) -> WeightVector {
        (&self.phi * w - &self.b) * 2.0
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `E_d[φ(x)·V^updated(x)]`.
    pub fn cross_moment(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn optimal_weights(&self) -> &WeightVector {
        &self.w_star
    }

    pub fn optimal_value(&self) -> f64 {
        self.j_star
    }

    /// `(w − w*)ᵀΦ(w − w*)`.
    pub fn excess(&self, w: &WeightVector) -> f64 {
        let d = w - &self.w_star;
        d.dot(&(&self.phi * &d))
    }
}

/// `J(w)` for one Bellman round, with the default integration rule.
pub fn objective_exact(
    w: &WeightVector,
    env: &Environment,
    basis: &FeatureBasis,
    v_current: &ValueFunction,
) -> Result<f64> {
    Ok(ExactObjective::new(env, basis, v_current, DEFAULT_QUADRATURE)?.value(w))
}

/// Minimizer `w* = Φ⁻¹ E_d[φ V^updated]`.
pub fn optimal_weights(
    env: &Environment,
    basis: &FeatureBasis,
    v_current: &ValueFunction,
) -> Result<WeightVector> {
    Ok(ExactObjective::new(env, basis, v_current, DEFAULT_QUADRATURE)?
        .optimal_weights()
        .clone())
}

/// A local gradient estimate produced by one agent at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticGradient {
    pub g: WeightVector,
    pub agent_id: usize,
    pub k: usize,
}

/// `(1/T) Σ_t φ(xᵗ)(wᵀφ(xᵗ) − cᵗ − γ V^current(x₊ᵗ))`.
///
/// Its mean is `Φw − E[φ·target] = ½∇J(w)`; the factor ½ is folded into the
/// step size (see [`crate::analysis::effective_step`]).
pub fn stochastic_gradient(
    w: &WeightVector,
    tuples: &[DataTuple],
    basis: &FeatureBasis,
    v_current: &ValueFunction,
    gamma: f64,
) -> WeightVector {
    let n = basis.dim();
    let mut g = DVector::zeros(n);
    if tuples.is_empty() {
        return g;
    }
    match basis {
        FeatureBasis::Indicator(_) => {
            for t in tuples {
                let State::Cell(s) = t.x else {
                    panic!("indicator basis on continuous state")
                };
                g[s] += w[s] - t.cost - gamma * v_current.eval(&t.x_next);
            }
        }
        FeatureBasis::Quadratic2 => {
            let mut f = vec![0.0; n];
            for t in tuples {
                basis.eval_into(&t.x, &mut f);
                let pred: f64 = f.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
                let residual = pred - t.cost - gamma * v_current.eval(&t.x_next);
                for i in 0..n {
                    g[i] += f[i] * residual;
                }
            }
        }
    }
    g / tuples.len() as f64
}

/// Server step: average the received gradients, or keep `w` if none arrived.
///
/// With two agents this is exactly the four-case rule: a lone transmission
/// steps by `ε g`, a pair steps by `ε (g¹ + g²)/2`.
pub fn server_update(
    w: &WeightVector,
    received: &[StochasticGradient],
    epsilon: f64,
    agents: usize,
    projection_bound: Option<f64>,
) -> Result<WeightVector> {
    if received.len() > agents {
        return Err(Error::InvalidArgument(format!(
            "received {} gradients from {} agents",
            received.len(),
            agents
        )));
    }
    if received.is_empty() {
        return Ok(w.clone());
    }
    let mut sum = DVector::zeros(w.len());
    for g in received {
        sum += &g.g;
    }
    let mut next = w - sum * (epsilon / received.len() as f64);
    if let Some(bound) = projection_bound {
        project_to_ball(&mut next, bound);
    }
    Ok(next)
}

/// Euclidean projection onto `‖w‖ ≤ bound`.
pub fn project_to_ball(w: &mut WeightVector, bound: f64) {
    let norm = w.norm();
    if norm > bound {
        *w *= bound / norm;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub epsilon: f64,
    /// Tuples per agent per iteration (`T`).
    pub batch_size: usize,
    /// Iterations per approximation (`N`).
    pub iterations: usize,
    pub agents: usize,
    pub projection_bound: Option<f64>,
    /// Defaults to zeros.
    pub initial_weights: Option<WeightVector>,
}

impl HyperParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("hyper.epsilon", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("hyper.batch_size", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::config("hyper.iterations", "must be positive"));
        }
        if self.agents == 0 {
            return Err(Error::config("hyper.agents", "must be at least 1"));
        }
        if let Some(m) = self.projection_bound {
            if !(m > 0.0) {
                return Err(Error::config("hyper.projection_bound", "must be positive"));
            }
        }
        if let Some(w0) = &self.initial_weights {
            if w0.len() != dim {
                return Err(Error::config(
                    "hyper.initial_weights",
                    format!("expected {dim} entries, got {}", w0.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn initial(&self, dim: usize) -> WeightVector {
        self.initial_weights
            .clone()
            .unwrap_or_else(|| DVector::zeros(dim))
    }
}

/// Everything fixed during one round of approximate value iteration.
#[derive(Debug, Clone)]
pub struct Problem {
    pub env: Environment,
    pub basis: FeatureBasis,
    pub v_current: ValueFunction,
    pub objective: ExactObjective,
}

impl Problem {
    pub fn new(
        env: Environment,
        basis: FeatureBasis,
        v_current: ValueFunction,
        quadrature: Quadrature,
    ) -> Result<Self> {
        let objective = ExactObjective::new(&env, &basis, &v_current, quadrature)?;
        Ok(Problem {
            env,
            basis,
            v_current,
            objective,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn gradient(&self, w: &WeightVector, tuples: &[DataTuple]) -> WeightVector {
        stochastic_gradient(w, tuples, &self.basis, &self.v_current, self.env.gamma())
    }
}

/// Per-iteration log entry. `weights`, `loss` and `distance` describe the
/// broadcast iterate `w_k`, before the server update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub k: usize,
    pub weights: WeightVector,
    pub loss: f64,
    pub distance: f64,
    pub alphas: Vec<bool>,
    pub gains: Vec<Option<f64>>,
}

/// Outcome of one inner loop without the per-iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub agents: usize,
    pub iterations: usize,
    pub transmissions: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_distance: f64,
    pub final_weights: WeightVector,
}

impl TrialSummary {
    /// `Σ α / (mN)`.
    pub fn comm_rate(&self) -> f64 {
        self.transmissions as f64 / (self.agents * self.iterations) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<IterationRow>,
    pub summary: TrialSummary,
}

impl RunRecord {
    pub fn comm_rate(&self) -> f64 {
        self.summary.comm_rate()
    }

    pub fn final_weights(&self) -> &WeightVector {
        &self.summary.final_weights
    }

    pub fn final_loss(&self) -> f64 {
        self.summary.final_loss
    }

    /// Transmissions in iterations `[from, to)`.
    pub fn transmissions_between(&self, from: usize, to: usize) -> usize {
        self.rows[from..to]
            .iter()
            .map(|r| r.alphas.iter().filter(|&&a| a).count())
            .sum()
    }
}

/// Runs the inner loop and reports each iteration to `observe`.
///
/// Agent `i` at iteration `k` draws its tuples from a stream derived from
/// `(trial_seed, i, k)`, so runs that differ only in trigger, λ, or agent count
/// see the same data.
pub fn simulate(
    problem: &Problem,
    hyper: &HyperParams,
    trigger: &TriggerPolicy,
    trial_seed: u64,
    mut observe: impl FnMut(&IterationRow),
) -> Result<TrialSummary> {
    let n = problem.dim();
    hyper.validate(n)?;
    trigger.validate(hyper.iterations)?;
    let objective = &problem.objective;
    let w_star = objective.optimal_weights();

    let mut w = hyper.initial(n);
    let initial_loss = objective.value(&w);
    let mut transmissions = 0;
    let mut received = Vec::with_capacity(hyper.agents);
    let mut alphas = Vec::with_capacity(hyper.agents);
    let mut gains = Vec::with_capacity(hyper.agents);

    for k in 0..hyper.iterations {
        received.clear();
        alphas.clear();
        gains.clear();
        for agent in 0..hyper.agents {
            let mut data_rng = rng::agent_stream(trial_seed, agent, k);
            let tuples = problem
                .env
                .sample_tuples_with(&mut data_rng, hyper.batch_size);
            let g = problem.gradient(&w, &tuples);
            let gain = trigger.gain(&w, &g, &tuples, &problem.basis, hyper.epsilon, objective)?;
            let fire = if trigger.needs_rng() {
                let mut r = rng::trigger_stream(trial_seed, agent, k);
                trigger.decide(k, gain.as_ref(), Some(&mut r))?
            } else {
                trigger.decide(k, gain.as_ref(), None)?
            };
            alphas.push(fire);
            gains.push(gain.map(|e| e.value));
            if fire {
                transmissions += 1;
                received.push(StochasticGradient { g, agent_id: agent, k });
            }
        }

        let row = IterationRow {
            k,
            weights: w.clone(),
            loss: objective.value(&w),
            distance: (&w - w_star).norm(),
            alphas: alphas.clone(),
            gains: gains.clone(),
        };
        observe(&row);

        w = server_update(&w, &received, hyper.epsilon, hyper.agents, hyper.projection_bound)?;
        let norm = w.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: k, norm });
        }
    }

    Ok(TrialSummary {
        agents: hyper.agents,
        iterations: hyper.iterations,
        transmissions,
        initial_loss,
        final_loss: objective.value(&w),
        final_distance: (&w - w_star).norm(),
        final_weights: w,
    })
}

/// Runs `N` iterations and keeps the full per-iteration log.
pub fn run_inner_loop(
    problem: &Problem,
    hyper: &HyperParams,
    trigger: &TriggerPolicy,
    trial_seed: u64,
) -> Result<RunRecord> {
    let mut rows = Vec::with_capacity(hyper.iterations);
    let summary = simulate(problem, hyper, trigger, trial_seed, |r| rows.push(r.clone()))?;
    Ok(RunRecord { rows, summary })
}

/// Independent trials with seeds `trial_seed(root, 0..trials)`, returned in seed order.
pub fn run_trials(
    problem: &Problem,
    hyper: &HyperParams,
    trigger: &TriggerPolicy,
    trials: usize,
    root_seed: u64,
) -> Result<Vec<TrialSummary>> {
    crate::parallel::map_indexed(trials, |t| {
        simulate(problem, hyper, trigger, rng::trial_seed(root_seed, t as u64), |_| {})
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolve {
    /// Event-triggered distributed SGD.
    Sgd,
    /// Replace the inner loop by the exact minimizer `w*`.
    Exact,
}

/// Repeated rounds of approximate value iteration; returns `V^updated` after each round.
#[allow(clippy::too_many_arguments)]
pub fn run_outer_loop(
    env: &Environment,
    basis: &FeatureBasis,
    hyper: &HyperParams,
    trigger: &TriggerPolicy,
    outer_iterations: usize,
    v_initial: ValueFunction,
    quadrature: Quadrature,
    seed: u64,
    inner: InnerSolve,
) -> Result<Vec<ValueFunction>> {
    if outer_iterations == 0 {
        return Err(Error::InvalidArgument(
            "outer_iterations must be at least 1".into(),
        ));
    }
    let mut v_current = v_initial;
    let mut out = Vec::with_capacity(outer_iterations);
    for round in 0..outer_iterations {
        let problem = Problem::new(env.clone(), *basis, v_current, quadrature)?;
        let w = match inner {
            InnerSolve::Sgd => {
                let seed = rng::derive_seed(seed, &[round as u64]);
                simulate(&problem, hyper, trigger, seed, |_| {})?.final_weights
            }
            InnerSolve::Exact => problem.objective.optimal_weights().clone(),
        };
        let v_next = ValueFunction::Linear {
            basis: *basis,
            weights: w,
        };
        out.push(v_next.clone());
        v_current = v_next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureBasis;
    use crate::mdp::{make_gridworld, make_linear_gaussian};
    use crate::rng::stream;
    use crate::trigger::{ThresholdSchedule, TriggerKind, TriggerPolicy};
    use nalgebra::Matrix2;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid() -> Environment {
        make_gridworld(3, 3, 2, 0.5).unwrap()
    }

    fn lg() -> Environment {
        make_linear_gaussian(Matrix2::new(0.8, -0.2, 0.1, 1.0), Matrix2::identity() * 0.1, 0.9)
            .unwrap()
    }

    fn random_v(env: &Environment, basis: &FeatureBasis, seed: u64) -> ValueFunction {
        ValueFunction::random_initial(env, basis, &mut stream(seed, &[]))
    }

    fn policy(kind: TriggerKind, lambda: f64, rho: f64, n: usize) -> TriggerPolicy {
        TriggerPolicy::new(kind, ThresholdSchedule::new(lambda, rho, n, true).unwrap())
    }

    fn hyper(n: usize, agents: usize) -> HyperParams {
        HyperParams {
            epsilon: 1.0,
            batch_size: 10,
            iterations: n,
            agents,
            projection_bound: None,
            initial_weights: None,
        }
    }

    /// Central differences of J.
    fn fd_gradient(obj: &ExactObjective, w: &WeightVector) -> WeightVector {
        let h = 1e-5;
        DVector::from_fn(w.len(), |i, _| {
            let mut p = w.clone();
            let mut m = w.clone();
            p[i] += h;
            m[i] -= h;
            (obj.value(&p) - obj.value(&m)) / (2.0 * h)
        })
    }

    #[test]
    fn random_initial_zeroes_goal() {
        let env = grid();
        let ValueFunction::Tabular(v) = random_v(&env, &FeatureBasis::Indicator(9), 1) else {
            panic!()
        };
        assert_eq!(v[2], 0.0);
        assert!(v.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn exact_representation_has_zero_loss() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 2);
        let obj = ExactObjective::new(&env, &basis, &v, DEFAULT_QUADRATURE).unwrap();
        let targets = DVector::from_fn(9, |s, _| env.exact_bellman_target(&v, &State::Cell(s)).unwrap());
        assert!(obj.value(&targets).abs() < 1e-12);
        assert!((obj.optimal_weights() - &targets).norm() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_value_loss() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = ValueFunction::Tabular(vec![0.0; 9]);
        let j = objective_exact(&DVector::zeros(9), &env, &basis, &v).unwrap();
        assert!((j - 8.0 / 9.0).abs() < 1e-14);
        let w = optimal_weights(&env, &basis, &v).unwrap();
        let costs = DVector::from_fn(9, |s, _| if s == 2 { 0.0 } else { 1.0 });
        assert!((w - costs).norm() < 1e-12);
    }

    #[test]
    fn optimum_solves_normal_equations_and_is_stationary() {
        for (env, basis) in [
            (grid(), FeatureBasis::Indicator(9)),
            (lg(), FeatureBasis::Quadratic2),
        ] {
            let v = random_v(&env, &basis, 3);
            let obj = ExactObjective::new(&env, &basis, &v, Quadrature::Midpoint(128)).unwrap();
            let w = obj.optimal_weights();
            assert!((obj.phi() * w - obj.cross_moment()).norm() <= 1e-8);
            assert!(fd_gradient(&obj, w).norm() < 1e-6);
            let mut rng = stream(4, &[]);
            for _ in 0..100 {
                let u = DVector::from_fn(w.len(), |_, _| rng.random_range(-2.0..2.0));
                assert!(obj.value(&(w + &u)) - obj.optimal_value() >= 0.0);
            }
        }
    }

    #[test]
    fn continuous_target_lies_in_basis_span() {
        let env = lg();
        let basis = FeatureBasis::Quadratic2;
        let v = random_v(&env, &basis, 5);
        let theta = DVector::from_row_slice(&env.bellman_target_coefficients(&v).unwrap());
        let quad = ExactObjective::new(&env, &basis, &v, DEFAULT_QUADRATURE).unwrap();
        let closed = ExactObjective::new(&env, &basis, &v, Quadrature::ClosedForm).unwrap();
        assert!((quad.optimal_weights() - &theta).norm() < 1e-7);
        assert!((closed.optimal_weights() - &theta).norm() < 1e-9);
        assert!(quad.optimal_value().abs() < 1e-9);
        let w = DVector::from_element(6, 0.3);
        assert!((quad.value(&w) - closed.value(&w)).abs() < 1e-4);
    }

    #[test]
    fn midpoint_objective_matches_direct_quadrature_sum() {
        // Direct sum of squared residuals over the same nodes.
        let env = lg();
        let basis = FeatureBasis::Quadratic2;
        let v = random_v(&env, &basis, 6);
        let r = 64;
        let obj = ExactObjective::new(&env, &basis, &v, Quadrature::Midpoint(r)).unwrap();
        let w = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
        let h = 1.0 / r as f64;
        let mut direct = 0.0;
        for i in 0..r {
            for j in 0..r {
                let x = State::Point([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                let t = env.exact_bellman_target(&v, &x).unwrap();
                direct += h * h * (t - basis.dot(w.as_slice(), &x)).powi(2);
            }
        }
        assert!((obj.value(&w) - direct).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn gradient_vanishes_on_zero_residual() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 7);
        let t = DataTuple {
            x: State::Cell(4),
            cost: 1.0,
            x_next: State::Cell(5),
        };
        let mut w = DVector::zeros(9);
        w[4] = 1.0 + v.eval(&State::Cell(5));
        assert!(stochastic_gradient(&w, &[t], &basis, &v, 1.0).norm() < 1e-15);
    }

    #[test]
    fn full_sweep_gradient_at_zero() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = ValueFunction::Tabular(vec![0.0; 9]);
        let tuples: Vec<DataTuple> = (0..9)
            .map(|s| DataTuple {
                x: State::Cell(s),
                cost: env.stage_cost(&State::Cell(s)),
                x_next: State::Cell(s),
            })
            .collect();
        let g = stochastic_gradient(&DVector::zeros(9), &tuples, &basis, &v, 1.0);
        for s in 0..9 {
            let want = if s == 2 { 0.0 } else { -1.0 / 9.0 };
            assert!((g[s] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_mean_is_half_the_true_gradient() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 8);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let w = DVector::from_fn(9, |i, _| (i as f64 * 0.37).sin());
        let mut rng = stream(9, &[]);
        let batches = 20_000;
        let mut mean = DVector::zeros(9);
        for _ in 0..batches {
            let t = problem.env.sample_tuples_with(&mut rng, 10);
            mean += problem.gradient(&w, &t);
        }
        mean /= batches as f64;
        let half = problem.objective.gradient(&w) * 0.5;
        assert!((mean - half).norm() < 0.01);
    }

    #[test]
    fn server_update_cases() {
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let g = |v: Vec<f64>, a| StochasticGradient {
            g: DVector::from_vec(v),
            agent_id: a,
            k: 0,
        };
        assert_eq!(server_update(&w, &[], 0.5, 2, None).unwrap(), w);
        let same = server_update(&w, &[g(vec![1.0, 1.0], 0), g(vec![1.0, 1.0], 1)], 0.5, 2, None).unwrap();
        assert_eq!(same, DVector::from_vec(vec![0.5, 1.5]));
        let one = server_update(&w, &[g(vec![2.0, 0.0], 0)], 0.5, 2, None).unwrap();
        assert_eq!(one, DVector::from_vec(vec![0.0, 2.0]));
        assert!(server_update(&w, &vec![g(vec![0.0, 0.0], 0); 3], 0.5, 2, None).is_err());
        let projected = server_update(&w, &[g(vec![-10.0, 0.0], 0)], 1.0, 1, Some(1.0)).unwrap();
        assert!((projected.norm() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn two_agent_update_matches_four_case_rule(
            w in proptest::collection::vec(-5.0f64..5.0, 3),
            g1 in proptest::collection::vec(-5.0f64..5.0, 3),
            g2 in proptest::collection::vec(-5.0f64..5.0, 3),
            a1: bool, a2: bool, eps in 0.01f64..2.0,
        ) {
            let (w, g1, g2) = (DVector::from_vec(w), DVector::from_vec(g1), DVector::from_vec(g2));
            let literal = match (a1, a2) {
                (true, false) => &w - &g1 * eps,
                (false, true) => &w - &g2 * eps,
                (true, true) => &w - (&g1 + &g2) * (eps / 2.0),
                (false, false) => w.clone(),
            };
            let mut received = Vec::new();
            if a1 { received.push(StochasticGradient { g: g1.clone(), agent_id: 0, k: 0 }); }
            if a2 { received.push(StochasticGradient { g: g2.clone(), agent_id: 1, k: 0 }); }
            let got = server_update(&w, &received, eps, 2, None).unwrap();
            prop_assert!((got - literal).norm() < 1e-12);
        }

        #[test]
        fn objective_is_quadratic_around_optimum(
            u in proptest::collection::vec(-3.0f64..3.0, 9),
        ) {
            let env = grid();
            let basis = FeatureBasis::Indicator(9);
            let v = random_v(&env, &basis, 10);
            let obj = ExactObjective::new(&env, &basis, &v, DEFAULT_QUADRATURE).unwrap();
            let w = obj.optimal_weights() + DVector::from_vec(u);
            let lhs = obj.value(&w) - obj.optimal_value();
            prop_assert!((lhs - obj.excess(&w)).abs() < 1e-8);
        }
    }

    #[test]
    fn never_transmit_freezes_weights() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 11);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let mut h = hyper(30, 2);
        h.initial_weights = Some(DVector::from_element(9, 0.25));
        let rec = run_inner_loop(&problem, &h, &policy(TriggerKind::Never, 0.0, 1.0, 30), 5).unwrap();
        assert_eq!(rec.final_weights(), h.initial_weights.as_ref().unwrap());
        assert_eq!(rec.summary.transmissions, 0);
        assert_eq!(rec.rows.len(), 30);
    }

    #[test]
    fn always_transmit_converges_on_grid() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 12);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let rec = run_inner_loop(&problem, &hyper(200, 2), &policy(TriggerKind::Always, 0.0, 1.0, 200), 6).unwrap();
        assert_eq!(rec.comm_rate(), 1.0);
        assert!(rec.final_loss() < 0.1 * rec.summary.initial_loss);
    }

    #[test]
    fn runs_are_reproducible() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 13);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let p = policy(TriggerKind::EstimatedGain, 0.1, 0.8, 40);
        let a = run_inner_loop(&problem, &hyper(40, 3), &p, 99).unwrap();
        let b = run_inner_loop(&problem, &hyper(40, 3), &p, 99).unwrap();
        assert_eq!(a, b);
        let c = run_inner_loop(&problem, &hyper(40, 3), &p, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_is_reported() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 14);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let mut h = hyper(500, 1);
        h.epsilon = 40.0;
        let err = run_inner_loop(&problem, &h, &policy(TriggerKind::Always, 0.0, 1.0, 500), 1).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn single_outer_iteration_matches_inner_loop() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let v = random_v(&env, &basis, 15);
        let h = hyper(50, 2);
        let p = policy(TriggerKind::Always, 0.0, 1.0, 50);
        let outs = run_outer_loop(&env, &basis, &h, &p, 1, v.clone(), DEFAULT_QUADRATURE, 3, InnerSolve::Sgd).unwrap();
        assert_eq!(outs.len(), 1);
        let problem = Problem::new(env, basis, v, DEFAULT_QUADRATURE).unwrap();
        let rec = run_inner_loop(&problem, &h, &p, rng::derive_seed(3, &[0])).unwrap();
        assert_eq!(outs[0], ValueFunction::Linear { basis, weights: rec.summary.final_weights });
    }

    #[test]
    fn exact_value_iteration_reaches_hitting_times() {
        let env = grid();
        let basis = FeatureBasis::Indicator(9);
        let g = env.as_grid().unwrap();
        let keep: Vec<usize> = (0..9).filter(|&s| s != 2).collect();
        let sub = DMatrix::from_fn(8, 8, |i, j| g.kernel()[(keep[i], keep[j])]);
        let m = DMatrix::identity(8, 8) - &sub;
        let hit = m.lu().solve(&DVector::from_element(8, 1.0)).unwrap();
        let radius = sub.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);

        let v0 = random_v(&env, &basis, 16);
        let h = hyper(1, 1);
        let p = policy(TriggerKind::Always, 0.0, 1.0, 1);
        let seq = run_outer_loop(&env, &basis, &h, &p, 400, v0.clone(), DEFAULT_QUADRATURE, 0, InnerSolve::Exact).unwrap();
        let err_at = |i: usize| {
            keep.iter()
                .enumerate()
                .map(|(j, &s)| (seq[i].eval(&State::Cell(s)) - hit[j]).abs())
                .fold(0.0, f64::max)
        };
        assert!(err_at(399) < 1e-3, "{}", err_at(399));
        assert!(seq[399].eval(&State::Cell(2)).abs() < 1e-12);
        // Error contracts at the kernel's spectral radius, not faster.
        let ratio = (err_at(149) / err_at(99)).powf(1.0 / 50.0);
        assert!((ratio - radius).abs() < 0.01, "{ratio} vs {radius}");
    }

    #[test]
    fn zero_cost_fixed_point_stays_zero() {
        let env = make_linear_gaussian(Matrix2::new(0.5, 0.0, 0.0, 0.5), Matrix2::zeros(), 0.5).unwrap();
        // ‖x‖² cost is intrinsic; instead check the exact VI map on the grid's goal-only case.
        let _ = env;
        let single = make_gridworld(1, 1, 0, 0.0).unwrap();
        let basis = FeatureBasis::Indicator(1);
        let h = hyper(20, 2);
        let p = policy(TriggerKind::Always, 0.0, 1.0, 20);
        let seq = run_outer_loop(&single, &basis, &h, &p, 2, ValueFunction::Tabular(vec![0.0]), DEFAULT_QUADRATURE, 0, InnerSolve::Sgd).unwrap();
        for v in seq {
            assert_eq!(v.eval(&State::Cell(0)), 0.0);
        }
        assert!(run_outer_loop(&single, &basis, &h, &p, 0, ValueFunction::Tabular(vec![0.0]), DEFAULT_QUADRATURE, 0, InnerSolve::Sgd).is_err());
    }
}
