//! Markov decision processes evaluated under a fixed policy.
//!
//! Two environments are provided: a finite grid world with a uniformly random
//! policy and a slippery top row, and a continuous linear-Gaussian system
//! `x₊ = Ax + w`. In both, states for the data tuples are drawn from a fixed
//! sampling distribution `d` (uniform over cells, or uniform on `[0,1]²`).

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureBasis;
use crate::learner::ValueFunction;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpaceKind {
    Finite(usize),
    Continuous(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State {
    Cell(usize),
    Point([f64; 2]),
}

/// One sampled transition `(x, c, x₊)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataTuple {
    pub x: State,
    pub cost: f64,
    pub x_next: State,
}

/// Moves of the grid policy, in the order used to build the kernel.
const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Finite grid evaluated under the uniform-random policy.
///
/// Cells are numbered row-major with row 0 on top. The goal is absorbing with
/// zero cost; every other cell costs 1 per step, so the value function is the
/// expected time to reach the goal. On the top row a rightward move fails with
/// probability `slip_prob` and leaves the agent in place.
#[derive(Debug, Clone)]
pub struct GridWorld {
    rows: usize,
    cols: usize,
    goal: usize,
    slip_prob: f64,
    kernel: DMatrix<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl GridWorld {
    pub fn new(rows: usize, cols: usize, goal: usize, slip_prob: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidEnvironment(format!(
                "grid must have at least one cell, got {rows}x{cols}"
            )));
        }
        let n = rows * cols;
        if goal >= n {
            return Err(Error::InvalidEnvironment(format!(
                "goal {goal} outside a {rows}x{cols} grid"
            )));
        }
        if !(0.0..=1.0).contains(&slip_prob) {
            return Err(Error::InvalidEnvironment(format!(
                "slip probability {slip_prob} not in [0,1]"
            )));
        }

        let mut kernel = DMatrix::zeros(n, n);
        for s in 0..n {
            if s == goal {
                kernel[(s, s)] = 1.0;
                continue;
            }
            let (r, c) = (s / cols, s % cols);
            for &(dr, dc) in &MOVES {
                let nr = r as isize + dr;
                let nc = c as isize + dc;
                let target = if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                    s
                } else {
                    nr as usize * cols + nc as usize
                };
                let p = 1.0 / MOVES.len() as f64;
                if r == 0 && dc == 1 {
                    kernel[(s, target)] += p * (1.0 - slip_prob);
                    kernel[(s, s)] += p * slip_prob;
                } else {
                    kernel[(s, target)] += p;
                }
            }
        }

        let cumulative = (0..n)
            .map(|s| {
                let mut acc = 0.0;
                kernel
                    .row(s)
                    .iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();

        Ok(GridWorld {
            rows,
            cols,
            goal,
            slip_prob,
            kernel,
            cumulative,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn slip_prob(&self) -> f64 {
        self.slip_prob
    }

    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    /// Row-stochastic transition matrix of the policy.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn cost(&self, s: usize) -> f64 {
        if s == self.goal {
            0.0
        } else {
            1.0
        }
    }

    fn sample_next(&self, s: usize, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let row = &self.cumulative[s];
        // Rounding can leave the last cumulative entry a hair below 1.
        row.iter().position(|&c| u < c).unwrap_or_else(|| {
            (0..row.len())
                .rposition(|i| self.kernel[(s, i)] > 0.0)
                .unwrap_or(s)
        })
    }
}

/// Linear system `x₊ = Ax + w`, `w ~ N(0, Σ)`, with stage cost `‖x‖²` and
/// states sampled uniformly on `[0,1]²`.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    a: Matrix2<f64>,
    noise_cov: Matrix2<f64>,
    noise_factor: Matrix2<f64>,
    gamma: f64,
}

impl LinearGaussian {
    pub fn new(a: Matrix2<f64>, noise_cov: Matrix2<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidEnvironment(format!(
                "discount {gamma} not in (0,1)"
            )));
        }
        if a.iter().chain(noise_cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidEnvironment("non-finite system matrix".into()));
        }
        if (noise_cov[(0, 1)] - noise_cov[(1, 0)]).abs() > 1e-12 {
            return Err(Error::InvalidEnvironment(
                "noise covariance is not symmetric".into(),
            ));
        }
        let eig = SymmetricEigen::new(noise_cov);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::InvalidEnvironment(format!(
                "noise covariance is not positive semidefinite (eigenvalues {:?})",
                eig.eigenvalues.as_slice()
            )));
        }
        // Σ = F Fᵀ with F = V·diag(√λ); works for singular Σ where Cholesky does not.
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let noise_factor = eig.eigenvectors * Matrix2::from_diagonal(&sqrt);
        Ok(LinearGaussian {
            a,
            noise_cov,
            noise_factor,
            gamma,
        })
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn noise_cov(&self) -> &Matrix2<f64> {
        &self.noise_cov
    }

    pub fn cost(x: &[f64; 2]) -> f64 {
        x[0] * x[0] + x[1] * x[1]
    }

    fn sample_next(&self, x: &[f64; 2], rng: &mut StreamRng) -> [f64; 2] {
        let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let y = self.a * Vector2::new(x[0], x[1]) + self.noise_factor * z;
        [y[0], y[1]]
    }

    /// Coefficients θ in the degree-2 polynomial basis of the Bellman target
    /// `‖x‖² + γ E[v(Ax + w)]` for `v(y) = weightsᵀφ(y)`.
    ///
    /// Writing `v(y) = yᵀQy + lᵀy + f`, the Gaussian expectation is
    /// `(Ax)ᵀQ(Ax) + tr(QΣ) + lᵀAx + f`, again a quadratic in `x`.
    pub fn bellman_target_coefficients(&self, weights: &[f64]) -> [f64; 6] {
        let [qa, qb, qc, ld, le, f] = [
            weights[0], weights[1], weights[2], weights[3], weights[4], weights[5],
        ];
        let q = Matrix2::new(qa, qc / 2.0, qc / 2.0, qb);
        let l = Vector2::new(ld, le);
        let m = Matrix2::identity() + self.gamma * self.a.transpose() * q * self.a;
        let lin = self.gamma * self.a.transpose() * l;
        let constant = self.gamma * ((q * self.noise_cov).trace() + f);
        [
            m[(0, 0)],
            m[(1, 1)],
            m[(0, 1)] + m[(1, 0)],
            lin[0],
            lin[1],
            constant,
        ]
    }
}

/// An environment together with its fixed evaluation policy.
#[derive(Debug, Clone)]
pub enum Environment {
    Grid(GridWorld),
    LinearGaussian(LinearGaussian),
}

/// Builds the grid world. `goal` is a row-major cell index, row 0 on top.
pub fn make_gridworld(rows: usize, cols: usize, goal: usize, slip_prob: f64) -> Result<Environment> {
    GridWorld::new(rows, cols, goal, slip_prob).map(Environment::Grid)
}

pub fn make_linear_gaussian(
    a: Matrix2<f64>,
    noise_cov: Matrix2<f64>,
    gamma: f64,
) -> Result<Environment> {
    LinearGaussian::new(a, noise_cov, gamma).map(Environment::LinearGaussian)
}

impl Environment {
    pub fn kind(&self) -> StateSpaceKind {
        match self {
            Environment::Grid(g) => StateSpaceKind::Finite(g.num_states()),
            Environment::LinearGaussian(_) => StateSpaceKind::Continuous(2),
        }
    }

    /// Discount factor. The grid measures undiscounted time to goal.
    pub fn gamma(&self) -> f64 {
        match self {
            Environment::Grid(_) => 1.0,
            Environment::LinearGaussian(lg) => lg.gamma,
        }
    }

    pub fn num_states(&self) -> Option<usize> {
        match self {
            Environment::Grid(g) => Some(g.num_states()),
            Environment::LinearGaussian(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridWorld> {
        match self {
            Environment::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_linear_gaussian(&self) -> Option<&LinearGaussian> {
        match self {
            Environment::LinearGaussian(lg) => Some(lg),
            _ => None,
        }
    }

    pub fn is_absorbing(&self, x: &State) -> bool {
        matches!((self, x), (Environment::Grid(g), State::Cell(s)) if *s == g.goal)
    }

    pub fn stage_cost(&self, x: &State) -> f64 {
        match (self, x) {
            (Environment::Grid(g), State::Cell(s)) => g.cost(*s),
            (Environment::LinearGaussian(_), State::Point(p)) => LinearGaussian::cost(p),
            _ => panic!("state {x:?} does not belong to this environment"),
        }
    }

    /// Draws a state from the sampling distribution `d`.
    pub fn sample_state(&self, rng: &mut StreamRng) -> State {
        match self {
            Environment::Grid(g) => State::Cell(rng.random_range(0..g.num_states())),
            Environment::LinearGaussian(_) => State::Point([rng.random(), rng.random()]),
        }
    }

    /// Draws a successor of `x` under the policy.
    pub fn step(&self, x: &State, rng: &mut StreamRng) -> State {
        match (self, x) {
            (Environment::Grid(g), State::Cell(s)) => State::Cell(g.sample_next(*s, rng)),
            (Environment::LinearGaussian(lg), State::Point(p)) => {
                State::Point(lg.sample_next(p, rng))
            }
            _ => panic!("state {x:?} does not belong to this environment"),
        }
    }

    pub fn sample_tuple(&self, rng: &mut StreamRng) -> DataTuple {
        let x = self.sample_state(rng);
        let x_next = self.step(&x, rng);
        DataTuple {
            x,
            cost: self.stage_cost(&x),
            x_next,
        }
    }

    pub fn sample_tuples_with(&self, rng: &mut StreamRng, count: usize) -> Vec<DataTuple> {
        (0..count).map(|_| self.sample_tuple(rng)).collect()
    }

    /// `count` i.i.d. tuples, reproducible from `seed`.
    pub fn sample_tuples(&self, count: usize, seed: u64) -> Result<Vec<DataTuple>> {
        if count == 0 {
            return Err(Error::InvalidArgument("tuple count must be positive".into()));
        }
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::PROBE]);
        Ok(self.sample_tuples_with(&mut rng, count))
    }

    /// One exact Bellman backup `c(x) + γ E[v(x₊) | x]` of `v_current` at `x`.
    ///
    /// Finite environments sum over the kernel row. The linear-Gaussian system
    /// needs `v_current` expanded in the degree-2 polynomial basis, where the
    /// expectation has a closed form.
    pub fn exact_bellman_target(&self, v_current: &ValueFunction, x: &State) -> Result<f64> {
        match (self, x) {
            (Environment::Grid(g), State::Cell(s)) => {
                let n = g.num_states();
                if *s >= n {
                    return Err(Error::InvalidArgument(format!("cell {s} out of range")));
                }
                let mut cont = 0.0;
                for y in 0..n {
                    let p = g.kernel[(*s, y)];
                    if p != 0.0 {
                        cont += p * v_current.eval(&State::Cell(y));
                    }
                }
                Ok(g.cost(*s) + self.gamma() * cont)
            }
            (Environment::LinearGaussian(_), State::Point(_)) => {
                let theta = self.bellman_target_coefficients(v_current)?;
                Ok(FeatureBasis::Quadratic2.dot(&theta, x))
            }
            _ => Err(Error::InvalidArgument(format!(
                "state {x:?} does not belong to this environment"
            ))),
        }
    }

    /// Polynomial coefficients of the continuous Bellman target.
    pub fn bellman_target_coefficients(&self, v_current: &ValueFunction) -> Result<[f64; 6]> {
        let lg = self.as_linear_gaussian().ok_or_else(|| {
            Error::Unsupported("closed-form targets exist only for the linear-Gaussian system".into())
        })?;
        match v_current {
            ValueFunction::Linear {
                basis: FeatureBasis::Quadratic2,
                weights,
            } => Ok(lg.bellman_target_coefficients(weights.as_slice())),
            _ => Err(Error::Unsupported(
                "continuous Bellman target needs a degree-2 polynomial value function".into(),
            )),
        }
    }
}
