//! Fixed feature maps φ and their second-moment matrix Φ = E_d[φφᵀ].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mdp::{Environment, State};

/// Exponents `(a, b)` of `x₁ᵃx₂ᵇ` for each polynomial feature, in order
/// `[x₁², x₂², x₁x₂, x₁, x₂, 1]`.
pub const QUADRATIC_EXPONENTS: [(u32, u32); 6] = [(2, 0), (0, 2), (1, 1), (1, 0), (0, 1), (0, 0)];

/// Tolerance below zero tolerated for eigenvalues of a PSD matrix.
pub const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureBasis {
    /// One-hot encoding of a finite state.
    Indicator(usize),
    /// All monomials of a planar state up to degree 2.
    Quadratic2,
}

pub fn indicator_basis(num_states: usize) -> Result<FeatureBasis> {
    if num_states == 0 {
        return Err(Error::InvalidArgument("indicator basis needs at least one state".into()));
    }
    Ok(FeatureBasis::Indicator(num_states))
}

pub fn polynomial_basis_deg2() -> FeatureBasis {
    FeatureBasis::Quadratic2
}

impl FeatureBasis {
    pub fn dim(&self) -> usize {
        match self {
            FeatureBasis::Indicator(n) => *n,
            FeatureBasis::Quadratic2 => QUADRATIC_EXPONENTS.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureBasis::Indicator(_) => "indicator",
            FeatureBasis::Quadratic2 => "poly2",
        }
    }

    /// Errors unless the basis can evaluate every state of `env`.
    pub fn check_compatible(&self, env: &Environment) -> Result<()> {
        match (self, env) {
            (FeatureBasis::Indicator(n), Environment::Grid(g)) if *n == g.num_states() => Ok(()),
            (FeatureBasis::Quadratic2, Environment::LinearGaussian(_)) => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "basis {self:?} does not match environment with {:?}",
                env.kind()
            ))),
        }
    }

    /// Writes φ(x) into `out`, which must have length `dim()`.
    pub fn eval_into(&self, x: &State, out: &mut [f64]) {
        match (self, x) {
            (FeatureBasis::Indicator(n), State::Cell(s)) => {
                debug_assert!(*s < *n);
                out.fill(0.0);
                out[*s] = 1.0;
            }
            (FeatureBasis::Quadratic2, State::Point([x1, x2])) => {
                out[0] = x1 * x1;
                out[1] = x2 * x2;
                out[2] = x1 * x2;
                out[3] = *x1;
                out[4] = *x2;
                out[5] = 1.0;
            }
            _ => panic!("basis {self:?} cannot evaluate state {x:?}"),
        }
    }

    pub fn eval(&self, x: &State) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice());
        out
    }

    /// `weightsᵀφ(x)` without materializing φ.
    pub fn dot(&self, weights: &[f64], x: &State) -> f64 {
        match (self, x) {
            (FeatureBasis::Indicator(_), State::Cell(s)) => weights[*s],
            (FeatureBasis::Quadratic2, State::Point([x1, x2])) => {
                weights[0] * x1 * x1
                    + weights[1] * x2 * x2
                    + weights[2] * x1 * x2
                    + weights[3] * x1
                    + weights[4] * x2
                    + weights[5]
            }
            _ => panic!("basis {self:?} cannot evaluate state {x:?}"),
        }
    }

    /// Φ under the environment's sampling distribution, when known in closed form.
    ///
    /// Uniform cells give `I/n`. On `[0,1]²` the entries are monomial moments
    /// `E[x₁ᵃx₂ᵇ] = 1/((a+1)(b+1))`.
    pub fn exact_second_moment(&self, env: &Environment) -> Option<DMatrix<f64>> {
        self.check_compatible(env).ok()?;
        match self {
            FeatureBasis::Indicator(n) => Some(DMatrix::identity(*n, *n) / *n as f64),
            FeatureBasis::Quadratic2 => {
                let m = QUADRATIC_EXPONENTS.len();
                Some(DMatrix::from_fn(m, m, |i, j| {
                    let (a1, b1) = QUADRATIC_EXPONENTS[i];
                    let (a2, b2) = QUADRATIC_EXPONENTS[j];
                    uniform_unit_square_moment(a1 + a2, b1 + b2)
                }))
            }
        }
    }
}

/// `E[x₁ᵃ x₂ᵇ]` for `x` uniform on the unit square.
pub fn uniform_unit_square_moment(a: u32, b: u32) -> f64 {
    1.0 / (f64::from(a + 1) * f64::from(b + 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Φ with its spectrum.
#[derive(Debug, Clone)]
pub struct SecondMomentSummary {
    pub phi: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
}

impl SecondMomentSummary {
    /// Symmetrizes `phi`, decomposes it and rejects clearly indefinite results.
    pub fn from_matrix(phi: DMatrix<f64>) -> Result<Self> {
        let phi = (&phi + phi.transpose()) * 0.5;
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(phi.clone()).eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        let min = eigenvalues[0];
        if min < -PSD_TOLERANCE {
            return Err(Error::IndefiniteSecondMoment { min_eigenvalue: min });
        }
        let lambda_max = *eigenvalues.last().expect("non-empty spectrum");
        Ok(SecondMomentSummary {
            phi,
            eigenvalues,
            lambda_max,
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn positive_definite(&self) -> bool {
        self.lambda_min() > 0.0
    }
}

pub fn second_moment(
    basis: &FeatureBasis,
    env: &Environment,
    mode: MomentMode,
) -> Result<SecondMomentSummary> {
    basis.check_compatible(env)?;
    let phi = match mode {
        MomentMode::Exact => basis.exact_second_moment(env).ok_or_else(|| {
            Error::Unsupported("no exact second moment for this basis/environment".into())
        })?,
        MomentMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("sample count must be positive".into()));
            }
            let n = basis.dim();
            let mut rng = crate::rng::stream(seed, &[crate::rng::tag::PROBE]);
            let mut acc = DMatrix::zeros(n, n);
            let mut f = vec![0.0; n];
            for _ in 0..samples {
                basis.eval_into(&env.sample_state(&mut rng), &mut f);
                for i in 0..n {
                    if f[i] == 0.0 {
                        continue;
                    }
                    for j in i..n {
                        acc[(i, j)] += f[i] * f[j];
                    }
                }
            }
            for i in 0..n {
                for j in 0..i {
                    acc[(i, j)] = acc[(j, i)];
                }
            }
            acc / samples as f64
        }
    };
    SecondMomentSummary::from_matrix(phi)
}
