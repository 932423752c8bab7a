//! Event-triggered communication for distributed approximate value iteration.
//!
//! Agents fit a linear value function to Bellman targets by stochastic
//! gradient descent and only send a gradient to the server when its predicted
//! improvement clears a decaying threshold.

pub mod analysis;
pub mod error;
pub mod features;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod trigger;

pub use error::{Error, Result};
pub use features::{indicator_basis, polynomial_basis_deg2, FeatureBasis, SecondMomentSummary};
pub use learner::{
    ExactObjective, HyperParams, Problem, Quadrature, RunRecord, TrialSummary, ValueFunction,
    WeightVector,
};
pub use mdp::{make_gridworld, make_linear_gaussian, DataTuple, Environment, State};
pub use trigger::{ThresholdSchedule, TriggerKind, TriggerPolicy};
