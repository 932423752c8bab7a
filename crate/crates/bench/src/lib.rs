//! Fixtures shared by the benchmarks.

use etvfa_core::harness::config::RunConfig;
use etvfa_core::harness::experiment::Experiment;
use etvfa_core::mdp::DataTuple;
use etvfa_core::Result;

/// 3×3 grid, indicator features, two agents, 50 iterations.
pub fn grid() -> Result<Experiment> {
    Experiment::build(RunConfig::parse("hyper.iterations = 50\nrun.trials = 1")?)
}

/// Linear-Gaussian system with quadratic features and a short horizon.
pub fn continuous(batch_size: usize) -> Result<Experiment> {
    let text = format!(
        "environment.kind = linear_gaussian
environment.a = 0.8, -0.2, 0.1, 1.0
environment.noise_cov = 0.1, 0, 0, 0.1
environment.gamma = 0.9
basis.kind = poly2
objective.quadrature = 128
hyper.batch_size = {batch_size}
hyper.iterations = 20
trigger.kind = eq17
trigger.rho = 0.999
"
    );
    Experiment::build(RunConfig::parse(&text)?)
}

pub fn batch(exp: &Experiment, seed: u64) -> Result<Vec<DataTuple>> {
    exp.problem.env.sample_tuples(exp.hyper.batch_size, seed)
}
