//! Communication/performance tradeoff sweeps.

use crate::error::{Error, Result};
use crate::harness::experiment::Experiment;
use crate::learner::run_trials;
use crate::stats::mean_se;
use crate::trigger::TriggerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// λ, or the transmit probability for the random baseline.
    pub lambda: f64,
    pub trials: usize,
    pub comm_rate_mean: f64,
    pub comm_rate_se: f64,
    pub final_loss_mean: f64,
    pub final_loss_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub trigger: String,
    /// Ascending in `lambda`.
    pub rows: Vec<SweepRow>,
}

/// One point of a sweep: `trials` seeded runs of a single policy.
pub fn sweep_point(exp: &Experiment, kind: TriggerKind, lambda: f64, trials: usize, seed: u64) -> Result<SweepRow> {
    let policy = exp.policy(kind, lambda)?;
    let runs = run_trials(&exp.problem, &exp.hyper, &policy, trials, seed)?;
    let (comm_rate_mean, comm_rate_se) = mean_se(&runs.iter().map(|r| r.comm_rate()).collect::<Vec<_>>());
    let (final_loss_mean, final_loss_se) = mean_se(&runs.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    Ok(SweepRow {
        lambda,
        trials,
        comm_rate_mean,
        comm_rate_se,
        final_loss_mean,
        final_loss_se,
    })
}

/// Sweeps each trigger over `lambdas` (the random baseline over
/// `probabilities`). Every point reuses the same trial seeds, so all series
/// see the same data. `on_row` sees each row as soon as it is computed.
pub fn run_sweep(
    exp: &Experiment,
    triggers: &[TriggerKind],
    lambdas: &[f64],
    probabilities: &[f64],
    trials: usize,
    seed: u64,
    mut on_row: impl FnMut(&str, &SweepRow) -> Result<()>,
) -> Result<Vec<SweepResult>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one lambda".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let lambdas = sorted(lambdas);
    let probabilities = sorted(probabilities);
    let mut out = Vec::with_capacity(triggers.len());
    for &kind in triggers {
        let name = kind.name();
        let mut rows = Vec::new();
        match kind {
            TriggerKind::Random(_) => {
                for &p in &probabilities {
                    let row = sweep_point(exp, TriggerKind::Random(p), 0.0, trials, seed)?;
                    let row = SweepRow { lambda: p, ..row };
                    on_row(name, &row)?;
                    rows.push(row);
                }
            }
            _ => {
                for &l in &lambdas {
                    let row = sweep_point(exp, kind, l, trials, seed)?;
                    on_row(name, &row)?;
                    rows.push(row);
                }
            }
        }
        out.push(SweepResult {
            trigger: name.to_string(),
            rows,
        });
    }
    Ok(out)
}

/// Best achievable loss at communication budget `rate`.
///
/// The sweep points are joined piecewise linearly in `(comm_rate, loss)`;
/// the frontier at `rate` is the lowest point of that curve at or below
/// `rate`. Returns `(loss, se)` or `None` below the smallest swept rate.
pub fn frontier_loss_at(rows: &[SweepRow], rate: f64) -> Option<(f64, f64)> {
    let mut pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.comm_rate_mean, r.final_loss_mean, r.final_loss_se))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = pts.first()?;
    if rate < first.0 {
        return None;
    }
    let mut best = (first.1, first.2);
    let mut consider = |loss: f64, se: f64| {
        if loss < best.0 {
            best = (loss, se);
        }
    };
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.0 > rate {
            break;
        }
        consider(a.1, a.2);
        if b.0 <= rate {
            consider(b.1, b.2);
        } else if b.0 > a.0 {
            let t = (rate - a.0) / (b.0 - a.0);
            consider(a.1 + t * (b.1 - a.1), a.2 + t * (b.2 - a.2));
        }
    }
    Some(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierComparison {
    pub rate: f64,
    pub oracle: (f64, f64),
    pub random: (f64, f64),
    pub estimated: Option<(f64, f64)>,
}

impl FrontierComparison {
    pub fn oracle_dominates(&self) -> bool {
        self.oracle.0 <= self.random.0
    }

    /// Estimated-gain loss between the other two, or within two standard errors of either.
    pub fn estimated_between(&self) -> bool {
        let Some((e, se)) = self.estimated else {
            return true;
        };
        let near = |(l, s): (f64, f64)| (e - l).abs() <= 2.0 * (se * se + s * s).sqrt();
        (self.oracle.0 <= e && e <= self.random.0) || near(self.oracle) || near(self.random)
    }
}

/// Compares frontiers on an evenly spaced grid of rates in `[lo, hi]`,
/// skipping rates where the oracle or random frontier is undefined.
pub fn compare_frontiers(
    oracle: &[SweepRow],
    random: &[SweepRow],
    estimated: Option<&[SweepRow]>,
    lo: f64,
    hi: f64,
    points: usize,
) -> Vec<FrontierComparison> {
    (0..points)
        .filter_map(|i| {
            let rate = if points == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            };
            Some(FrontierComparison {
                rate,
                oracle: frontier_loss_at(oracle, rate)?,
                random: frontier_loss_at(random, rate)?,
                estimated: estimated.and_then(|e| frontier_loss_at(e, rate)),
            })
        })
        .collect()
}
