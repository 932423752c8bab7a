//! Command-line front end for the experiment harness.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use etvfa_core::analysis::{self, CovariancePlugin};
use etvfa_core::harness::config::RunConfig;
use etvfa_core::harness::experiment::{run_agent_scaling, run_trajectory, Experiment};
use etvfa_core::harness::output::{self, CsvWriter};
use etvfa_core::harness::sweep::{compare_frontiers, run_sweep};
use etvfa_core::learner::{run_outer_loop, InnerSolve};
use etvfa_core::{Error, TriggerKind, ValueFunction};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "etvfa", version, about = "Event-triggered distributed value function approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Communication/loss tradeoff over λ (and p for the random baseline).
    Sweep(Common),
    /// One run with per-iteration decisions, gains, loss and weights.
    Trajectory(Common),
    /// Iterations-to-threshold and communication rate per agent count.
    Scaling(Common),
    /// Step-size and decay admissibility for the configured problem.
    CheckAssumptions(Common),
    /// Monte Carlo check of the performance bound.
    CheckBound(Common),
    /// Monte Carlo check of E[α·J(w−εg)] ≤ E[α]·E[J(w−εg)].
    CheckInequality(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file with `section.key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides run.trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides run.output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> etvfa_core::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn finish(dir: &Path, summary: &str) -> etvfa_core::Result<()> {
    output::write_summary(dir, summary)?;
    print!("{summary}");
    Ok(())
}

fn dispatch(command: Command) -> etvfa_core::Result<bool> {
    match command {
        Command::Sweep(c) => sweep(c.load()?),
        Command::Trajectory(c) => trajectory(c.load()?),
        Command::Scaling(c) => scaling(c.load()?),
        Command::CheckAssumptions(c) => check_assumptions(c.load()?),
        Command::CheckBound(c) => check_bound(c.load()?),
        Command::CheckInequality(c) => check_inequality(c.load()?),
    }
}

fn sweep(cfg: RunConfig) -> etvfa_core::Result<bool> {
    let exp = Experiment::build(cfg)?;
    let cfg = &exp.config;
    let dir = cfg.output.clone();
    let mut writers: Vec<(String, CsvWriter)> = Vec::new();
    let results = run_sweep(
        &exp,
        &cfg.sweep.triggers,
        &cfg.sweep.lambdas,
        &cfg.sweep.probabilities,
        cfg.trials,
        cfg.seed,
        |name, row| {
            let idx = match writers.iter().position(|(n, _)| n == name) {
                Some(i) => i,
                None => {
                    let path = dir.join(format!("sweep_{name}.csv"));
                    writers.push((name.to_string(), CsvWriter::create(&path, output::SWEEP_HEADER)?));
                    writers.len() - 1
                }
            };
            writers[idx].1.row(&output::sweep_line(name, row))
        },
    )?;

    let mut s = format!("sweep: {} trials per point, seed {}\n", cfg.trials, cfg.seed);
    for r in &results {
        for row in &r.rows {
            writeln!(
                s,
                "  {:<16} param {:>10.4e}  comm_rate {:.4} ± {:.4}  final_loss {:.4e} ± {:.1e}",
                r.trigger, row.lambda, row.comm_rate_mean, row.comm_rate_se, row.final_loss_mean, row.final_loss_se
            )
            .unwrap();
        }
    }
    let find = |name: &str| results.iter().find(|r| r.trigger == name).map(|r| r.rows.as_slice());
    if let (Some(o), Some(rnd)) = (find("oracle"), find("random")) {
        let cmp = compare_frontiers(o, rnd, find("eq17"), 0.1, 0.9, 81);
        let dominated = cmp.iter().filter(|c| c.oracle_dominates()).count();
        let between = cmp.iter().filter(|c| c.estimated_between()).count();
        writeln!(
            s,
            "frontier on [0.1, 0.9]: oracle <= random at {dominated}/{n} rates, eq17 between at {between}/{n}",
            n = cmp.len()
        )
        .unwrap();
    }
    finish(&dir, &s)?;
    Ok(true)
}

fn trajectory(cfg: RunConfig) -> etvfa_core::Result<bool> {
    let exp = Experiment::build(cfg)?;
    let policy = exp.configured_policy()?;
    let rec = run_trajectory(&exp, &policy, exp.config.seed)?;
    let dir = &exp.config.output;
    output::write_csv(dir, "trajectory.csv", &output::trajectory_csv(&rec))?;
    let n = rec.rows.len();
    let mut s = format!(
        "trajectory: trigger {} lambda {} rho {}\n  comm_rate {:.4}\n  transmissions first half {} second half {}\n  final loss {:.6e} (optimum {:.6e})\n  final distance {:.6e}\n",
        policy.kind.name(),
        policy.schedule.lambda,
        policy.schedule.rho,
        rec.comm_rate(),
        rec.transmissions_between(0, n / 2),
        rec.transmissions_between(n / 2, n),
        rec.final_loss(),
        exp.problem.objective.optimal_value(),
        rec.summary.final_distance
    );
    if exp.config.outer_iterations > 1 {
        let p = &exp.problem;
        let values = run_outer_loop(
            &p.env,
            &p.basis,
            &exp.hyper,
            &policy,
            exp.config.outer_iterations,
            p.v_current.clone(),
            exp.config.quadrature,
            exp.config.seed,
            InnerSolve::Sgd,
        )?;
        let mut csv = String::from("round");
        for i in 0..p.dim() {
            write!(csv, ",weight_{i}").unwrap();
        }
        csv.push('\n');
        for (round, v) in values.iter().enumerate() {
            if let ValueFunction::Linear { weights, .. } = v {
                csv.push_str(&round.to_string());
                for w in weights.iter() {
                    write!(csv, ",{}", output::fmt_f64(*w)).unwrap();
                }
                csv.push('\n');
            }
        }
        output::write_csv(dir, "outer.csv", &csv)?;
        writeln!(s, "  outer loop: {} rounds written to outer.csv", values.len()).unwrap();
    }
    finish(dir, &s)?;
    Ok(true)
}

fn scaling(cfg: RunConfig) -> etvfa_core::Result<bool> {
    let exp = Experiment::build(cfg)?;
    let cfg = &exp.config;
    let policy = exp.configured_policy()?;
    let rows = run_agent_scaling(&exp, &policy, &cfg.scaling.agents, cfg.trials, cfg.seed, cfg.scaling.tolerance)?;
    output::write_csv(&cfg.output, "scaling.csv", &output::scaling_csv(&rows))?;
    let mut s = format!("scaling: trigger {} lambda {}\n", policy.kind.name(), policy.schedule.lambda);
    for r in &rows {
        writeln!(
            s,
            "  m={:<4} median iterations {:>8}  reached {:.2}  comm_rate {:.4} ± {:.4}",
            r.agents, r.median_iterations, r.reached_fraction, r.comm_rate_mean, r.comm_rate_se
        )
        .unwrap();
    }
    finish(&cfg.output, &s)?;
    Ok(true)
}

fn check_assumptions(mut cfg: RunConfig) -> etvfa_core::Result<bool> {
    cfg.analysis.waive_assumptions = true;
    let exp = Experiment::build(cfg)?;
    let r = &exp.assumptions;
    output::write_csv(&exp.config.output, "assumptions.csv", &output::assumptions_csv(&exp.eigenvalues, r))?;
    let s = format!(
        "assumptions: {}\n  effective step {}\n  {}\n",
        if r.passes() { "PASS" } else { "FAIL" },
        analysis::effective_step(exp.hyper.epsilon),
        r.describe()
    );
    finish(&exp.config.output, &s)?;
    Ok(r.passes())
}

fn check_bound(cfg: RunConfig) -> etvfa_core::Result<bool> {
    let exp = Experiment::build(cfg)?;
    let cfg = &exp.config;
    let mut csv = CsvWriter::create(&cfg.output.join("bound.csv"), output::BOUND_HEADER)?;
    let mut s = format!("bound: {} trials, rho {}\n", cfg.trials, exp.rho);
    let mut all = true;
    for &lambda in &cfg.analysis.lambdas {
        let policy = exp.policy(TriggerKind::Oracle, lambda)?;
        let r = analysis::theorem_bound_check(
            &exp.problem,
            &exp.hyper,
            &policy,
            cfg.trials,
            cfg.seed,
            cfg.analysis.covariance,
            cfg.analysis.covariance_batches,
        )?;
        csv.row(&output::bound_line(lambda, &r))?;
        all &= r.passed();
        writeln!(
            s,
            "  lambda {lambda:<8} lhs {:.6} ± {:.6}  rhs {:.6}  {}",
            r.lhs_estimate,
            r.lhs_se,
            r.rhs_value,
            if r.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    if cfg.analysis.covariance == CovariancePlugin::PathMax {
        s.push_str("  covariance plug-in: max along a reference path\n");
    }
    finish(&cfg.output, &s)?;
    Ok(all)
}

fn check_inequality(cfg: RunConfig) -> etvfa_core::Result<bool> {
    let exp = Experiment::build(cfg)?;
    let cfg = &exp.config;
    let policy = exp.policy(TriggerKind::Oracle, cfg.trigger.lambda)?;
    let threshold = policy.schedule.threshold(exp.hyper.iterations - 1)?;
    let r = analysis::check_key_inequality(
        &exp.problem,
        &exp.hyper,
        threshold,
        cfg.analysis.points,
        cfg.analysis.draws,
        cfg.seed,
    )?;
    output::write_csv(&cfg.output, "inequality.csv", &output::inequality_csv(&r))?;
    let failed = r.points.iter().filter(|p| !p.passed()).count();
    let s = format!(
        "inequality: threshold {threshold}, {} points x {} draws, {}\n",
        r.points.len(),
        cfg.analysis.draws,
        if failed == 0 { "PASS".to_string() } else { format!("FAIL at {failed} points") }
    );
    finish(&cfg.output, &s)?;
    Ok(r.passed())
}

/// Maps a library error to the CLI exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}
