use etvfa_core::harness::config::RunConfig;
use etvfa_core::harness::experiment::{run_agent_scaling, run_trajectory, Experiment};
use etvfa_core::harness::output::{body, parse_sweep_csv, sweep_csv, trajectory_csv};
use etvfa_core::harness::sweep::run_sweep;
use etvfa_core::learner::{run_trials, server_update, StochasticGradient};
use etvfa_core::stats::mean_se;
use etvfa_core::TriggerKind;

fn grid(extra: &str) -> Experiment {
    Experiment::build(RunConfig::parse(&format!("hyper.iterations = 80\n{extra}")).unwrap()).unwrap()
}

#[test]
fn trajectory_is_reproducible_and_starts_at_w0() {
    let exp = grid("");
    let policy = exp.configured_policy().unwrap();
    let a = run_trajectory(&exp, &policy, 11).unwrap();
    let b = run_trajectory(&exp, &policy, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(trajectory_csv(&a), trajectory_csv(&b));
    assert!(a.rows[0].weights.iter().all(|&w| w == 0.0));
    assert_eq!(a.rows.len(), 80);
    let c = run_trajectory(&exp, &policy, 12).unwrap();
    assert_ne!(a.summary.final_weights, c.summary.final_weights);
}

#[test]
fn sweep_csv_round_trips_through_text() {
    let exp = grid("");
    let res = run_sweep(
        &exp,
        &[TriggerKind::Oracle, TriggerKind::EstimatedGain, TriggerKind::Random(0.5)],
        &[0.01, 1.0],
        &[0.2, 0.8],
        8,
        3,
        |_, _| Ok(()),
    )
    .unwrap();
    let text = format!("# generated unix=0\n{}", sweep_csv(&res));
    assert_eq!(body(&text), sweep_csv(&res));
    assert_eq!(parse_sweep_csv(&text).unwrap(), res);
}

#[test]
fn oracle_mean_rate_falls_with_lambda() {
    let exp = grid("");
    let rates: Vec<f64> = [0.0, 0.01, 0.1, 1.0, 10.0]
        .iter()
        .map(|&l| {
            let p = exp.policy(TriggerKind::Oracle, l).unwrap();
            let runs = run_trials(&exp.problem, &exp.hyper, &p, 100, 4).unwrap();
            mean_se(&runs.iter().map(|r| r.comm_rate()).collect::<Vec<_>>()).0
        })
        .collect();
    for w in rates.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{rates:?}");
    }
    assert!(rates[4] < rates[0]);
}

#[test]
fn averaging_more_agents_shrinks_step_variance() {
    let exp = grid("hyper.batch_size = 5");
    let p = &exp.problem;
    let w = exp.hyper.initial(p.dim());
    let eps = exp.hyper.epsilon;
    let spread = |m: usize| {
        let steps: Vec<f64> = (0..4000u64)
            .map(|s| {
                let received: Vec<StochasticGradient> = (0..m)
                    .map(|i| {
                        let tuples = p.env.sample_tuples(5, s * 100 + i as u64).unwrap();
                        StochasticGradient { g: p.gradient(&w, &tuples), agent_id: i, k: 0 }
                    })
                    .collect();
                server_update(&w, &received, eps, m, None).unwrap()[0]
            })
            .collect();
        let (mean, _) = mean_se(&steps);
        steps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (steps.len() - 1) as f64
    };
    let ratio = spread(4) / spread(2);
    assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn scaling_rows_per_agent_count() {
    let exp = grid("trigger.kind = always");
    let policy = exp.configured_policy().unwrap();
    let rows = run_agent_scaling(&exp, &policy, &[1, 4], 10, 2, 0.05).unwrap();
    assert_eq!(rows.iter().map(|r| r.agents).collect::<Vec<_>>(), [1, 4]);
    for r in &rows {
        assert_eq!(r.comm_rate_mean, 1.0);
        assert_eq!(r.reached_fraction, 1.0);
    }
    assert!(rows[1].median_iterations <= rows[0].median_iterations);
}
