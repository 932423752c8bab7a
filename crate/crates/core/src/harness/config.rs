//! Flat `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is validated before
//! anything runs; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::analysis::CovariancePlugin;
use crate::error::{Error, Result};
use crate::learner::Quadrature;
use crate::trigger::TriggerKind;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentSpec {
    Grid {
        rows: usize,
        cols: usize,
        goal: usize,
        slip_prob: f64,
    },
    LinearGaussian {
        /// Row-major.
        a: [f64; 4],
        /// Row-major.
        noise_cov: [f64; 4],
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSpec {
    Indicator,
    Poly2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSpec {
    /// Smallest admissible value plus a small margin.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    pub lambda: f64,
    pub rho: RhoSpec,
    pub divide_by_horizon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Kinds swept over λ. The random baseline is swept over `probabilities`.
    pub triggers: Vec<TriggerKind>,
    pub lambdas: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSpec {
    pub agents: Vec<usize>,
    /// Relative excess-loss level defining iterations-to-threshold.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub lambdas: Vec<f64>,
    pub covariance: CovariancePlugin,
    pub covariance_batches: usize,
    pub points: usize,
    pub draws: usize,
    pub waive_assumptions: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpec {
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub agents: usize,
    pub projection_bound: Option<f64>,
    pub initial_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub environment: EnvironmentSpec,
    pub basis: BasisSpec,
    pub quadrature: Quadrature,
    pub hyper: HyperSpec,
    pub trigger: TriggerSpec,
    pub trials: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub outer_iterations: usize,
    pub sweep: SweepSpec,
    pub scaling: ScalingSpec,
    pub analysis: AnalysisSpec,
}

const KNOWN_KEYS: &[&str] = &[
    "environment.kind",
    "environment.rows",
    "environment.cols",
    "environment.goal",
    "environment.slip_prob",
    "environment.a",
    "environment.noise_cov",
    "environment.gamma",
    "basis.kind",
    "objective.quadrature",
    "hyper.epsilon",
    "hyper.batch_size",
    "hyper.iterations",
    "hyper.total_tuples",
    "hyper.agents",
    "hyper.projection_bound",
    "hyper.initial_weights",
    "trigger.kind",
    "trigger.lambda",
    "trigger.rho",
    "trigger.divide_by_horizon",
    "trigger.probability",
    "run.trials",
    "run.seed",
    "run.output",
    "run.outer_iterations",
    "sweep.triggers",
    "sweep.lambdas",
    "sweep.probabilities",
    "scaling.agents",
    "scaling.tolerance",
    "analysis.lambdas",
    "analysis.covariance",
    "analysis.covariance_batches",
    "analysis.points",
    "analysis.draws",
    "analysis.waive_assumptions",
];

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", i + 1), "expected `key = value`")
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
        }
        Ok(Entries(map))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None | Some("none") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn floats(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_float_list(v).map_err(|m| Error::config(key, m)),
        }
    }
}

/// Comma list, or `logspace(a, b, n)` / `linspace(a, b, n)`.
pub fn parse_float_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    let spaced = |body: &str, log: bool| -> std::result::Result<Vec<f64>, String> {
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err("expected (start, stop, count)".into());
        }
        let a: f64 = parts[0].parse().map_err(|_| format!("bad start `{}`", parts[0]))?;
        let b: f64 = parts[1].parse().map_err(|_| format!("bad stop `{}`", parts[1]))?;
        let n: usize = parts[2].parse().map_err(|_| format!("bad count `{}`", parts[2]))?;
        if n == 0 {
            return Err("count must be positive".into());
        }
        if log && !(a > 0.0 && b > 0.0) {
            return Err("logspace bounds must be positive".into());
        }
        let (a, b) = if log { (a.log10(), b.log10()) } else { (a, b) };
        Ok((0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                let x = a + t * (b - a);
                if log {
                    10f64.powf(x)
                } else {
                    x
                }
            })
            .collect())
    };
    let v = v.trim();
    if let Some(body) = v.strip_prefix("logspace(").and_then(|s| s.strip_suffix(')')) {
        return spaced(body, true);
    }
    if let Some(body) = v.strip_prefix("linspace(").and_then(|s| s.strip_suffix(')')) {
        return spaced(body, false);
    }
    v.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().map_err(|_| format!("bad number `{s}`"))
        })
        .collect()
}

fn parse_kind(name: &str, probability: f64) -> Option<TriggerKind> {
    Some(match name {
        "oracle" => TriggerKind::Oracle,
        "eq17" | "estimated" => TriggerKind::EstimatedGain,
        "exact_quadratic" => TriggerKind::EstimatedGainExact,
        "random" => TriggerKind::Random(probability),
        "always" => TriggerKind::Always,
        "never" => TriggerKind::Never,
        _ => return None,
    })
}

fn matrix4(e: &Entries, key: &str, default: [f64; 4]) -> Result<[f64; 4]> {
    let v = e.floats(key, default.to_vec())?;
    v.try_into()
        .map_err(|_| Error::config(key, "expected four row-major entries"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;

        let environment = match e.raw("environment.kind").unwrap_or("grid") {
            "grid" => EnvironmentSpec::Grid {
                rows: e.get("environment.rows", 3)?,
                cols: e.get("environment.cols", 3)?,
                goal: e.get("environment.goal", 2)?,
                slip_prob: e.get("environment.slip_prob", 0.5)?,
            },
            "linear_gaussian" => EnvironmentSpec::LinearGaussian {
                a: matrix4(&e, "environment.a", [0.8, -0.2, 0.1, 1.0])?,
                noise_cov: matrix4(&e, "environment.noise_cov", [0.1, 0.0, 0.0, 0.1])?,
                gamma: e.get("environment.gamma", 0.9)?,
            },
            other => {
                return Err(Error::config(
                    "environment.kind",
                    format!("unknown environment `{other}` (grid, linear_gaussian)"),
                ))
            }
        };
        let continuous = matches!(environment, EnvironmentSpec::LinearGaussian { .. });

        let basis = match e.raw("basis.kind") {
            None if continuous => BasisSpec::Poly2,
            None => BasisSpec::Indicator,
            Some("indicator") => BasisSpec::Indicator,
            Some("poly2") => BasisSpec::Poly2,
            Some(other) => {
                return Err(Error::config(
                    "basis.kind",
                    format!("unknown basis `{other}` (indicator, poly2)"),
                ))
            }
        };

        let quadrature = match e.raw("objective.quadrature") {
            None => Quadrature::Midpoint(512),
            Some("exact") => Quadrature::ClosedForm,
            Some(v) => match v.parse::<usize>() {
                Ok(r) if r > 0 => Quadrature::Midpoint(r),
                _ => {
                    return Err(Error::config(
                        "objective.quadrature",
                        "expected `exact` or a positive grid resolution",
                    ))
                }
            },
        };

        let batch_size: usize = e.get("hyper.batch_size", if continuous { 1000 } else { 10 })?;
        let agents: usize = e.get("hyper.agents", 2)?;
        let iterations = match (
            e.opt::<usize>("hyper.iterations")?,
            e.opt::<usize>("hyper.total_tuples")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "hyper.total_tuples",
                    "give either hyper.iterations or hyper.total_tuples",
                ))
            }
            (Some(n), None) => n,
            (None, Some(total)) => {
                if agents == 0 || batch_size == 0 {
                    0
                } else {
                    total / (agents * batch_size)
                }
            }
            (None, None) => {
                if continuous {
                    2000
                } else {
                    50
                }
            }
        };
        let initial_weights = match e.raw("hyper.initial_weights") {
            None | Some("zeros") => None,
            Some(v) => Some(
                parse_float_list(v).map_err(|m| Error::config("hyper.initial_weights", m))?,
            ),
        };
        let hyper = HyperSpec {
            epsilon: e.get("hyper.epsilon", 1.0)?,
            batch_size,
            iterations,
            agents,
            projection_bound: e.opt("hyper.projection_bound")?,
            initial_weights,
        };

        let probability: f64 = e.get("trigger.probability", 0.5)?;
        let kind_name = e.raw("trigger.kind").unwrap_or("oracle");
        let kind = parse_kind(kind_name, probability).ok_or_else(|| {
            Error::config("trigger.kind", format!("unknown trigger `{kind_name}`"))
        })?;
        let rho = match e.raw("trigger.rho") {
            None | Some("auto") => RhoSpec::Auto,
            Some(v) => RhoSpec::Value(
                v.parse()
                    .map_err(|_| Error::config("trigger.rho", format!("cannot parse `{v}`")))?,
            ),
        };
        let trigger = TriggerSpec {
            kind,
            lambda: e.get("trigger.lambda", 0.1)?,
            rho,
            divide_by_horizon: e.get("trigger.divide_by_horizon", true)?,
        };

        let triggers = match e.raw("sweep.triggers") {
            None => vec![
                TriggerKind::Oracle,
                TriggerKind::EstimatedGain,
                TriggerKind::Random(0.0),
            ],
            Some(v) => v
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    parse_kind(s, 0.0).ok_or_else(|| {
                        Error::config("sweep.triggers", format!("unknown trigger `{s}`"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let sweep = SweepSpec {
            triggers,
            lambdas: e.floats("sweep.lambdas", parse_float_list("logspace(1e-4, 10, 12)").unwrap())?,
            probabilities: e.floats(
                "sweep.probabilities",
                parse_float_list("linspace(0.05, 1, 20)").unwrap(),
            )?,
        };

        let scaling = ScalingSpec {
            agents: match e.raw("scaling.agents") {
                None => vec![2, 10],
                Some(v) => v
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<usize>().map_err(|_| {
                            Error::config("scaling.agents", format!("bad agent count `{s}`"))
                        })
                    })
                    .collect::<Result<_>>()?,
            },
            tolerance: e.get("scaling.tolerance", 0.05)?,
        };

        let covariance = match e.raw("analysis.covariance").unwrap_or("optimum") {
            "optimum" => CovariancePlugin::Optimum,
            "path_max" => CovariancePlugin::PathMax,
            other => {
                return Err(Error::config(
                    "analysis.covariance",
                    format!("unknown plug-in `{other}` (optimum, path_max)"),
                ))
            }
        };
        let analysis = AnalysisSpec {
            lambdas: e.floats("analysis.lambdas", vec![0.01, 0.1, 1.0])?,
            covariance,
            covariance_batches: e.get("analysis.covariance_batches", 20_000)?,
            points: e.get("analysis.points", 20)?,
            draws: e.get("analysis.draws", 100_000)?,
            waive_assumptions: e.get("analysis.waive_assumptions", false)?,
        };

        let cfg = RunConfig {
            environment,
            basis,
            quadrature,
            hyper,
            trigger,
            trials: e.get("run.trials", 100)?,
            seed: e.get("run.seed", 0)?,
            output: PathBuf::from(e.raw("run.output").unwrap_or("results")),
            outer_iterations: e.get("run.outer_iterations", 1)?,
            sweep,
            scaling,
            analysis,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level checks that do not need the environment to be built.
    pub fn validate(&self) -> Result<()> {
        match &self.environment {
            EnvironmentSpec::Grid { slip_prob, .. } => {
                if !(0.0..=1.0).contains(slip_prob) {
                    return Err(Error::config("environment.slip_prob", "must lie in [0, 1]"));
                }
            }
            EnvironmentSpec::LinearGaussian { gamma, .. } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::config("environment.gamma", "must lie in (0, 1)"));
                }
            }
        }
        let h = &self.hyper;
        if !(h.epsilon > 0.0 && h.epsilon.is_finite()) {
            return Err(Error::config("hyper.epsilon", "must be positive"));
        }
        if h.batch_size == 0 {
            return Err(Error::config("hyper.batch_size", "must be positive"));
        }
        if h.agents == 0 {
            return Err(Error::config("hyper.agents", "must be at least 1"));
        }
        if h.iterations == 0 {
            return Err(Error::config("hyper.iterations", "must be positive"));
        }
        if let Some(m) = h.projection_bound {
            if !(m > 0.0) {
                return Err(Error::config("hyper.projection_bound", "must be positive"));
            }
        }
        if !(self.trigger.lambda >= 0.0 && self.trigger.lambda.is_finite()) {
            return Err(Error::config("trigger.lambda", "must be finite and non-negative"));
        }
        if let RhoSpec::Value(r) = self.trigger.rho {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config("trigger.rho", "must lie in (0, 1]"));
            }
        }
        if let TriggerKind::Random(p) = self.trigger.kind {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("trigger.probability", "must lie in [0, 1]"));
            }
        }
        if self.trials == 0 {
            return Err(Error::config("run.trials", "must be at least 1"));
        }
        if self.outer_iterations == 0 {
            return Err(Error::config("run.outer_iterations", "must be at least 1"));
        }
        if self.sweep.lambdas.is_empty() || self.sweep.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("sweep.lambdas", "need at least one non-negative value"));
        }
        if self.sweep.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("sweep.probabilities", "values must lie in [0, 1]"));
        }
        if self.scaling.agents.is_empty() || self.scaling.agents.contains(&0) {
            return Err(Error::config("scaling.agents", "need at least one positive count"));
        }
        if !(self.scaling.tolerance > 0.0 && self.scaling.tolerance < 1.0) {
            return Err(Error::config("scaling.tolerance", "must lie in (0, 1)"));
        }
        if self.analysis.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("analysis.lambdas", "values must be non-negative"));
        }
        if self.analysis.covariance_batches < 2 {
            return Err(Error::config("analysis.covariance_batches", "must be at least 2"));
        }
        if self.analysis.draws < 2 {
            return Err(Error::config("analysis.draws", "must be at least 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match RunConfig::parse(text).unwrap_err() {
            Error::Config { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_describe_the_grid() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(
            c.environment,
            EnvironmentSpec::Grid {
                rows: 3,
                cols: 3,
                goal: 2,
                slip_prob: 0.5
            }
        );
        assert_eq!(c.basis, BasisSpec::Indicator);
        assert_eq!(c.hyper.batch_size, 10);
        assert_eq!(c.sweep.lambdas.len(), 12);
        assert!((c.sweep.lambdas[0] - 1e-4).abs() < 1e-18);
        assert!((c.sweep.lambdas[11] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn continuous_file() {
        let c = RunConfig::parse(
            "# continuous\nenvironment.kind = linear_gaussian\ntrigger.rho = 0.999\nhyper.total_tuples = 4000000 # tuples\n",
        )
        .unwrap();
        assert_eq!(c.basis, BasisSpec::Poly2);
        assert_eq!(c.hyper.iterations, 2000);
        assert_eq!(c.trigger.rho, RhoSpec::Value(0.999));
    }

    #[test]
    fn rejects_bad_fields() {
        assert_eq!(field_of("hyper.epsilon = 0"), "hyper.epsilon");
        assert_eq!(field_of("hyper.epsilon = fast"), "hyper.epsilon");
        assert_eq!(field_of("hyper.colour = red"), "hyper.colour");
        assert_eq!(field_of("trigger.kind = psychic"), "trigger.kind");
        assert_eq!(field_of("trigger.rho = 1.5"), "trigger.rho");
        assert_eq!(field_of("environment.kind = linear_gaussian\nenvironment.a = 1, 2, 3"), "environment.a");
        assert_eq!(field_of("run.trials = 1\nrun.trials = 2"), "run.trials");
        assert_eq!(field_of("no equals sign"), "line 1");
        assert_eq!(
            field_of("hyper.iterations = 5\nhyper.total_tuples = 100"),
            "hyper.total_tuples"
        );
        assert_eq!(field_of("sweep.lambdas = logspace(0, 1, 3)"), "sweep.lambdas");
    }

    #[test]
    fn float_lists() {
        assert_eq!(parse_float_list("1, 2.5,3").unwrap(), vec![1.0, 2.5, 3.0]);
        assert_eq!(parse_float_list("linspace(0, 1, 3)").unwrap(), vec![0.0, 0.5, 1.0]);
        let l = parse_float_list("logspace(0.01, 1, 3)").unwrap();
        assert!((l[1] - 0.1).abs() < 1e-15);
        assert!(parse_float_list("linspace(0, 1)").is_err());
    }
}
