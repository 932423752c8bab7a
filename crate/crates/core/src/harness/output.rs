//! CSV and summary output.
//!
//! Every CSV starts with a `# generated …` line carrying a timestamp; the rest
//! of the file depends only on config and seed. Floats use 17 significant
//! digits so values survive a text round trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::{AssumptionReport, BoundReport, InequalityReport};
use crate::error::{Error, Result};
use crate::harness::experiment::ScalingRow;
use crate::harness::sweep::{SweepResult, SweepRow};
use crate::learner::RunRecord;

pub const SWEEP_HEADER: &str =
    "trigger,lambda,trials,comm_rate_mean,comm_rate_se,final_loss_mean,final_loss_se";
pub const SCALING_HEADER: &str =
    "agents,trials,median_iterations,reached_fraction,comm_rate_mean,comm_rate_se";
pub const BOUND_HEADER: &str =
    "lambda,trials,lhs_mean,lhs_se,rhs,trace_phi_g,comm_rate_mean,final_loss_mean,passed";
pub const INEQUALITY_HEADER: &str = "point,threshold,draws,alpha_rate,lhs,rhs,se,passed";

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn generated_line() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("# generated unix={secs}")
}

/// File contents without the leading `# generated` line.
pub fn body(text: &str) -> &str {
    match text.strip_prefix("# generated") {
        Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
        None => text,
    }
}

/// Single-writer CSV that flushes after every row.
pub struct CsvWriter {
    file: fs::File,
    path: PathBuf,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = fs::File::create(path)?;
        writeln!(file, "{}", generated_line())?;
        writeln!(file, "{header}")?;
        Ok(CsvWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn sweep_line(trigger: &str, r: &SweepRow) -> String {
    format!(
        "{trigger},{},{},{},{},{},{}",
        fmt_f64(r.lambda),
        r.trials,
        fmt_f64(r.comm_rate_mean),
        fmt_f64(r.comm_rate_se),
        fmt_f64(r.final_loss_mean),
        fmt_f64(r.final_loss_se)
    )
}

pub fn sweep_csv(results: &[SweepResult]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for res in results {
        for r in &res.rows {
            s.push_str(&sweep_line(&res.trigger, r));
            s.push('\n');
        }
    }
    s
}

/// Parses sweep CSV text back into per-trigger results, in order of first appearance.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepResult>> {
    let bad = |n: usize, m: &str| Error::InvalidArgument(format!("sweep csv line {n}: {m}"));
    let mut lines = body(text).lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SWEEP_HEADER => {}
        _ => return Err(bad(1, "missing header")),
    }
    let mut out: Vec<SweepResult> = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, "expected 7 fields"));
        }
        let num = |j: usize| parse_f64(f[j]).ok_or_else(|| bad(i + 1, "bad number"));
        let row = SweepRow {
            lambda: num(1)?,
            trials: f[2].parse().map_err(|_| bad(i + 1, "bad trial count"))?,
            comm_rate_mean: num(3)?,
            comm_rate_se: num(4)?,
            final_loss_mean: num(5)?,
            final_loss_se: num(6)?,
        };
        match out.iter_mut().find(|r| r.trigger == f[0]) {
            Some(r) => r.rows.push(row),
            None => out.push(SweepResult {
                trigger: f[0].to_string(),
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

pub fn trajectory_header(dim: usize) -> String {
    let mut s = String::from("k,agent_id,alpha,gain,loss");
    for i in 0..dim {
        write!(s, ",weight_{i}").unwrap();
    }
    s
}

/// One line per (iteration, agent); weights are the broadcast `w_k`.
pub fn trajectory_csv(record: &RunRecord) -> String {
    let dim = record.summary.final_weights.len();
    let mut s = trajectory_header(dim);
    s.push('\n');
    for row in &record.rows {
        let weights: String = row.weights.iter().map(|w| format!(",{}", fmt_f64(*w))).collect();
        for (agent, (alpha, gain)) in row.alphas.iter().zip(&row.gains).enumerate() {
            writeln!(
                s,
                "{},{agent},{},{},{}{weights}",
                row.k,
                u8::from(*alpha),
                gain.map_or(String::new(), fmt_f64),
                fmt_f64(row.loss)
            )
            .unwrap();
        }
    }
    s
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = format!("{SCALING_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.agents,
            r.trials,
            fmt_f64(r.median_iterations),
            fmt_f64(r.reached_fraction),
            fmt_f64(r.comm_rate_mean),
            fmt_f64(r.comm_rate_se)
        )
        .unwrap();
    }
    s
}

pub fn bound_line(lambda: f64, r: &BoundReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        fmt_f64(lambda),
        r.trials,
        fmt_f64(r.lhs_estimate),
        fmt_f64(r.lhs_se),
        fmt_f64(r.rhs_value),
        fmt_f64(r.trace_phi_g),
        fmt_f64(r.comm_rate_mean),
        fmt_f64(r.final_loss_mean),
        r.passed()
    )
}

pub fn inequality_csv(r: &InequalityReport) -> String {
    let mut s = format!("{INEQUALITY_HEADER}\n");
    for (i, p) in r.points.iter().enumerate() {
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{}",
            fmt_f64(r.threshold),
            p.draws,
            fmt_f64(p.alpha_rate),
            fmt_f64(p.lhs),
            fmt_f64(p.rhs),
            fmt_f64(p.se),
            p.passed()
        )
        .unwrap();
    }
    s
}

pub fn assumptions_csv(eigenvalues: &[f64], r: &AssumptionReport) -> String {
    let mut s = String::from("index,eigenvalue,margin\n");
    for (i, (l, m)) in eigenvalues.iter().zip(&r.margins).enumerate() {
        writeln!(s, "{i},{},{}", fmt_f64(*l), fmt_f64(*m)).unwrap();
    }
    s
}

/// Writes `# generated` plus `content` to `dir/name`.
pub fn write_csv(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, format!("{}\n{content}", generated_line()))?;
    Ok(path)
}

pub fn write_summary(dir: &Path, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("summary.txt");
    fs::write(&path, text)?;
    Ok(path)
}
