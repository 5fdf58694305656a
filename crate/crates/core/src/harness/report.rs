//! Experiment results and their CSV / text serialization.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentKind;
use crate::analysis::RateFit;
use crate::error::Result;
use crate::problems::Check;
use crate::solver::SolveStats;

/// Measurements of one `(eps, h)` or `delta` case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub param_name: String,
    pub param: f64,
    pub eps: Option<f64>,
    pub h: Option<f64>,
    /// Measured quantities in column order.
    pub values: Vec<(String, f64)>,
    pub stats: Vec<SolveStats>,
    /// Seconds; reported in the text summary only.
    pub wall_time: f64,
    /// The primary quantity is below the algebraic-error floor.
    pub at_floor: bool,
}

impl CaseResult {
    pub fn new(param_name: &str, param: f64) -> Self {
        Self {
            param_name: param_name.into(),
            param,
            eps: None,
            h: None,
            values: Vec::new(),
            stats: Vec::new(),
            wall_time: 0.0,
            at_floor: false,
        }
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityFit {
    pub quantity: String,
    pub fit: RateFit,
    /// Accepted slope interval, if this fit is asserted.
    pub accepted: Option<(f64, f64)>,
}

impl QuantityFit {
    pub fn passed(&self) -> Option<bool> {
        self.accepted
            .map(|(lo, hi)| self.fit.slope >= lo && self.fit.slope <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub kind: ExperimentKind,
    pub problem: String,
    /// Column names of the case rows.
    pub quantities: Vec<String>,
    pub cases: Vec<CaseResult>,
    pub fits: Vec<QuantityFit>,
    /// Extra scalar results written to the footer as `name,quantity,value`.
    pub metrics: Vec<(String, String, f64)>,
    pub checks: Vec<Check>,
    /// `None` when nothing was asserted.
    pub pass: Option<bool>,
    pub notes: Vec<String>,
}

pub const PRIMARY_ERROR: &str = "error_gradX2";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl RateReport {
    pub fn new(kind: ExperimentKind, problem: impl Into<String>) -> Self {
        Self {
            kind,
            problem: problem.into(),
            quantities: Vec::new(),
            cases: Vec::new(),
            fits: Vec::new(),
            metrics: Vec::new(),
            checks: Vec::new(),
            pass: None,
            notes: Vec::new(),
        }
    }

    pub fn fit(&self, quantity: &str) -> Option<&RateFit> {
        self.fits
            .iter()
            .find(|f| f.quantity == quantity)
            .map(|f| &f.fit)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.0 == name).map(|m| m.2)
    }

    pub fn pass_label(&self) -> &'static str {
        match self.pass {
            Some(true) => "true",
            Some(false) => "false",
            None => "skipped",
        }
    }

    /// Deterministic CSV: fixed column order and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let quantities: Vec<&str> = if self.quantities.is_empty() {
            vec![PRIMARY_ERROR]
        } else {
            self.quantities.iter().map(String::as_str).collect()
        };
        let _ = write!(out, "kind,param_name,param,{}", quantities.join(","));
        if !self.cases.is_empty() {
            out.push_str(",iterations,at_floor");
        }
        out.push('\n');
        for c in &self.cases {
            let _ = write!(out, "{},{},{}", self.kind, c.param_name, num(c.param));
            for q in &quantities {
                out.push(',');
                out.push_str(&c.value(q).map_or_else(String::new, num));
            }
            let _ = writeln!(out, ",{},{}", c.iterations(), c.at_floor);
        }
        for check in &self.checks {
            let _ = writeln!(
                out,
                "check,{},{},{}",
                check.name,
                check.passed,
                quote(&check.detail)
            );
        }
        for f in &self.fits {
            let _ = writeln!(out, "slope,{},{}", f.quantity, num(f.fit.slope));
            let _ = writeln!(out, "intercept,{},{}", f.quantity, num(f.fit.intercept));
            let _ = writeln!(out, "r2,{},{}", f.quantity, num(f.fit.r2));
        }
        for (name, q, v) in &self.metrics {
            let _ = writeln!(out, "{name},{q},{}", num(*v));
        }
        let _ = writeln!(out, "pass,{}", self.pass_label());
        out
    }

    /// Human-readable summary including wall times.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.kind);
        let _ = writeln!(out, "problem: {}", self.problem);
        for c in &self.cases {
            let vals: Vec<String> = c
                .values
                .iter()
                .map(|(n, v)| format!("{n}={v:.6e}"))
                .collect();
            let _ = writeln!(
                out,
                "  {}={:<12.6e} {} iterations={} time={:.3}s{}",
                c.param_name,
                c.param,
                vals.join(" "),
                c.iterations(),
                c.wall_time,
                if c.at_floor { " [at floor]" } else { "" }
            );
        }
        for check in &self.checks {
            let _ = writeln!(
                out,
                "  check {:<26} {} ({})",
                check.name,
                if check.passed { "ok" } else { "FAILED" },
                check.detail
            );
        }
        for f in &self.fits {
            let verdict = match (f.accepted, f.passed()) {
                (Some((lo, hi)), Some(p)) => {
                    format!(
                        " accepted [{lo}, {hi}] -> {}",
                        if p { "pass" } else { "FAIL" }
                    )
                }
                _ => " (reported)".into(),
            };
            let _ = writeln!(
                out,
                "  slope {}: {:.4} (r2 {:.4}, {} samples){verdict}",
                f.quantity,
                f.fit.slope,
                f.fit.r2,
                f.fit.samples.len()
            );
        }
        for (name, q, v) in &self.metrics {
            let _ = writeln!(out, "  {name} {q}: {v:.6e}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        let _ = writeln!(out, "pass: {}", self.pass_label());
        out
    }
}

pub fn write_report(report: &RateReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv())?;
    Ok(())
}

pub fn write_summary(report: &RateReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.summary())?;
    Ok(())
}
