//! Verification reports: residual statistics, convergence-order fits, and
//! pass/fail checks against pinned tolerances.
//!
//! Every solver and verification operation returns its findings through
//! [`VerificationReport`] so the CLI and the acceptance suite share one
//! export format (structured `key: value` text plus CSV tables).

use std::fmt::Write as _;

/// One named pass/fail check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A plain table destined for CSV export.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub name: String,
    /// Resolved configuration echoed verbatim (reproducibility contract).
    pub config: Vec<(String, String)>,
    /// Named scalar metrics that are not pass/fail gated.
    pub metrics: Vec<(String, f64)>,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
    pub tables: Vec<Table>,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn config(&mut self, key: impl Into<String>, value: impl ToString) {
        self.config.push((key.into(), value.to_string()));
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// `value <= tolerance` check.
    pub fn check_le(&mut self, name: impl Into<String>, value: f64, tolerance: f64) -> bool {
        let passed = value.is_finite() && value <= tolerance;
        self.checks.push(CheckResult {
            name: name.into(),
            value,
            tolerance,
            passed,
        });
        passed
    }

    /// `value >= threshold` check (threshold recorded in the tolerance slot).
    pub fn check_ge(&mut self, name: impl Into<String>, value: f64, threshold: f64) -> bool {
        let passed = value.is_finite() && value >= threshold;
        self.checks.push(CheckResult {
            name: name.into(),
            value,
            tolerance: threshold,
            passed,
        });
        passed
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn merge(&mut self, other: VerificationReport) {
        let prefix = other.name.clone();
        for (k, v) in other.config {
            self.config.push((format!("{prefix}.{k}"), v));
        }
        for (k, v) in other.metrics {
            self.metrics.push((format!("{prefix}.{k}"), v));
        }
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
        for n in other.notes {
            self.notes.push(format!("{prefix}: {n}"));
        }
        self.tables.extend(other.tables);
    }

    /// Structured-text rendering (`key: value` blocks).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "report: {}", self.name);
        let _ = writeln!(s, "status: {}", if self.passed() { "PASS" } else { "FAIL" });
        if !self.config.is_empty() {
            let _ = writeln!(s, "[config]");
            for (k, v) in &self.config {
                let _ = writeln!(s, "{k}: {v}");
            }
        }
        if !self.metrics.is_empty() {
            let _ = writeln!(s, "[metrics]");
            for (k, v) in &self.metrics {
                let _ = writeln!(s, "{k}: {v:e}");
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(s, "[checks]");
            for c in &self.checks {
                let _ = writeln!(
                    s,
                    "{}: value = {:e}, tolerance = {:e}, {}",
                    c.name,
                    c.value,
                    c.tolerance,
                    if c.passed { "pass" } else { "FAIL" }
                );
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "[notes]");
            for n in &self.notes {
                let _ = writeln!(s, "- {n}");
            }
        }
        s
    }
}

/// Max-abs and root-mean-square of a residual sample.
pub fn residual_stats(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    (max, rms)
}

/// Least-squares slope of `ln err` against `ln h`: the observed convergence
/// order of `err ~ C h^p`. Pairs with non-positive entries are skipped.
pub fn fit_order(samples: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}
