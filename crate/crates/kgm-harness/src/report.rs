//! Deterministic plain-text run reports: a config echo, the estimated
//! constants, a verdict table with measured values next to their
//! thresholds, and the paths of every emitted artifact.

use kgm_core::reduced::ConstantsEstimate;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Not applicable under this configuration; the reason is printed.
    Skip(String),
    /// Measured and reported, never asserted.
    Info,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub measured: String,
    pub bound: String,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub title: String,
    pub config_echo: Vec<String>,
    pub constants: Option<ConstantsEstimate>,
    pub notes: Vec<String>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl RunReport {
    pub fn new(title: &str, config_echo: Vec<String>) -> RunReport {
        RunReport { title: title.to_string(), config_echo, ..RunReport::default() }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    /// Record an asserted check.
    pub fn check(
        &mut self,
        name: &str,
        pass: bool,
        measured: impl std::fmt::Display,
        bound: impl std::fmt::Display,
    ) {
        self.checks.push(Check {
            name: name.to_string(),
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            measured: measured.to_string(),
            bound: bound.to_string(),
        });
    }

    pub fn skip(&mut self, name: &str, reason: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            verdict: Verdict::Skip(reason.into()),
            measured: String::new(),
            bound: String::new(),
        });
    }

    pub fn info(&mut self, name: &str, measured: impl std::fmt::Display) {
        self.checks.push(Check {
            name: name.to_string(),
            verdict: Verdict::Info,
            measured: measured.to_string(),
            bound: String::new(),
        });
    }

    pub fn artifact(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "== {} ==", self.title);
        let _ = writeln!(s, "-- config --");
        for line in &self.config_echo {
            let _ = writeln!(s, "{line}");
        }
        if let Some(c) = &self.constants {
            let _ = writeln!(s, "-- empirical constants --");
            let _ = writeln!(s, "sigma_hat = {}", c.sigma);
            let _ = writeln!(s, "gamma_hat = {}", c.gamma);
            let _ = writeln!(s, "kappa_hat = {}", c.kappa);
            let _ = writeln!(
                s,
                "delta_hat = {} (1/(kappa_hat*sigma_hat); an upper estimate, since both factors are ascent lower estimates)",
                c.delta
            );
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "-- notes --");
            for line in &self.notes {
                let _ = writeln!(s, "{line}");
            }
        }
        let _ = writeln!(s, "-- checks --");
        for c in &self.checks {
            match &c.verdict {
                Verdict::Pass => {
                    let _ = writeln!(s, "[PASS] {}: {} (bound {})", c.name, c.measured, c.bound);
                }
                Verdict::Fail => {
                    let _ = writeln!(s, "[FAIL] {}: {} (bound {})", c.name, c.measured, c.bound);
                }
                Verdict::Skip(reason) => {
                    let _ = writeln!(s, "[SKIP] {}: {}", c.name, reason);
                }
                Verdict::Info => {
                    let _ = writeln!(s, "[INFO] {}: {}", c.name, c.measured);
                }
            }
        }
        if !self.artifacts.is_empty() {
            let _ = writeln!(s, "-- artifacts --");
            for p in &self.artifacts {
                let _ = writeln!(s, "{}", p.display());
            }
        }
        let asserted =
            self.checks.iter().filter(|c| matches!(c.verdict, Verdict::Pass | Verdict::Fail)).count();
        let failed = self.checks.len() - self.checks.iter().filter(|c| c.verdict != Verdict::Fail).count();
        if self.all_passed() {
            let _ = writeln!(s, "result: PASS ({asserted} asserted checks)");
        } else {
            let _ = writeln!(s, "result: FAIL ({failed} of {asserted} asserted checks failed)");
        }
        s
    }
}
