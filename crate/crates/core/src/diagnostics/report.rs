use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One checked instance of an inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; negative slack beyond the tolerance is a violation.
    pub slack: f64,
}

/// Outcome of checking one inequality over many trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub id: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack over all rows.
    pub worst_slack: f64,
    pub params: BTreeMap<String, f64>,
    pub rows: Vec<LemmaRow>,
    /// Inputs of violating trials.
    pub witnesses: Vec<serde_json::Value>,
}

impl LemmaReport {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            trials: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            params: BTreeMap::new(),
            rows: Vec::new(),
            witnesses: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: f64) {
        self.params.insert(key.to_string(), value);
    }

    /// Records `lhs ≤ rhs + tol`; `witness` is only built on violation.
    pub fn record(&mut self, trial: usize, lhs: f64, rhs: f64, tol: f64, witness: impl FnOnce() -> serde_json::Value) {
        let slack = rhs - lhs;
        self.rows.push(LemmaRow { trial, lhs, rhs, slack });
        self.trials = self.trials.max(trial + 1);
        self.worst_slack = self.worst_slack.min(slack);
        if !(lhs <= rhs + tol) {
            self.violations += 1;
            self.witnesses.push(witness());
        }
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,lhs,rhs,slack\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.trial, r.lhs, r.rhs, r.slack);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Report without the per-trial rows, for summaries.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "trials": self.trials,
            "violations": self.violations,
            "worst_slack": if self.worst_slack.is_finite() { Some(self.worst_slack) } else { None },
            "params": self.params,
            "witnesses": self.witnesses,
        })
    }
}
