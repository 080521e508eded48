use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `ledger.csv`; new columns are only ever appended.
pub const LEDGER_COLUMNS: [&str; 9] = [
    "n",
    "L_value",
    "L_policy",
    "step8_metric",
    "reward_estimate",
    "q_norm",
    "r_norm",
    "oracle_l2",
    "reward_stderr",
];

/// Error budget of one policy-iteration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub n: usize,
    /// Mean squared PDE residual after value training.
    pub l_value: f64,
    /// Mean KL divergence between the policy net and its softmax target.
    pub l_policy: f64,
    /// `‖q_n‖_{L²(X)}` estimate.
    pub q_norm: f64,
    /// `‖r_n‖_{L²(X)}` estimate.
    pub r_norm: f64,
    /// Mean squared change of the value net on the collocation set.
    pub step8_metric: f64,
    pub oracle_l2: Option<f64>,
    pub reward_estimate: Option<f64>,
    pub reward_stderr: Option<f64>,
}

impl LedgerRow {
    fn check(&self) -> Result<()> {
        let required = [
            ("L_value", self.l_value),
            ("L_policy", self.l_policy),
            ("q_norm", self.q_norm),
            ("r_norm", self.r_norm),
            ("step8_metric", self.step8_metric),
        ];
        let optional = [
            ("oracle_l2", self.oracle_l2),
            ("reward_estimate", self.reward_estimate),
            ("reward_stderr", self.reward_stderr),
        ];
        for (name, v) in required.into_iter().chain(optional.into_iter().filter_map(|(n, v)| v.map(|v| (n, v)))) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("ledger entry {name} = {v} at n = {}", self.n)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    rows: Vec<LedgerRow>,
}

impl ErrorLedger {
    /// Appends a row; `n` must increase and every present entry must be finite.
    pub fn push(&mut self, row: LedgerRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.n <= last.n {
                return Err(Error::InvalidArgument(format!("ledger row n = {} after n = {}", row.n, last.n)));
            }
        }
        row.check()?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }

    /// Present values of an optional column, paired with `n`.
    pub fn series(&self, pick: impl Fn(&LedgerRow) -> Option<f64>) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| pick(r).map(|v| (r.n, v))).collect()
    }

    /// CSV text. Floats use the shortest round-trip representation, so equal
    /// ledgers give byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = LEDGER_COLUMNS.join(",");
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.l_value,
                r.l_policy,
                r.step8_metric,
                opt(r.reward_estimate),
                r.q_norm,
                r.r_norm,
                opt(r.oracle_l2),
                opt(r.reward_stderr)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize) -> LedgerRow {
        LedgerRow {
            n,
            l_value: 0.5,
            l_policy: 0.25,
            q_norm: 1.0,
            r_norm: 0.1,
            step8_metric: 1e-3,
            oracle_l2: None,
            reward_estimate: Some(-1.5),
            reward_stderr: Some(0.1),
        }
    }

    #[test]
    fn enforces_order_and_finiteness() {
        let mut ledger = ErrorLedger::default();
        ledger.push(row(1)).unwrap();
        assert!(ledger.push(row(1)).is_err());
        let mut bad = row(2);
        bad.oracle_l2 = Some(f64::NAN);
        assert!(ledger.push(bad).is_err());
        ledger.push(row(3)).unwrap();
        assert_eq!(ledger.len(), 2);
    }

    #[test]
    fn csv_layout() {
        let mut ledger = ErrorLedger::default();
        ledger.push(row(1)).unwrap();
        let csv = ledger.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n,L_value,L_policy,step8_metric,reward_estimate,q_norm,r_norm,oracle_l2,reward_stderr");
        assert_eq!(lines.next().unwrap(), "1,0.5,0.25,0.001,-1.5,1,0.1,,0.1");
    }
}
