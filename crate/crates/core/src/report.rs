//! Machine-readable test reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

/// Significance level before the Bonferroni correction.
pub const ALPHA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Passes when `p` exceeds the report's corrected threshold.
    PValue { p: f64 },
    /// Passes when `target` lies in `[lo, hi]`.
    Interval { lo: f64, hi: f64, target: f64 },
    /// Passes when the statistic is below `bound`.
    Below { bound: f64 },
    /// Passes when the statistic lies in `[lo, hi]`.
    Range { lo: f64, hi: f64 },
    /// Pass or fail decided by the caller.
    Flag { ok: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub statistic: f64,
    pub n: u64,
    pub criterion: Criterion,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub experiment: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
    /// Per-row p-value threshold after the Bonferroni correction.
    pub p_threshold: f64,
    pub pass: bool,
}

/// Report body plus run metadata that is allowed to vary between runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub body: StatReport,
    pub wall_clock_seconds: f64,
}

impl StatReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        StatReport {
            experiment: experiment.to_string(),
            seed,
            params: BTreeMap::new(),
            rows: Vec::new(),
            notes: Vec::new(),
            p_threshold: ALPHA,
            pass: true,
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    fn push(&mut self, name: &str, statistic: f64, n: u64, criterion: Criterion) -> &mut Self {
        self.rows.push(Row { name: name.to_string(), statistic, n, criterion, pass: false });
        self.finalize();
        self
    }

    pub fn p_value(&mut self, name: &str, statistic: f64, n: u64, p: f64) -> &mut Self {
        self.push(name, statistic, n, Criterion::PValue { p })
    }

    /// Estimate with standard error; passes when `target` is within `k` standard errors.
    pub fn within_se(&mut self, name: &str, estimate: f64, se: f64, k: f64, target: f64, n: u64) -> &mut Self {
        self.push(name, estimate, n, Criterion::Interval { lo: estimate - k * se, hi: estimate + k * se, target })
    }

    pub fn interval(&mut self, name: &str, estimate: f64, lo: f64, hi: f64, target: f64, n: u64) -> &mut Self {
        self.push(name, estimate, n, Criterion::Interval { lo, hi, target })
    }

    pub fn below(&mut self, name: &str, statistic: f64, bound: f64, n: u64) -> &mut Self {
        self.push(name, statistic, n, Criterion::Below { bound })
    }

    pub fn range(&mut self, name: &str, statistic: f64, lo: f64, hi: f64, n: u64) -> &mut Self {
        self.push(name, statistic, n, Criterion::Range { lo, hi })
    }

    pub fn flag(&mut self, name: &str, statistic: f64, ok: bool, n: u64) -> &mut Self {
        self.push(name, statistic, n, Criterion::Flag { ok })
    }

    /// Recomputes the corrected threshold and every pass flag.
    pub fn finalize(&mut self) {
        let tests = self.rows.iter().filter(|r| matches!(r.criterion, Criterion::PValue { .. })).count();
        self.p_threshold = ALPHA / tests.max(1) as f64;
        let threshold = self.p_threshold;
        for r in self.rows.iter_mut() {
            r.pass = match &r.criterion {
                Criterion::PValue { p } => *p > threshold,
                Criterion::Interval { lo, hi, target } => lo <= target && target <= hi,
                Criterion::Below { bound } => r.statistic < *bound,
                Criterion::Range { lo, hi } => *lo <= r.statistic && r.statistic <= *hi,
                Criterion::Flag { ok } => *ok,
            };
        }
        self.pass = self.rows.iter().all(|r| r.pass);
    }

    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_file_json(&self, wall_clock_seconds: f64) -> String {
        let file = ReportFile { body: self.clone(), wall_clock_seconds };
        serde_json::to_string_pretty(&file).expect("report serializes")
    }

    pub fn from_file_json(text: &str) -> Result<StatReport> {
        let file: ReportFile = serde_json::from_str(text)?;
        Ok(file.body)
    }

    /// Rows as CSV: `name,statistic,n,pass`.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("name,statistic,n,pass\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.name, r.statistic, r.n, r.pass));
        }
        out
    }

    /// One summary line per row.
    pub fn summary(&self) -> String {
        let mut out = format!("{} (seed {}): {}\n", self.experiment, self.seed, if self.pass { "PASS" } else { "FAIL" });
        for r in &self.rows {
            let detail = match &r.criterion {
                Criterion::PValue { p } => format!("p = {p:.4} (threshold {:.2e})", self.p_threshold),
                Criterion::Interval { lo, hi, target } => format!("[{lo:.5}, {hi:.5}] vs {target:.5}"),
                Criterion::Below { bound } => format!("< {bound}"),
                Criterion::Range { lo, hi } => format!("in [{lo}, {hi}]"),
                Criterion::Flag { ok } => format!("{ok}"),
            };
            out.push_str(&format!(
                "  {} {}: {:.6} n={} {}\n",
                if r.pass { "ok  " } else { "FAIL" },
                r.name,
                r.statistic,
                r.n,
                detail
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        out
    }
}

/// Concatenates several reports into one, prefixing row names with the
/// experiment they came from. The correction is recomputed over all rows.
pub fn merge(reports: &[StatReport]) -> StatReport {
    let seed = reports.first().map(|r| r.seed).unwrap_or(0);
    let mut out = StatReport::new("merged", seed);
    for r in reports {
        out.params.insert(format!("{}.seed", r.experiment), Value::from(r.seed));
        for (k, v) in &r.params {
            out.params.insert(format!("{}.{}", r.experiment, k), v.clone());
        }
        for row in &r.rows {
            let mut row = row.clone();
            row.name = format!("{}/{}", r.experiment, row.name);
            out.rows.push(row);
        }
        out.notes.extend(r.notes.iter().map(|n| format!("{}: {}", r.experiment, n)));
    }
    out.finalize();
    out
}
