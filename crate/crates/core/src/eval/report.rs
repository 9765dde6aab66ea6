use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

/// Metrics for one group of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub group: String,
    pub users: usize,
    /// Empty when `users` is 0.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, group: &str) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.group == group)
    }

    pub fn metric(&self, group: &str, metric: &str) -> Option<f64> {
        self.cell(group)?.metrics.get(metric).copied()
    }

    /// Tab-separated records `task cell metric value users seed`, with a
    /// header line.
    pub fn to_tsv(&self, seed: u64) -> String {
        let mut out = String::from("task\tcell\tmetric\tvalue\tusers\tseed\n");
        for c in &self.cells {
            if c.metrics.is_empty() {
                let _ = writeln!(out, "{}\t{}\t-\t-\t{}\t{seed}", self.task, c.group, c.users);
            }
            for (m, v) in &c.metrics {
                let _ = writeln!(out, "{}\t{}\t{m}\t{v}\t{}\t{seed}", self.task, c.group, c.users);
            }
        }
        out
    }
}

/// `100·(model − baseline)/baseline` of `metric` for each of the model's
/// cells; `None` where either side is missing or the baseline is zero.
pub fn improvement_table(model: &EvalReport, baseline: &EvalReport, metric: &str) -> Vec<(String, Option<f64>)> {
    model
        .cells
        .iter()
        .map(|c| {
            let v = c.metrics.get(metric).copied();
            let b = baseline.metric(&c.group, metric);
            let pct = match (v, b) {
                (Some(v), Some(b)) if b != 0.0 => Some(100.0 * (v - b) / b),
                _ => None,
            };
            (c.group.clone(), pct)
        })
        .collect()
}
