use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mode: String,
    pub scenario: String,
    pub ap_mean: f64,
    /// Sample standard deviation; 0 for a single repeat.
    pub ap_std: f64,
    pub repeats: usize,
    pub aps: Vec<f64>,
    pub wall_time_s: f64,
}

impl ReportCell {
    pub fn from_samples(mode: &str, scenario: &str, aps: Vec<f64>, wall_time_s: f64) -> Self {
        let n = aps.len();
        let mean = aps.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ReportCell {
            mode: mode.into(),
            scenario: scenario.into(),
            ap_mean: mean,
            ap_std: std,
            repeats: n,
            aps,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub repeats: usize,
    /// Column order.
    pub scenarios: Vec<String>,
    /// Row-major: every scenario of the first mode, then the next mode.
    pub cells: Vec<ReportCell>,
}

/// `AP(mode, scenario) - AP(baseline) >= min_margin`, with a zero baseline
/// when none is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub name: String,
    pub mode: String,
    pub scenario: String,
    #[serde(default)]
    pub baseline_mode: Option<String>,
    #[serde(default)]
    pub baseline_scenario: Option<String>,
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub name: String,
    pub value: Option<f64>,
    pub passed: bool,
}

impl EvalReport {
    pub fn cell(&self, mode: &str, scenario: &str) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.scenario == scenario)
    }

    pub fn modes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.mode) {
                out.push(c.mode.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,scenario,ap_mean,ap_std,repeats,wall_time_s\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{},{:.3}",
                c.mode, c.scenario, c.ap_mean, c.ap_std, c.repeats, c.wall_time_s
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method |");
        for sc in &self.scenarios {
            let _ = write!(s, " {sc} |");
        }
        s.push_str(" Training Time (s) |\n|---|");
        for _ in &self.scenarios {
            s.push_str("---|");
        }
        s.push_str("---|\n");
        for mode in self.modes() {
            let _ = write!(s, "| {mode} |");
            let mut wall = 0.0;
            for sc in &self.scenarios {
                match self.cell(&mode, sc) {
                    Some(c) => {
                        wall = c.wall_time_s;
                        let _ = write!(s, " {:.4} ± {:.4} |", c.ap_mean, c.ap_std);
                    }
                    None => s.push_str(" - |"),
                }
            }
            let _ = writeln!(s, " {wall:.1} |");
        }
        s
    }

    pub fn check(&self, thresholds: &[Threshold]) -> Vec<ThresholdOutcome> {
        thresholds
            .iter()
            .map(|t| {
                let lhs = self.cell(&t.mode, &t.scenario).map(|c| c.ap_mean);
                let rhs = match (&t.baseline_mode, &t.baseline_scenario) {
                    (None, None) => Some(0.0),
                    (m, s) => self
                        .cell(
                            m.as_deref().unwrap_or(&t.mode),
                            s.as_deref().unwrap_or(&t.scenario),
                        )
                        .map(|c| c.ap_mean),
                };
                let value = lhs.zip(rhs).map(|(a, b)| a - b);
                ThresholdOutcome {
                    name: t.name.clone(),
                    value,
                    passed: value.is_some_and(|v| v >= t.min_margin),
                }
            })
            .collect()
    }
}
