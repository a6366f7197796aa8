//! Aggregated experiment metrics with small-sample confidence intervals.

use serde::{Deserialize, Serialize};
use std::path::Path;

/// Two-sided 95% t critical values by degrees of freedom (1..=10); the
/// normal value is close enough beyond that.
const T_975: [f64; 10] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
];

/// Mean and 95% CI half-width of the mean (t-distribution, sample std).
/// Singleton samples get a zero-width interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    assert!(!samples.is_empty(), "mean of nothing");
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = if n - 1 <= 10 { T_975[n - 2] } else { 1.96 };
    (mean, t * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub label: String,
    pub success_mean: f64,
    pub ci95_half_width: f64,
    /// Mean episode length; failed episodes count as the 200-step timeout.
    pub avg_length: f64,
    pub per_seed_success: Vec<f64>,
}

impl ConditionMetrics {
    pub fn from_samples(label: &str, successes: &[f64], lengths: &[f64]) -> ConditionMetrics {
        let (mean, hw) = mean_ci95(successes);
        ConditionMetrics {
            label: label.to_string(),
            success_mean: mean,
            ci95_half_width: hw,
            avg_length: lengths.iter().sum::<f64>() / lengths.len() as f64,
            per_seed_success: successes.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub code_version: String,
    pub conditions: Vec<ConditionMetrics>,
}

impl MetricsReport {
    pub fn new(config_hash: String) -> MetricsReport {
        MetricsReport {
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            conditions: Vec::new(),
        }
    }

    pub fn condition(&self, label: &str) -> Option<&ConditionMetrics> {
        self.conditions.iter().find(|c| c.label == label)
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json)
    }

    /// Schema-stable CSV: one row per condition.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "config_hash,label,success_mean,ci95_half_width,avg_length,per_seed_success\n",
        );
        for c in &self.conditions {
            let per_seed = c
                .per_seed_success
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.config_hash, c.label, c.success_mean, c.ci95_half_width, c.avg_length, per_seed
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ci_matches_hand_computation_for_three_seeds() {
        // samples 0.5, 0.6, 0.7: mean 0.6, sample std 0.1, t(2) = 4.303
        let (mean, hw) = mean_ci95(&[0.5, 0.6, 0.7]);
        assert_relative_eq!(mean, 0.6, epsilon = 1e-12);
        assert_relative_eq!(hw, 4.303 * 0.1 / 3.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn singleton_sample_has_zero_width() {
        let (mean, hw) = mean_ci95(&[0.42]);
        assert_eq!(mean, 0.42);
        assert_eq!(hw, 0.0);
    }

    #[test]
    fn identical_samples_have_zero_width() {
        let (mean, hw) = mean_ci95(&[0.3, 0.3, 0.3]);
        assert_relative_eq!(mean, 0.3, epsilon = 1e-12);
        assert_relative_eq!(hw, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_has_documented_header_and_one_row_per_condition() {
        let mut report = MetricsReport::new("abc123".into());
        report.conditions.push(ConditionMetrics::from_samples(
            "size_1",
            &[0.1, 0.2, 0.3],
            &[200.0, 150.0, 100.0],
        ));
        report.conditions.push(ConditionMetrics::from_samples(
            "size_15",
            &[0.5, 0.6, 0.7],
            &[90.0, 80.0, 70.0],
        ));
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("config_hash,label,"));
        assert!(lines[1].starts_with("abc123,size_1,"));
        assert!(lines[2].contains("0.5;0.6;0.7"));
    }

    #[test]
    fn report_json_round_trips() {
        let mut report = MetricsReport::new("deadbeef".into());
        report
            .conditions
            .push(ConditionMetrics::from_samples("c", &[1.0], &[12.0]));
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config_hash, "deadbeef");
        assert_eq!(back.conditions[0].label, "c");
    }
}
