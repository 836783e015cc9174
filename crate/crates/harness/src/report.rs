use std::fmt::Write as _;

use crate::experiment::ExperimentReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

pub const CSV_HEADER: &str = "experiment,config,mean,std,ci_low,ci_high";

fn csv_row(r: &ExperimentReport) -> String {
    format!(
        "{},{},{:.4},{:.4},{:.4},{:.4}",
        r.experiment, r.config, r.mean, r.std, r.ci_low, r.ci_high
    )
}

/// Renders one row per report. Timing is left out so output is reproducible.
pub fn emit_report(reports: &[ExperimentReport], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in reports {
                out.push_str(&csv_row(r));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let _ = writeln!(
                out,
                "{:<22} {:<9} {:>8} {:>8}  {:<18} {:>6} {:>8}",
                "Experiment", "Config", "Mean Acc", "Std Dev", "95% CI", "Seeds", "Excluded"
            );
            for r in reports {
                let _ = writeln!(
                    out,
                    "{:<22} {:<9} {:>8.4} {:>8.4}  ({:.4}, {:.4}) {:>6} {:>8.4}",
                    r.experiment.name(),
                    r.config,
                    r.mean,
                    r.std,
                    r.ci_low,
                    r.ci_high,
                    r.seeds.len(),
                    r.excluded_fraction
                );
                for s in r.seeds.iter().filter(|s| s.error.is_some()) {
                    let _ = writeln!(out, "  seed {} failed: {}", s.seed, s.error.as_deref().unwrap_or(""));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{ExperimentKind, ExperimentReport};

    fn perfect() -> ExperimentReport {
        ExperimentReport {
            experiment: ExperimentKind::Simulation,
            config: "1".into(),
            seeds: Vec::new(),
            accuracies: vec![1.0; 5],
            mean: 1.0,
            std: 0.0,
            ci_low: 1.0,
            ci_high: 1.0,
            excluded_fraction: 0.0,
            failures: 0,
            runtime_seconds: 1.25,
        }
    }

    #[test]
    fn csv_uses_four_decimals() {
        let text = emit_report(&[perfect()], ReportFormat::Csv);
        assert_eq!(
            text,
            "experiment,config,mean,std,ci_low,ci_high\nSIMULATION,1,1.0000,0.0000,1.0000,1.0000\n"
        );
    }

    #[test]
    fn table_shows_interval() {
        let text = emit_report(&[perfect()], ReportFormat::Table);
        assert!(text.contains("1.0000   0.0000  (1.0000, 1.0000)"), "{text}");
    }

    #[test]
    fn timing_does_not_reach_output() {
        let mut slow = perfect();
        slow.runtime_seconds = 99.0;
        for f in [ReportFormat::Csv, ReportFormat::Table] {
            assert_eq!(emit_report(&[perfect()], f), emit_report(&[slow.clone()], f));
        }
    }
}
