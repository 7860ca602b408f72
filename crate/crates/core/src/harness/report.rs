use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classification, Phase, ScenarioOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase: Phase,
    pub scenarios: u32,
    pub success: u32,
    pub conditional_success: u32,
    pub failure: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRow {
    pub scenario_id: String,
    pub phase: Phase,
    pub classification: Classification,
    pub attempts: u32,
}

/// Per-phase counts plus per-scenario attempt counts. Rendering is a pure
/// function of the outcomes, so identical runs give byte-identical output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub rows: Vec<PhaseRow>,
    pub attempts: Vec<AttemptRow>,
}

impl PhaseReport {
    pub fn from_outcomes(outcomes: &[ScenarioOutcome]) -> Self {
        let rows = Phase::ALL
            .iter()
            .filter_map(|&phase| {
                let mut row = PhaseRow { phase, scenarios: 0, success: 0, conditional_success: 0, failure: 0 };
                for o in outcomes.iter().filter(|o| o.phase == phase) {
                    row.scenarios += 1;
                    match o.classification {
                        Classification::Success => row.success += 1,
                        Classification::ConditionalSuccess => row.conditional_success += 1,
                        Classification::Failure => row.failure += 1,
                    }
                }
                (row.scenarios > 0).then_some(row)
            })
            .collect();
        let attempts = outcomes
            .iter()
            .map(|o| AttemptRow {
                scenario_id: o.scenario_id.clone(),
                phase: o.phase,
                classification: o.classification,
                attempts: o.feedback_attempts_used,
            })
            .collect();
        Self { rows, attempts }
    }

    pub fn row(&self, phase: Phase) -> Option<&PhaseRow> {
        self.rows.iter().find(|r| r.phase == phase)
    }

    pub fn render_table(&self) -> String {
        let header = ["Phase", "Number of Scenarios", "Success", "Conditional Success", "Failure"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.phase.label().to_string(),
                    r.scenarios.to_string(),
                    r.success.to_string(),
                    r.conditional_success.to_string(),
                    r.failure.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let mut l = String::new();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(l, "{cell:<w$}");
                } else {
                    let _ = write!(l, " | {cell:>w$}");
                }
            }
            out.push_str(l.trim_end());
            out.push('\n');
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("-+-"));
        out.push('\n');
        for row in &body {
            line(&mut out, &row.each_ref().map(String::as_str));
        }

        out.push_str("\nFeedback attempts per scenario\n");
        for phase in Phase::ALL {
            let ids: Vec<String> = self
                .attempts
                .iter()
                .filter(|a| a.phase == phase)
                .map(|a| format!("{}={}", a.scenario_id, a.attempts))
                .collect();
            if !ids.is_empty() {
                let _ = writeln!(out, "{}: {}", phase.label(), ids.join(" "));
            }
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("phase,scenarios,success,conditional_success,failure\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.phase.key(),
                r.scenarios,
                r.success,
                r.conditional_success,
                r.failure
            );
        }
        out
    }

    pub fn render_attempts_csv(&self) -> String {
        let mut out = String::from("scenario_id,phase,classification,attempts\n");
        for a in &self.attempts {
            let _ = writeln!(out, "{},{},{},{}", a.scenario_id, a.phase.key(), a.classification.as_str(), a.attempts);
        }
        out
    }

    /// Writes `report.txt`, `phases.csv` and `attempts.csv` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.render_table())?;
        std::fs::write(dir.join("phases.csv"), self.render_csv())?;
        std::fs::write(dir.join("attempts.csv"), self.render_attempts_csv())?;
        Ok(())
    }
}
