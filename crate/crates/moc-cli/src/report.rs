//! CSV report with a fixed column schema:
//! `task,episodes,success_rate,mean_steps,token_reduction,t_full_ms,t_comp_ms,speedup`.
//!
//! Timing columns are left empty for runs that do not benchmark (sim), so
//! the non-timing columns of any report are deterministic for a fixed
//! seed and golden-file comparable.

use std::fmt::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str =
    "task,episodes,success_rate,mean_steps,token_reduction,t_full_ms,t_comp_ms,speedup";

pub struct ReportRow {
    pub task: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub token_reduction: f64,
    /// `(t_full_ms, t_comp_ms, speedup)`; None prints empty columns.
    pub timing: Option<(f64, f64, f64)>,
}

impl ReportRow {
    fn to_csv_line(&self) -> String {
        let timing = match self.timing {
            Some((full, comp, speedup)) => format!("{full:.3},{comp:.3},{speedup:.3}"),
            None => ",,".to_string(),
        };
        format!(
            "{},{},{:.4},{:.2},{:.4},{}",
            self.task, self.episodes, self.success_rate, self.mean_steps, self.token_reduction, timing
        )
    }
}

#[derive(Default)]
pub struct Report {
    rows: Vec<ReportRow>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv_line());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), String> {
        std::fs::write(path, self.to_csv()).map_err(|e| format!("{}: {e}", path.display()))
    }
}
