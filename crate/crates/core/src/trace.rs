//! Per-iteration solver diagnostics and their CSV export.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One outer-iteration record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Value of the objective the solver is driving down.
    pub objective: f64,
    /// Data misfit ||A u - b||_2.
    pub misfit: f64,
    /// Relative change |  ||u_k|| - ||u_{k+1}||  | / ||u_k|| (the stopping
    /// quantity).
    pub rel_change: f64,
    /// Diagnostic ||u_{k+1} - u_k|| / ||u_k||.
    pub step_norm: f64,
    /// PSNR against ground truth when one was supplied.
    pub psnr: Option<f64>,
}

/// Full iteration history of a solve.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(
            self.records
                .last()
                .map(|r| record.iteration > r.iteration)
                .unwrap_or(true),
            "iteration indices must increase"
        );
        self.records.push(record);
    }

    pub fn last_iteration(&self) -> usize {
        self.records.last().map(|r| r.iteration).unwrap_or(0)
    }

    /// Appends another trace, keeping its iteration numbering.
    pub fn extend(&mut self, other: ConvergenceTrace) {
        self.records.extend(other.records);
        self.converged = other.converged;
    }

    /// Renders the fixed-schema CSV: iteration, objective, misfit,
    /// rel_change, psnr. The psnr field is empty when unavailable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective,misfit,rel_change,psnr\n");
        for r in &self.records {
            let psnr = r.psnr.map(crate::experiment::g6).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration,
                crate::experiment::g6(r.objective),
                crate::experiment::g6(r.misfit),
                crate::experiment::g6(r.rel_change),
                psnr
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_header_and_optional_psnr() {
        let mut trace = ConvergenceTrace::default();
        trace.push(TraceRecord {
            iteration: 1,
            objective: 10.0,
            misfit: 2.0,
            rel_change: 0.5,
            step_norm: 0.4,
            psnr: None,
        });
        trace.push(TraceRecord {
            iteration: 2,
            objective: 8.0,
            misfit: 1.0,
            rel_change: 0.25,
            step_norm: 0.2,
            psnr: Some(30.125),
        });
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,objective,misfit,rel_change,psnr"
        );
        assert!(lines.next().unwrap().ends_with(','));
        assert!(lines.next().unwrap().contains("30.125"));
    }
}
