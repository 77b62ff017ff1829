//! Gradient-check report: every primitive, the tiny end-to-end network, and
//! a negative control that must be caught.

use serde::Serialize;

use crate::error::Result;
use crate::model::gradcheck::end_to_end;
use crate::nn::gradcheck::{corrupted_control, primitive_suite, CheckEntry};

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl From<&CheckEntry> for CheckLine {
    fn from(e: &CheckEntry) -> Self {
        Self {
            name: e.name.clone(),
            max_rel_error: e.result.max_rel_error,
            max_abs_error: e.result.max_abs_error,
            checked: e.result.checked,
            kinks: e.result.kinks,
            tolerance: e.tolerance,
            passed: e.passed(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub primitives: Vec<CheckLine>,
    pub end_to_end: CheckLine,
    /// The corrupted rule; `passed` here means it was flagged.
    pub control: CheckLine,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.primitives.iter().all(|l| l.passed) && self.end_to_end.passed && self.control.passed
    }

    pub fn failures(&self) -> Vec<&str> {
        self.primitives
            .iter()
            .chain([&self.end_to_end, &self.control])
            .filter(|l| !l.passed)
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("check                              max rel err   tolerance  kinks  result\n");
        for l in self.primitives.iter().chain([&self.end_to_end]) {
            s += &format!(
                "{:<34} {:>11.3e}   {:>9.0e}  {:>5}  {}\n",
                l.name,
                l.max_rel_error,
                l.tolerance,
                l.kinks,
                if l.passed { "ok" } else { "FAIL" }
            );
        }
        s += &format!(
            "{:<34} {:>11.3e}   {:>9.0e}  {:>5}  {}\n",
            self.control.name,
            self.control.max_rel_error,
            self.control.tolerance,
            self.control.kinks,
            if self.control.passed { "flagged (ok)" } else { "MISSED" }
        );
        s
    }
}

pub fn run_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let primitives = primitive_suite(seed)?.iter().map(CheckLine::from).collect();
    let end_to_end = CheckLine::from(&end_to_end(seed)?);
    let mut control = CheckLine::from(&corrupted_control(seed)?);
    control.passed = !control.passed;
    Ok(GradCheckReport {
        seed,
        primitives,
        end_to_end,
        control,
    })
}
