//! Voxel- and branch-level scores.
//!
//! Everything is derived from integer counts collected per case, so merging
//! cases in any grouping gives the same report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BranchLabeling, CenterlinePolyline, VoxelMask};
use crate::synth::class_name;

/// Raw counts for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub id: String,
    /// `confusion[t][p]`: voxels of true class `t + 1` predicted as `p + 1`.
    pub confusion: Vec<Vec<u64>>,
    /// (true class, assigned class) per centerline branch.
    pub branches: Vec<(Option<u8>, Option<u8>)>,
}

impl CaseCounts {
    /// Compares a predicted mask with the ground truth over the ground
    /// truth's foreground voxels. Predictions outside `1..=classes` on such
    /// voxels are an error.
    pub fn new(
        id: impl Into<String>,
        truth: &VoxelMask,
        predicted: &VoxelMask,
        classes: usize,
        centerlines: &[CenterlinePolyline],
        labeling: Option<&BranchLabeling>,
    ) -> Result<Self> {
        if truth.geometry != predicted.geometry {
            return Err(Error::ShapeMismatch("predicted mask grid differs from the ground truth".into()));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.labels.iter().zip(&predicted.labels) {
            if t == 0 {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t > classes || p == 0 || p > classes {
                return Err(Error::BadTarget {
                    target: if t > classes { t } else { p },
                    classes,
                });
            }
            confusion[t - 1][p - 1] += 1;
        }
        let branches = match labeling {
            Some(l) => {
                if l.branches.len() != centerlines.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} branch labels for {} centerlines",
                        l.branches.len(),
                        centerlines.len()
                    )));
                }
                centerlines.iter().zip(&l.branches).map(|(c, b)| (c.label, b.class)).collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            id: id.into(),
            confusion,
            branches,
        })
    }

    pub fn voxels(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: u8,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth voxel count.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchScores {
    pub class: u8,
    pub name: String,
    /// Correct among branches assigned this class (`None` when no branch
    /// was assigned it).
    pub precision: Option<f64>,
    /// Correct among branches truly of this class, unassigned ones included
    /// (`None` when no branch has it).
    pub recall: Option<f64>,
    pub assigned: u64,
    pub truth: u64,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub voxels: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub branches: usize,
    pub branches_correct: usize,
    pub unassigned: usize,
}

/// Evaluation report. Voxel accuracy and the macro scores are computed per
/// case (macro over the classes present in that case's ground truth) and
/// then averaged over cases; per-class voxel scores and all branch scores
/// pool the counts of every case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cases: usize,
    pub voxel_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// Pooled `confusion[true - 1][predicted - 1]`.
    pub confusion: Vec<Vec<u64>>,
    pub branch_accuracy: Option<f64>,
    pub branch_per_class: Vec<BranchScores>,
    pub branch_total: usize,
    pub unassigned: usize,
    pub per_case: Vec<CaseSummary>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (precision, recall, f1) per class from a confusion matrix.
fn class_scores(confusion: &[Vec<u64>]) -> Vec<(f64, f64, f64, u64)> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, support);
            (p, r, f1(p, r), support)
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(case: &CaseCounts) -> CaseSummary {
    let scores = class_scores(&case.confusion);
    let present = || scores.iter().filter(|s| s.3 > 0);
    CaseSummary {
        id: case.id.clone(),
        voxels: case.voxels(),
        correct: case.correct(),
        accuracy: ratio(case.correct(), case.voxels()),
        macro_precision: mean(present().map(|s| s.0)),
        macro_recall: mean(present().map(|s| s.1)),
        macro_f1: mean(present().map(|s| s.2)),
        branches: case.branches.len(),
        branches_correct: case.branches.iter().filter(|(t, a)| t.is_some() && t == a).count(),
        unassigned: case.branches.iter().filter(|(_, a)| a.is_none()).count(),
    }
}

impl MetricsReport {
    pub fn from_cases(cases: &[CaseCounts], classes: usize) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::ConfigInvalid("no cases to score".into()));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for case in cases {
            if case.confusion.len() != classes || case.confusion.iter().any(|r| r.len() != classes) {
                return Err(Error::ShapeMismatch(format!("case `{}` has a different class count", case.id)));
            }
            for (acc, row) in confusion.iter_mut().zip(&case.confusion) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let per_case: Vec<CaseSummary> = cases.iter().map(summarize).collect();
        let per_class = class_scores(&confusion)
            .into_iter()
            .enumerate()
            .map(|(c, (precision, recall, f1, support))| ClassScores {
                class: c as u8 + 1,
                name: class_name(c as u8 + 1).to_string(),
                precision,
                recall,
                f1,
                support,
            })
            .collect();

        let pairs: Vec<(Option<u8>, Option<u8>)> = cases.iter().flat_map(|c| c.branches.iter().copied()).collect();
        let branch_per_class = (1..=classes as u8)
            .map(|c| {
                let assigned = pairs.iter().filter(|(_, a)| *a == Some(c)).count() as u64;
                let truth = pairs.iter().filter(|(t, _)| *t == Some(c)).count() as u64;
                let correct = pairs.iter().filter(|(t, a)| *t == Some(c) && *a == Some(c)).count() as u64;
                BranchScores {
                    class: c,
                    name: class_name(c).to_string(),
                    precision: (assigned > 0).then(|| ratio(correct, assigned)),
                    recall: (truth > 0).then(|| ratio(correct, truth)),
                    assigned,
                    truth,
                    correct,
                }
            })
            .collect();
        let branch_correct = pairs.iter().filter(|(t, a)| t.is_some() && t == a).count();

        Ok(Self {
            cases: cases.len(),
            voxel_accuracy: mean(per_case.iter().map(|c| c.accuracy)),
            macro_precision: mean(per_case.iter().map(|c| c.macro_precision)),
            macro_recall: mean(per_case.iter().map(|c| c.macro_recall)),
            macro_f1: mean(per_case.iter().map(|c| c.macro_f1)),
            per_class,
            confusion,
            branch_accuracy: (!pairs.is_empty()).then(|| ratio(branch_correct as u64, pairs.len() as u64)),
            branch_per_class,
            branch_total: pairs.len(),
            unassigned: pairs.iter().filter(|(_, a)| a.is_none()).count(),
            per_case,
        })
    }

    /// Plain-text tables for the terminal.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let pct = |v: f64| format!("{:6.2}%", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "      -".to_string(), pct);
        s += &format!(
            "cases {}  voxel accuracy {}  macro P {}  R {}  F1 {}\n",
            self.cases,
            pct(self.voxel_accuracy),
            pct(self.macro_precision),
            pct(self.macro_recall),
            pct(self.macro_f1)
        );
        s += "\nclass      voxel P   voxel R  voxel F1    support  branch P  branch R\n";
        for (v, b) in self.per_class.iter().zip(&self.branch_per_class) {
            s += &format!(
                "{:<8}  {}   {}   {}  {:>9}   {}   {}\n",
                v.name,
                pct(v.precision),
                pct(v.recall),
                pct(v.f1),
                v.support,
                opt(b.precision),
                opt(b.recall)
            );
        }
        s += &format!(
            "\nbranches {}  branch accuracy {}  unassigned {}\n",
            self.branch_total,
            opt(self.branch_accuracy),
            self.unassigned
        );
        s
    }
}
