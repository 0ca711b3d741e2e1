//! Edit-distance scoring and baseline-relative reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SegmentDecode;
use crate::dataset::UtteranceRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    Ins,
    Del,
}

/// Minimal-cost alignment as a list of operations in reference order.
fn align(reference: &[u32], hyp: &[u32]) -> Vec<Op> {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, v) in d[0].iter_mut().enumerate() {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]) {
            ops.push(if reference[i - 1] == hyp[j - 1] { Op::Match } else { Op::Sub });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(Op::Del);
            i -= 1;
        } else {
            ops.push(Op::Ins);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn edit_distance(reference: &[u32], hyp: &[u32]) -> EditCounts {
    let mut c = EditCounts::default();
    for op in align(reference, hyp) {
        match op {
            Op::Match => {}
            Op::Sub => c.substitutions += 1,
            Op::Ins => c.insertions += 1,
            Op::Del => c.deletions += 1,
        }
    }
    c
}

/// `(S + I + D) / |ref|`; with an empty reference, the insertion count.
pub fn error_rate(reference: &[u32], hyp: &[u32]) -> f64 {
    let e = edit_distance(reference, hyp).errors() as f64;
    if reference.is_empty() {
        e
    } else {
        e / reference.len() as f64
    }
}

/// Errors on the reference tokens selected by `member`: each selected token
/// that is substituted or deleted in the alignment counts once. Returns
/// `(errors, selected tokens)`.
pub fn subset_errors(reference: &[u32], hyp: &[u32], member: impl Fn(u32) -> bool) -> (usize, usize) {
    let (mut errors, mut total) = (0, 0);
    let mut i = 0;
    for op in align(reference, hyp) {
        if op == Op::Ins {
            continue;
        }
        if member(reference[i]) {
            total += 1;
            errors += usize::from(op != Op::Match);
        }
        i += 1;
    }
    (errors, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringUnit {
    Tokens,
    Words,
}

impl ScoringUnit {
    fn rate_name(self) -> &'static str {
        match self {
            ScoringUnit::Tokens => "TER",
            ScoringUnit::Words => "WER",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub edits: EditCounts,
    pub ref_tokens: usize,
    pub subset_errors: usize,
    pub subset_tokens: usize,
}

impl ErrorTally {
    pub fn errors(&self) -> usize {
        self.edits.errors()
    }

    pub fn rate(&self) -> Option<f64> {
        (self.ref_tokens > 0).then(|| self.errors() as f64 / self.ref_tokens as f64)
    }

    /// Error rate over the selected subset of reference tokens.
    pub fn subset_rate(&self) -> Option<f64> {
        (self.subset_tokens > 0).then(|| self.subset_errors as f64 / self.subset_tokens as f64)
    }

    fn add(&mut self, reference: &[u32], hyp: &[u32], member: &dyn Fn(u32) -> bool) {
        let c = edit_distance(reference, hyp);
        self.edits.substitutions += c.substitutions;
        self.edits.insertions += c.insertions;
        self.edits.deletions += c.deletions;
        self.ref_tokens += reference.len();
        let (e, n) = subset_errors(reference, hyp, member);
        self.subset_errors += e;
        self.subset_tokens += n;
    }
}

/// Error counts of one system, overall and per condition tag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemScores {
    pub overall: ErrorTally,
    pub conditions: BTreeMap<String, ErrorTally>,
}

/// Scores `decodes` against the labeled segments of `records`.
///
/// Every labeled segment must have exactly one decode. `member` selects the
/// reference tokens of the subset tally.
pub fn score_system(
    records: &[&UtteranceRecord],
    decodes: &[SegmentDecode],
    member: &dyn Fn(u32) -> bool,
) -> Result<SystemScores> {
    let mut by_key: BTreeMap<(&str, usize), &SegmentDecode> = BTreeMap::new();
    for d in decodes {
        if by_key.insert((d.utterance.as_str(), d.segment), d).is_some() {
            return Err(Error::Record {
                id: d.utterance.clone(),
                message: format!("segment {} decoded twice", d.segment),
            });
        }
    }
    let mut scores = SystemScores::default();
    for r in records {
        for (i, seg) in r.labeled_segments() {
            let reference = seg.labels.as_deref().expect("labeled");
            let d = by_key.get(&(r.id.as_str(), i)).ok_or_else(|| Error::Record {
                id: r.id.clone(),
                message: format!("no decode for segment {i}"),
            })?;
            scores.overall.add(reference, &d.labels, member);
            for c in &r.conditions {
                scores
                    .conditions
                    .entry(c.as_str().to_owned())
                    .or_default()
                    .add(reference, &d.labels, member);
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub ref_tokens: usize,
    pub baseline_rate: f64,
    pub system_rate: f64,
    /// Rates divided by the baseline's overall rate.
    pub baseline_nwer: f64,
    pub system_nwer: f64,
    /// Relative reduction, `(baseline - system) / baseline`.
    pub werr: f64,
    pub baseline_subset_rate: Option<f64>,
    pub system_subset_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unit: ScoringUnit,
    /// First row is `overall`.
    pub rows: Vec<ConditionRow>,
    /// Conditions without reference tokens in either system.
    pub skipped: Vec<String>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn reduction(base: f64, new: f64) -> f64 {
    if base > 0.0 {
        (base - new) / base
    } else if new == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

pub fn compare_systems(baseline: &SystemScores, system: &SystemScores, unit: ScoringUnit) -> EvalReport {
    let norm = baseline.overall.rate().unwrap_or(0.0);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut names: Vec<&String> = baseline.conditions.keys().chain(system.conditions.keys()).collect();
    names.sort();
    names.dedup();
    let mut entries = vec![("overall".to_owned(), Some(&baseline.overall), Some(&system.overall))];
    entries.extend(
        names
            .into_iter()
            .map(|n| (n.clone(), baseline.conditions.get(n), system.conditions.get(n))),
    );
    for (name, b, s) in entries {
        let (Some(b), Some(s)) = (b, s) else {
            skipped.push(name);
            continue;
        };
        let (Some(br), Some(sr)) = (b.rate(), s.rate()) else {
            skipped.push(name);
            continue;
        };
        rows.push(ConditionRow {
            condition: name,
            ref_tokens: b.ref_tokens,
            baseline_rate: br,
            system_rate: sr,
            baseline_nwer: ratio(br, norm),
            system_nwer: ratio(sr, norm),
            werr: reduction(br, sr),
            baseline_subset_rate: b.subset_rate(),
            system_subset_rate: s.subset_rate(),
        });
    }
    EvalReport { unit, rows, skipped }
}

impl EvalReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// Plain-text table, one condition per line.
    pub fn to_table(&self) -> String {
        let rate = self.unit.rate_name();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>7} {:>9} {:>9} {:>8} {:>8} {:>8} {:>9} {:>9}",
            "condition",
            "tokens",
            format!("base_{rate}"),
            format!("sys_{rate}"),
            "base_n",
            "sys_n",
            "WERR",
            "base_amb",
            "sys_amb"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<20} {:>7} {:>9.4} {:>9.4} {:>8.3} {:>8.3} {:>8.3} {:>9} {:>9}",
                r.condition,
                r.ref_tokens,
                r.baseline_rate,
                r.system_rate,
                r.baseline_nwer,
                r.system_nwer,
                r.werr,
                opt(r.baseline_subset_rate),
                opt(r.system_subset_rate)
            );
        }
        out
    }
}
