//! Table-style reports: a baseline accuracy column followed by one column of
//! absolute point deltas per condition.

use crate::conditions::Condition;
use crate::error::{Error, Result};
use crate::evaluation::{delta_points, format_delta, format_percent, macro_average, median};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// A condition's accuracy next to the baseline, with the p-value of the
/// difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionScore {
    pub accuracy: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Leading columns, e.g. corpus and size label.
    pub lead: Vec<String>,
    pub baseline: f64,
    /// One entry per reported condition; `None` renders as `n/a`.
    pub scores: Vec<Option<ConditionScore>>,
}

impl ReportRow {
    pub fn delta(&self, i: usize) -> Option<f64> {
        self.scores[i].map(|s| delta_points(self.baseline, s.accuracy))
    }

    /// Rendered delta cell, e.g. `+9.56*` or `n/a`.
    pub fn cell(&self, i: usize) -> String {
        match self.scores[i] {
            Some(s) => format_delta(
                delta_points(self.baseline, s.accuracy),
                s.p_value < SIGNIFICANCE_LEVEL,
            ),
            None => "n/a".into(),
        }
    }
}

/// Macro row over several rows of the same shape. Accuracies are averaged
/// without weights; a condition missing from any row is missing here, and
/// its p-value is the median of the rows' p-values.
pub fn macro_row(lead: Vec<String>, rows: &[&ReportRow]) -> Result<ReportRow> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("macro row over no rows".into()))?;
    let width = first.scores.len();
    if rows.iter().any(|r| r.scores.len() != width) {
        return Err(Error::InvalidArgument("rows differ in width".into()));
    }
    let baseline = macro_average(&rows.iter().map(|r| r.baseline).collect::<Vec<_>>())?;
    let scores = (0..width)
        .map(|i| {
            let cells: Option<Vec<ConditionScore>> = rows.iter().map(|r| r.scores[i]).collect();
            let cells = cells?;
            let acc: Vec<f64> = cells.iter().map(|c| c.accuracy).collect();
            let ps: Vec<f64> = cells.iter().map(|c| c.p_value).collect();
            Some(ConditionScore {
                accuracy: macro_average(&acc).ok()?,
                p_value: median(&ps)?,
            })
        })
        .collect();
    Ok(ReportRow {
        lead,
        baseline,
        scores,
    })
}

/// Tab-separated table with a header line.
pub fn render(
    lead_headers: &[&str],
    conditions: &[Condition],
    rows: &[ReportRow],
) -> Result<String> {
    let mut out = String::new();
    let mut header: Vec<&str> = lead_headers.to_vec();
    header.push(Condition::MtlBaseline.label());
    header.extend(conditions.iter().map(|c| c.label()));
    out.push_str(&header.join("\t"));
    out.push('\n');
    for r in rows {
        if r.lead.len() != lead_headers.len() || r.scores.len() != conditions.len() {
            return Err(Error::InvalidArgument(
                "report row does not match the header".into(),
            ));
        }
        let mut cols = r.lead.clone();
        cols.push(format_percent(r.baseline));
        cols.extend((0..conditions.len()).map(|i| r.cell(i)));
        out.push_str(&cols.join("\t"));
        out.push('\n');
    }
    Ok(out)
}
