//! Point and interval scores: MSPE, PICP and MPIW.
//!
//! Observations use NaN for missing; a missing observation removes its whole
//! row from every score. Coverage counts the interval endpoints as inside.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Scored (observed) entries.
    pub n: usize,
    pub mspe: f64,
    pub picp: f64,
    pub mpiw: f64,
}

pub const REPORT_CSV_HEADER: &str = "n,mspe,picp,mpiw";

impl EvalReport {
    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{REPORT_CSV_HEADER}\n{},{},{},{}\n", self.n, self.mspe, self.picp, self.mpiw)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scored observations: {}", self.n)?;
        writeln!(f, "MSPE: {:.6}", self.mspe)?;
        writeln!(f, "PICP: {:.6}", self.picp)?;
        write!(f, "MPIW: {:.6}", self.mpiw)
    }
}

fn check_lengths(lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Shape(format!("metric inputs have differing lengths {lens:?}")));
    }
    Ok(())
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("{what}[{i}] is {}", values[i]))),
        None => Ok(()),
    }
}

fn check_intervals(lower: &[f64], upper: &[f64]) -> Result<()> {
    check_finite("lower", lower)?;
    check_finite("upper", upper)?;
    match lower.iter().zip(upper).position(|(l, u)| l > u) {
        Some(index) => Err(Error::InvalidInterval {
            index,
            lower: lower[index],
            upper: upper[index],
        }),
        None => Ok(()),
    }
}

/// Rows with an observed `y`.
fn observed(y: &[f64]) -> Vec<usize> {
    (0..y.len()).filter(|&i| !y[i].is_nan()).collect()
}

/// Mean squared error of `median` against observed `y`.
pub fn mspe(y: &[f64], median: &[f64]) -> Result<f64> {
    check_lengths(&[y.len(), median.len()])?;
    let rows = observed(y);
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pred: Vec<f64> = rows.iter().map(|&i| median[i]).collect();
    check_finite("median", &pred)?;
    Ok(rows.iter().map(|&i| (y[i] - median[i]).powi(2)).sum::<f64>() / rows.len() as f64)
}

/// Fraction of observed `y` with `lower <= y <= upper`.
pub fn picp(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_lengths(&[y.len(), lower.len(), upper.len()])?;
    check_intervals(lower, upper)?;
    let rows = observed(y);
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let covered = rows.iter().filter(|&&i| lower[i] <= y[i] && y[i] <= upper[i]).count();
    Ok(covered as f64 / rows.len() as f64)
}

/// Mean of `upper - lower`.
pub fn mpiw(lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_lengths(&[lower.len(), upper.len()])?;
    check_intervals(lower, upper)?;
    if lower.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / lower.len() as f64)
}

/// All three scores over the rows where `y` is observed.
pub fn evaluate(y: &[f64], lower: &[f64], median: &[f64], upper: &[f64]) -> Result<EvalReport> {
    check_lengths(&[y.len(), lower.len(), median.len(), upper.len()])?;
    let rows = observed(y);
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let pick = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
    let (y, lower, median, upper) = (pick(y), pick(lower), pick(median), pick(upper));
    Ok(EvalReport {
        n: rows.len(),
        mspe: mspe(&y, &median)?,
        picp: picp(&y, &lower, &upper)?,
        mpiw: mpiw(&lower, &upper)?,
    })
}
