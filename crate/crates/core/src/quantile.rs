//! Quantile triples, the non-crossing output activation and pinball loss.
//!
//! Raw network outputs `(a, b, c)` map to
//! `(a - softplus(b), a, a + softplus(c))`, so the lower bound never exceeds
//! the median and the median never exceeds the upper bound, whatever the
//! parameters.

use crate::autodiff::{softplus, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileTriple {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

impl QuantileTriple {
    pub fn is_ordered(&self) -> bool {
        self.lower <= self.median && self.median <= self.upper
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lower: f(self.lower),
            median: f(self.median),
            upper: f(self.upper),
        }
    }
}

/// Quantile levels `(low, mid, high)` with `0 < low < mid < high < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for Quantiles {
    /// The central 95% interval around the median.
    fn default() -> Self {
        Self {
            low: 0.025,
            mid: 0.5,
            high: 0.975,
        }
    }
}

impl Quantiles {
    pub fn new(low: f64, mid: f64, high: f64) -> Result<Self> {
        if !(0.0 < low && low < mid && mid < high && high < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile levels must satisfy 0 < low < mid < high < 1, got ({low}, {mid}, {high})"
            )));
        }
        Ok(Self { low, mid, high })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.low, self.mid, self.high]
    }
}

pub fn output_activation(raw: [f64; 3]) -> QuantileTriple {
    let [a, b, c] = raw;
    QuantileTriple {
        lower: a - softplus(b),
        median: a,
        upper: a + softplus(c),
    }
}

/// `rho_tau(u) = u (tau - 1[u < 0])`.
pub fn pinball(tau: f64, residual: f64) -> f64 {
    if residual < 0.0 {
        residual * (tau - 1.0)
    } else {
        residual * tau
    }
}

/// Summed pinball loss of a triple at the three quantile levels.
pub fn pinball_loss(pred: &QuantileTriple, y: f64, q: &Quantiles) -> Result<f64> {
    if y.is_nan() || pred.lower.is_nan() || pred.median.is_nan() || pred.upper.is_nan() {
        return Err(Error::Numeric("NaN in pinball loss input".into()));
    }
    Ok(pinball(q.low, y - pred.lower) + pinball(q.mid, y - pred.median) + pinball(q.high, y - pred.upper))
}

/// Output of the activation on the tape: three same-shaped vars.
#[derive(Debug, Clone, Copy)]
pub struct TripleVars {
    pub lower: Var,
    pub median: Var,
    pub upper: Var,
}

/// Applies the non-crossing activation to three raw vars.
pub fn output_activation_on_tape(tape: &mut Tape, a: Var, b: Var, c: Var) -> Result<TripleVars> {
    let sb = tape.softplus(b);
    let sc = tape.softplus(c);
    Ok(TripleVars {
        lower: tape.sub(a, sb)?,
        median: a,
        upper: tape.add(a, sc)?,
    })
}

/// Sum over observed entries of the pinball loss at one level, on the tape.
///
/// `target` and `mask` are data of the prediction's shape; masked entries
/// (mask 0) contribute nothing. Uses `rho_tau(u) = tau u + relu(-u)`.
pub fn pinball_sum_on_tape(tape: &mut Tape, pred: Var, target: Var, mask: Var, tau: f64) -> Result<Var> {
    let u = tape.sub(target, pred)?;
    let linear = tape.scale(u, tau);
    let neg = tape.neg(u);
    let hinge = tape.relu(neg);
    let rho = tape.add(linear, hinge)?;
    let masked = tape.mul(rho, mask)?;
    Ok(tape.sum(masked))
}

/// Sum over observed entries of `targets` (NaN = missing) of the summed
/// pinball loss of a triple. Returns the loss var and the observed count.
pub fn masked_triple_sum(tape: &mut Tape, pred: &TripleVars, targets: &[f64], q: &Quantiles) -> Result<(Var, usize)> {
    let shape = tape.shape(pred.median).to_vec();
    let n: usize = shape.iter().product();
    if targets.len() != n {
        return Err(Error::Shape(format!("targets have {} entries, predictions {shape:?}", targets.len())));
    }
    let observed = targets.iter().filter(|y| !y.is_nan()).count();
    let mask = Tensor::new(shape.clone(), targets.iter().map(|y| if y.is_nan() { 0.0 } else { 1.0 }).collect())?;
    let filled = Tensor::new(shape, targets.iter().map(|y| if y.is_nan() { 0.0 } else { *y }).collect())?;
    let mask = tape.constant(mask);
    let target = tape.constant(filled);
    let lo = pinball_sum_on_tape(tape, pred.lower, target, mask, q.low)?;
    let mid = pinball_sum_on_tape(tape, pred.median, target, mask, q.mid)?;
    let hi = pinball_sum_on_tape(tape, pred.upper, target, mask, q.high)?;
    let total = tape.add(lo, mid)?;
    Ok((tape.add(total, hi)?, observed))
}

/// [`masked_triple_sum`] divided by the observed count. With no observed
/// entries the loss is an exact zero.
pub fn masked_triple_loss(
    tape: &mut Tape,
    pred: &TripleVars,
    targets: &[f64],
    q: &Quantiles,
) -> Result<(Var, usize)> {
    let (sum, observed) = masked_triple_sum(tape, pred, targets, q)?;
    Ok((tape.scale(sum, 1.0 / observed.max(1) as f64), observed))
}
