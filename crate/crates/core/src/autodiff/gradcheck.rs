//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per block; `None` checks all of them.
    pub max_entries_per_block: Option<usize>,
    /// Seed for choosing which entries to check when sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries_per_block: None,
            seed: 0,
        }
    }
}

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// One-sided differences are only first-order accurate, so kink entries are
/// held to this looser bound.
pub const ONE_SIDED_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries with a kink within one step (ReLU or pinball breakpoints),
    /// checked against one-sided differences instead.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
    pub numeric_failure: Option<String>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.blocks.iter().map(|b| b.kinks).sum()
    }
}

/// Compares tape gradients of `loss` against central differences for
/// every parameter block.
///
/// `loss` receives a fresh tape and one var per block of `params` (bound as
/// gradient-carrying leaves) and must return a scalar.
pub fn grad_check<F>(params: &ParamSet, loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let base = tape.value(out).item();
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&values)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    if let Some((b, _)) = analytic
        .iter()
        .enumerate()
        .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
    {
        return Ok(failure(format!("non-finite analytic gradient in block {}", names[b])));
    }
    if !base.is_finite() {
        return Ok(failure(format!("non-finite loss {base}")));
    }

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut blocks = Vec::with_capacity(values.len());
    let h = opts.step;
    for b in 0..values.len() {
        let n = values[b].numel();
        let entries: Vec<usize> = match opts.max_entries_per_block {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut report = BlockReport {
            name: names[b].clone(),
            checked: 0,
            max_rel_error: 0.0,
            kinks: 0,
        };
        for i in entries {
            let orig = values[b].data()[i];
            values[b].data_mut()[i] = orig + h;
            let plus = eval(&values)?;
            values[b].data_mut()[i] = orig - h;
            let minus = eval(&values)?;
            values[b].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Ok(failure(format!("non-finite loss perturbing {}[{i}]", names[b])));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[b][i], numeric);
            report.checked += 1;
            if err >= opts.tolerance {
                // A breakpoint within one step skews the central difference by
                // about half the jump between the one-sided slopes. There the
                // analytic value must match the slope on the smooth side.
                let forward = (plus - base) / h;
                let backward = (base - minus) / h;
                if (forward - backward).abs() >= (numeric - analytic[b][i]).abs() {
                    report.kinks += 1;
                    let one_sided = relative_error(analytic[b][i], forward).min(relative_error(analytic[b][i], backward));
                    if one_sided > ONE_SIDED_TOLERANCE {
                        report.max_rel_error = report.max_rel_error.max(err);
                    }
                    continue;
                }
            }
            report.max_rel_error = report.max_rel_error.max(err);
        }
        blocks.push(report);
    }

    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < opts.tolerance,
        blocks,
        max_rel_error,
        numeric_failure: None,
    })
}

fn failure(message: String) -> GradCheckReport {
    GradCheckReport {
        blocks: Vec::new(),
        max_rel_error: f64::INFINITY,
        numeric_failure: Some(message),
        passed: false,
    }
}
