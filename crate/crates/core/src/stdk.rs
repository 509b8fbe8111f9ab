//! The interpolation network: basis embedding -> ReLU MLP -> quantile triple.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, glorot_uniform, Adam, ParamSet, Tape, Tensor, Var};
use crate::basis::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::quantile::{masked_triple_loss, output_activation_on_tape, pinball_loss, Quantiles, QuantileTriple, TripleVars};

/// Five layers of 100 units followed by four of 50.
pub const DEFAULT_HIDDEN_LAYOUT: [usize; 9] = [100, 100, 100, 100, 100, 50, 50, 50, 50];

const PREDICT_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct StdkConfig {
    pub hidden_layout: Vec<usize>,
    pub quantiles: Quantiles,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of groups (stations) held out to pick the epoch whose
    /// parameters are kept; 0 keeps the last epoch.
    pub validation_fraction: f64,
}

impl Default for StdkConfig {
    fn default() -> Self {
        Self {
            hidden_layout: DEFAULT_HIDDEN_LAYOUT.to_vec(),
            quantiles: Quantiles::default(),
            epochs: 100,
            batch_size: 256,
            lr: 1e-3,
            validation_fraction: 0.1,
        }
    }
}

impl StdkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layout.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be >= 1".into()));
        }
        Quantiles::new(self.quantiles.low, self.quantiles.mid, self.quantiles.high)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Layer widths from input to the three-unit head.
    fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden_layout);
        w.push(3);
        w
    }
}

/// Weights and biases of every dense layer, in closed form.
pub fn parameter_count(hidden_layout: &[usize], input_dim: usize) -> usize {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden_layout);
    dims.push(3);
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdkModel {
    pub config: StdkConfig,
    pub input_dim: usize,
    pub params: ParamSet,
}

pub fn build_model(config: &StdkConfig, input_dim: usize, seed: u64) -> Result<StdkModel> {
    config.validate()?;
    if input_dim == 0 {
        return Err(Error::InvalidArgument("input dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = config.widths(input_dim);
    let mut params = ParamSet::new();
    let last = widths.len() - 2;
    for (i, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let prefix = if i == last { "head".to_string() } else { format!("hidden.{i}") };
        params.push(format!("{prefix}.weight"), glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, &mut rng));
        params.push(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
    }
    log::debug!(
        "built interpolator: layout {:?}, input {input_dim}, {} parameters",
        config.hidden_layout,
        params.num_scalars()
    );
    Ok(StdkModel {
        config: config.clone(),
        input_dim,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LossTerms {
    All,
    #[cfg(test)]
    MedianOnly,
}

impl StdkModel {
    /// Forward pass for `x [B x input_dim]` with parameter vars bound in
    /// `ParamSet` order.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<TripleVars> {
        let width = tape.shape(x).get(1).copied().unwrap_or(0);
        if width != self.input_dim {
            return Err(Error::Shape(format!(
                "embedding width {width} does not match model input dimension {}",
                self.input_dim
            )));
        }
        let layers = params.len() / 2;
        let mut h = x;
        for layer in 0..layers {
            let z = tape.matmul(h, params[2 * layer])?;
            let z = tape.add(z, params[2 * layer + 1])?;
            h = if layer + 1 < layers { tape.relu(z) } else { z };
        }
        let a = tape.narrow(h, 1, 0, 1)?;
        let b = tape.narrow(h, 1, 1, 1)?;
        let c = tape.narrow(h, 1, 2, 1)?;
        output_activation_on_tape(tape, a, b, c)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Mean summed pinball loss over the observed targets (NaN = missing).
    pub fn loss(&self, embeddings: &EmbeddingMatrix, targets: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(vec![embeddings.rows, embeddings.cols()], embeddings.data.clone())?);
        let triple = self.forward(&mut tape, &vars, x)?;
        let (loss, _) = masked_triple_loss(&mut tape, &triple, targets, &self.config.quantiles)?;
        Ok(tape.value(loss).item())
    }
}

pub fn predict_quantiles(model: &StdkModel, embeddings: &EmbeddingMatrix) -> Result<Vec<QuantileTriple>> {
    if embeddings.cols() != model.input_dim {
        return Err(Error::Shape(format!(
            "embedding width {} does not match model input dimension {}",
            embeddings.cols(),
            model.input_dim
        )));
    }
    let cols = embeddings.cols();
    let mut out = Vec::with_capacity(embeddings.rows);
    for chunk in embeddings.data.chunks(PREDICT_CHUNK * cols.max(1)) {
        let rows = chunk.len() / cols;
        let mut tape = Tape::new();
        let vars = model.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(vec![rows, cols], chunk.to_vec())?);
        let t = model.forward(&mut tape, &vars, x)?;
        let (lo, mid, hi) = (tape.value(t.lower).data(), tape.value(t.median).data(), tape.value(t.upper).data());
        out.extend((0..rows).map(|i| QuantileTriple {
            lower: lo[i],
            median: mid[i],
            upper: hi[i],
        }));
    }
    Ok(out)
}

/// Per-epoch losses of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Mean training loss of each epoch.
    pub train: Vec<f64>,
    /// Mean loss on the validation rows after each epoch; empty without a
    /// validation split.
    pub validation: Vec<f64>,
    /// Epoch whose parameters were kept, if chosen by validation loss.
    pub best_epoch: Option<usize>,
}

/// Minibatch Adam on the mean pinball loss, treating every row as its own
/// group for the validation split. Targets use NaN for missing.
pub fn train_interpolator(
    embeddings: &EmbeddingMatrix,
    targets: &[f64],
    config: &StdkConfig,
    seed: u64,
) -> Result<(StdkModel, TrainingHistory)> {
    let groups: Vec<usize> = (0..targets.len()).collect();
    train_interpolator_grouped(embeddings, targets, &groups, config, seed)
}

/// As [`train_interpolator`], holding out whole groups (e.g. every row of a
/// station) for validation. The returned model carries the parameters of the
/// epoch with the lowest validation loss.
pub fn train_interpolator_grouped(
    embeddings: &EmbeddingMatrix,
    targets: &[f64],
    groups: &[usize],
    config: &StdkConfig,
    seed: u64,
) -> Result<(StdkModel, TrainingHistory)> {
    if groups.len() != targets.len() {
        return Err(Error::Shape(format!("{} groups for {} targets", groups.len(), targets.len())));
    }
    let model = build_model(config, embeddings.cols(), seed)?;
    let held = validation_groups(groups, config.validation_fraction, seed);
    let (fit_rows, val_rows): (Vec<usize>, Vec<usize>) = (0..targets.len()).partition(|&r| !held.contains(&groups[r]));
    train_from(model, embeddings, targets, &fit_rows, &val_rows, seed, LossTerms::All)
}

/// Sorted ids of the groups held out for validation.
fn validation_groups(groups: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let mut ids = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ((fraction * ids.len() as f64).round() as usize).min(ids.len().saturating_sub(1));
    let n = if fraction > 0.0 && ids.len() >= 2 { n.max(1) } else { n };
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0a11_da7e_0a11_da7e));
    let mut held = ids[..n].to_vec();
    held.sort_unstable();
    held
}

fn rows_matrix(embeddings: &EmbeddingMatrix, rows: &[usize]) -> EmbeddingMatrix {
    EmbeddingMatrix {
        rows: rows.len(),
        n_temporal: embeddings.n_temporal,
        n_spatial: embeddings.n_spatial,
        data: rows.iter().flat_map(|&r| embeddings.row(r).iter().copied()).collect(),
    }
}

/// Mean summed pinball loss over observed targets; NaN if none are observed.
fn validation_loss(model: &StdkModel, embeddings: &EmbeddingMatrix, targets: &[f64]) -> Result<f64> {
    let preds = predict_quantiles(model, embeddings)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, &y) in preds.iter().zip(targets) {
        if !y.is_nan() {
            sum += pinball_loss(p, y, &model.config.quantiles)?;
            n += 1;
        }
    }
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

pub(crate) fn train_from(
    mut model: StdkModel,
    embeddings: &EmbeddingMatrix,
    targets: &[f64],
    fit_rows: &[usize],
    val_rows: &[usize],
    seed: u64,
    terms: LossTerms,
) -> Result<(StdkModel, TrainingHistory)> {
    let config = model.config.clone();
    if embeddings.rows != targets.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows but {} targets",
            embeddings.rows,
            targets.len()
        )));
    }
    if targets.len() < config.batch_size {
        return Err(Error::InsufficientData {
            needed: config.batch_size,
            got: targets.len(),
        });
    }
    let val_embeddings = rows_matrix(embeddings, val_rows);
    let val_targets: Vec<f64> = val_rows.iter().map(|&r| targets[r]).collect();
    let select = val_targets.iter().any(|y| !y.is_nan());
    let mut best: Option<(f64, usize, ParamSet)> = None;

    let cols = embeddings.cols();
    let adam = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order = fit_rows.to_vec();
    let mut history = TrainingHistory::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut weighted, mut observed_total) = (0.0, 0usize);
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut x = Vec::with_capacity(batch.len() * cols);
            for &r in batch {
                x.extend_from_slice(embeddings.row(r));
            }
            let y: Vec<f64> = batch.iter().map(|&r| targets[r]).collect();

            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let xv = tape.constant(Tensor::new(vec![batch.len(), cols], x)?);
            let triple = model.forward(&mut tape, &vars, xv)?;
            let (loss, observed) = match terms {
                LossTerms::All => masked_triple_loss(&mut tape, &triple, &y, &config.quantiles)?,
                #[cfg(test)]
                LossTerms::MedianOnly => median_only_loss(&mut tape, &triple, &y, config.quantiles.mid)?,
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {value} at epoch {epoch}, batch {batch_index}; max |param| = {}",
                    model.params.max_abs()
                )));
            }
            let grads = tape.backward(loss)?;
            model.params.accumulate(&grads, &vars);
            adam_step(&mut model.params, &adam)?;
            weighted += value * observed as f64;
            observed_total += observed;
        }
        let epoch_loss = weighted / observed_total.max(1) as f64;
        history.train.push(epoch_loss);
        if select {
            let v = validation_loss(&model, &val_embeddings, &val_targets)?;
            log::debug!("interpolator epoch {epoch}: loss {epoch_loss:.6}, validation {v:.6}");
            history.validation.push(v);
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params.clone()));
            }
        } else {
            log::debug!("interpolator epoch {epoch}: loss {epoch_loss:.6}");
        }
    }
    if let Some((_, epoch, params)) = best {
        model.params = params;
        history.best_epoch = Some(epoch);
    }
    Ok((model, history))
}

#[cfg(test)]
fn median_only_loss(tape: &mut Tape, triple: &TripleVars, targets: &[f64], tau: f64) -> Result<(Var, usize)> {
    use crate::quantile::pinball_sum_on_tape;
    let shape = tape.shape(triple.median).to_vec();
    let observed = targets.iter().filter(|y| !y.is_nan()).count();
    let mask = tape.constant(Tensor::new(shape.clone(), targets.iter().map(|y| f64::from(u8::from(!y.is_nan()))).collect())?);
    let target = tape.constant(Tensor::new(shape, targets.iter().map(|y| if y.is_nan() { 0.0 } else { *y }).collect())?);
    let sum = pinball_sum_on_tape(tape, triple.median, target, mask, tau)?;
    Ok((tape.scale(sum, 1.0 / observed.max(1) as f64), observed))
}
