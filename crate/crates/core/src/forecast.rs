//! Quantile ConvLSTM forecasting of gridded fields.
//!
//! A single ConvLSTM cell is unrolled over a few input frames; a 1x1
//! convolution maps the final hidden state to three raw channels and the
//! non-crossing activation turns them into (lower, median, upper) maps.
//! The basis-augmented variant appends rasterized coarse Wendland features to
//! every input frame.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, glorot_uniform, Adam, ParamSet, Tape, Tensor, Var};
use crate::basis::{spatial_embedding, SpatialKnotLevel};
use crate::error::{Error, Result};
use crate::quantile::{masked_triple_sum, output_activation_on_tape, Quantiles, TripleVars};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub hidden_channels: usize,
    /// Odd side of the square gate kernels.
    pub kernel_size: usize,
    /// Consecutive frames fed to the cell.
    pub n_inputs: usize,
    /// Steps between the last input frame and the target.
    pub lead: usize,
    pub quantiles: Quantiles,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            kernel_size: 3,
            n_inputs: 3,
            lead: 3,
            quantiles: Quantiles::default(),
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_channels == 0 {
            return bad("hidden channels must be >= 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.n_inputs == 0 || self.lead == 0 {
            return bad("input count and lead must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        Quantiles::new(self.quantiles.low, self.quantiles.mid, self.quantiles.high)?;
        Ok(())
    }

    /// Frames spanned by one sample, inputs through target.
    pub fn window(&self) -> usize {
        self.n_inputs - 1 + self.lead + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequenceSample {
    /// Index of the first input frame.
    pub start: usize,
    /// `[n_inputs x 1 x H x W]`.
    pub inputs: Tensor,
    /// `[H x W]`, NaN = missing.
    pub target: Tensor,
}

/// Sliding windows of three inputs with a target three steps past the last
/// input: frames `t, t+1, t+2` predict frame `t+5`.
pub fn build_sequences(frames: &[Tensor]) -> Result<Vec<ImageSequenceSample>> {
    build_sequences_with(frames, 3, 3)
}

pub fn build_sequences_with(frames: &[Tensor], n_inputs: usize, lead: usize) -> Result<Vec<ImageSequenceSample>> {
    if n_inputs == 0 || lead == 0 {
        return Err(Error::InvalidArgument("input count and lead must be >= 1".into()));
    }
    let window = n_inputs + lead;
    if frames.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: frames.len(),
        });
    }
    let shape = frames[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("frames must be [H x W], got {shape:?}")));
    }
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape.as_slice()) {
        return Err(Error::Shape(format!("frame {i} has shape {:?}, frame 0 {shape:?}", f.shape())));
    }
    let (h, w) = (shape[0], shape[1]);
    Ok((0..=frames.len() - window)
        .map(|start| {
            let parts: Vec<&Tensor> = frames[start..start + n_inputs].iter().collect();
            let inputs = Tensor::concat0(&parts)
                .and_then(|t| t.reshape(vec![n_inputs, 1, h, w]))
                .expect("frames share a shape");
            ImageSequenceSample {
                start,
                inputs,
                target: frames[start + window - 1].clone(),
            }
        })
        .collect())
}

/// Hidden and cell maps, each `[C x H x W]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
    /// Both maps are known zeros, so their terms can be skipped.
    zero: bool,
}

impl ConvLstmState {
    pub fn new(hidden: Var, cell: Var) -> Self {
        Self {
            hidden,
            cell,
            zero: false,
        }
    }

    pub fn zeros(tape: &mut Tape, channels: usize, h: usize, w: usize) -> Self {
        let hidden = tape.constant(Tensor::zeros(&[channels, h, w]));
        let cell = tape.constant(Tensor::zeros(&[channels, h, w]));
        Self { hidden, cell, zero: true }
    }
}

/// Gate kernels, stacked in gate order input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct CellWeights {
    /// `[4C x C_in x k x k]`.
    pub input: Var,
    /// `[4C x C x k x k]`.
    pub hidden: Var,
    /// `[4C]`.
    pub bias: Var,
}

/// One ConvLSTM step on `x [C_in x H x W]`.
pub fn convlstm_cell(tape: &mut Tape, x: Var, state: &ConvLstmState, weights: &CellWeights) -> Result<ConvLstmState> {
    let c = tape.shape(state.hidden).first().copied().unwrap_or(0);
    let valid_state = tape.shape(state.hidden).len() == 3 && tape.shape(state.cell) == tape.shape(state.hidden);
    if !valid_state || tape.shape(weights.bias) != [4 * c] {
        return Err(Error::shape(tape.shape(state.hidden), tape.shape(weights.bias), "convlstm_cell"));
    }
    let mut pre = tape.conv2d(x, weights.input)?;
    if !state.zero {
        let recurrent = tape.conv2d(state.hidden, weights.hidden)?;
        pre = tape.add(pre, recurrent)?;
    }
    let hs = tape.shape(state.hidden);
    if tape.shape(pre) != [4 * c, hs[1], hs[2]] {
        return Err(Error::shape(tape.shape(pre), tape.shape(state.hidden), "convlstm_cell"));
    }
    let pre = tape.add_channel_bias(pre, weights.bias)?;
    let gate = |tape: &mut Tape, k: usize| tape.narrow(pre, 0, k * c, c);
    let (i, f, o, g) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
    let i = tape.sigmoid(i);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let mut cell = tape.mul(i, g)?;
    if !state.zero {
        let f = tape.sigmoid(f);
        let kept = tape.mul(f, state.cell)?;
        cell = tape.add(kept, cell)?;
    }
    let squashed = tape.tanh(cell);
    let hidden = tape.mul(o, squashed)?;
    Ok(ConvLstmState::new(hidden, cell))
}

/// Level-0 style Wendland features sampled at pixel centres: channel `k` is
/// knot `k`'s kernel, pixel `(row j, col i)` sits at `((i+0.5)/W, (j+0.5)/H)`
/// in unit coordinates.
pub fn rasterize_basis(level: &SpatialKnotLevel, h: usize, w: usize) -> Result<Tensor> {
    let n = level.len();
    let mut data = vec![0.0; n * h * w];
    let levels = std::slice::from_ref(level);
    for j in 0..h {
        for i in 0..w {
            let point = ((i as f64 + 0.5) / w as f64, (j as f64 + 0.5) / h as f64);
            for (k, v) in spatial_embedding(point, levels)?.into_iter().enumerate() {
                data[k * h * w + j * w + i] = v;
            }
        }
    }
    Tensor::new(vec![n, h, w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ForecastConfig,
    /// Static channels appended to every input frame, `[n x H x W]`.
    pub basis_channels: Option<Tensor>,
    pub params: ParamSet,
}

/// Plain ConvLSTM forecaster with one input channel.
pub fn build_forecaster(config: &ForecastConfig, seed: u64) -> Result<ForecastModel> {
    build(config, None, seed)
}

/// ConvLSTM forecaster whose inputs carry `basis_channels [n x H x W]` after
/// the observed frame.
pub fn build_stdk_forecaster(config: &ForecastConfig, basis_channels: Tensor, seed: u64) -> Result<ForecastModel> {
    if basis_channels.shape().len() != 3 {
        return Err(Error::Shape(format!("basis channels must be [n x H x W], got {:?}", basis_channels.shape())));
    }
    build(config, Some(basis_channels), seed)
}

fn build(config: &ForecastConfig, basis_channels: Option<Tensor>, seed: u64) -> Result<ForecastModel> {
    config.validate()?;
    let c = config.hidden_channels;
    let k = config.kernel_size;
    let c_in = 1 + basis_channels.as_ref().map_or(0, |b| b.shape()[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.push(
        "cell.input_weight",
        glorot_uniform(&[4 * c, c_in, k, k], c_in * k * k, 4 * c * k * k, &mut rng),
    );
    params.push(
        "cell.hidden_weight",
        glorot_uniform(&[4 * c, c, k, k], c * k * k, 4 * c * k * k, &mut rng),
    );
    params.push("cell.bias", Tensor::zeros(&[4 * c]));
    params.push("head.weight", glorot_uniform(&[3, c, 1, 1], c, 3, &mut rng));
    params.push("head.bias", Tensor::zeros(&[3]));
    Ok(ForecastModel {
        config: config.clone(),
        basis_channels,
        params,
    })
}

impl ForecastModel {
    pub fn input_channels(&self) -> usize {
        1 + self.basis_channels.as_ref().map_or(0, |b| b.shape()[0])
    }

    /// Unrolls the cell over `inputs [n_inputs x 1 x H x W]` with parameter
    /// vars bound in `ParamSet` order; each output map is `[1 x H x W]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], inputs: &Tensor) -> Result<TripleVars> {
        let s = inputs.shape();
        if s.len() != 4 || s[0] != self.config.n_inputs || s[1] != 1 {
            return Err(Error::Shape(format!(
                "forecast inputs must be [{} x 1 x H x W], got {s:?}",
                self.config.n_inputs
            )));
        }
        let (h, w) = (s[2], s[3]);
        if let Some(b) = &self.basis_channels {
            if b.shape()[1..] != [h, w] {
                return Err(Error::shape(b.shape(), s, "basis channels vs frames"));
            }
        }
        if inputs.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("forecast inputs contain missing or non-finite values".into()));
        }
        let weights = CellWeights {
            input: params[0],
            hidden: params[1],
            bias: params[2],
        };
        let mut state = ConvLstmState::zeros(tape, self.config.hidden_channels, h, w);
        for frame in inputs.data().chunks(h * w) {
            let frame = Tensor::new(vec![1, h, w], frame.to_vec())?;
            let x = match &self.basis_channels {
                Some(b) => Tensor::concat0(&[&frame, b])?,
                None => frame,
            };
            let x = tape.constant(x);
            state = convlstm_cell(tape, x, &state, &weights)?;
        }
        let raw = tape.conv2d(state.hidden, params[3])?;
        let raw = tape.add_channel_bias(raw, params[4])?;
        let a = tape.narrow(raw, 0, 0, 1)?;
        let b = tape.narrow(raw, 0, 1, 1)?;
        let c = tape.narrow(raw, 0, 2, 1)?;
        output_activation_on_tape(tape, a, b, c)
    }

    /// Lower, median and upper maps, each `[H x W]`.
    pub fn predict(&self, inputs: &Tensor) -> Result<[Tensor; 3]> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let t = self.forward(&mut tape, &vars, inputs)?;
        let (h, w) = (inputs.shape()[2], inputs.shape()[3]);
        let map = |v: Var| tape.value(v).clone().reshape(vec![h, w]);
        Ok([map(t.lower)?, map(t.median)?, map(t.upper)?])
    }

    /// Mean summed pinball loss over every observed target pixel.
    pub fn loss(&self, samples: &[ImageSequenceSample]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let loss = batch_loss(self, &mut tape, &vars, samples.iter())?.0;
        Ok(tape.value(loss).item())
    }
}

fn batch_loss<'a>(
    model: &ForecastModel,
    tape: &mut Tape,
    vars: &[Var],
    samples: impl Iterator<Item = &'a ImageSequenceSample>,
) -> Result<(Var, usize)> {
    let mut total: Option<Var> = None;
    let mut observed = 0;
    for s in samples {
        let triple = model.forward(tape, vars, &s.inputs)?;
        let (sum, n) = masked_triple_sum(tape, &triple, s.target.data(), &model.config.quantiles)?;
        observed += n;
        total = Some(match total {
            Some(t) => tape.add(t, sum)?,
            None => sum,
        });
    }
    let total = total.ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    Ok((tape.scale(total, 1.0 / observed.max(1) as f64), observed))
}

/// Trains a plain ConvLSTM forecaster. Returns the model and the mean
/// per-pixel training loss of each epoch.
pub fn train_forecaster(
    samples: &[ImageSequenceSample],
    config: &ForecastConfig,
    seed: u64,
) -> Result<(ForecastModel, Vec<f64>)> {
    train_model(build_forecaster(config, seed)?, samples, seed)
}

/// Minibatch Adam on the masked pixelwise pinball loss, from `model`'s
/// current parameters.
pub fn train_model(
    mut model: ForecastModel,
    samples: &[ImageSequenceSample],
    seed: u64,
) -> Result<(ForecastModel, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let config = model.config.clone();
    let adam = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut weighted, mut observed_total) = (0.0, 0usize);
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let (loss, observed) = batch_loss(&model, &mut tape, &vars, batch.iter().map(|&i| &samples[i]))?;
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
        log::debug!("forecaster epoch {epoch}: loss {epoch_loss:.6}");
        history.push(epoch_loss);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use crate::basis::make_spatial_knots;
    use rand::Rng;

    fn frames(t: usize, h: usize, w: usize) -> Vec<Tensor> {
        (0..t).map(|k| Tensor::full(&[h, w], k as f64)).collect()
    }

    #[test]
    fn sequence_windows() {
        let s = build_sequences(&frames(10, 2, 3)).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].start, 0);
        assert_eq!(s[0].inputs.shape(), &[3, 1, 2, 3]);
        let firsts: Vec<f64> = s[0].inputs.data().chunks(6).map(|c| c[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0]);
        assert_eq!(s[0].target.data()[0], 5.0);
        assert_eq!(s[4].target.data()[0], 9.0);
        assert_eq!(build_sequences(&frames(6, 1, 1)).unwrap().len(), 1);
        assert!(matches!(
            build_sequences(&frames(5, 1, 1)),
            Err(Error::InsufficientData { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn mismatched_frames_are_shape_errors() {
        let mut f = frames(7, 2, 2);
        f[4] = Tensor::zeros(&[2, 3]);
        assert!(matches!(build_sequences(&f), Err(Error::Shape(_))));
    }

    #[test]
    fn sequence_count_law() {
        for t in 6..=200 {
            assert_eq!(build_sequences(&frames(t, 1, 1)).unwrap().len(), t - 5);
        }
    }

    fn zero_weights(tape: &mut Tape, c_in: usize, c: usize) -> CellWeights {
        CellWeights {
            input: tape.constant(Tensor::zeros(&[4 * c, c_in, 3, 3])),
            hidden: tape.constant(Tensor::zeros(&[4 * c, c, 3, 3])),
            bias: tape.constant(Tensor::zeros(&[4 * c])),
        }
    }

    #[test]
    fn zero_weights_zero_state() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4, 4], 2.0));
        let w = zero_weights(&mut tape, 1, 2);
        let s = ConvLstmState::zeros(&mut tape, 2, 4, 4);
        let next = convlstm_cell(&mut tape, x, &s, &w).unwrap();
        assert!(tape.value(next.cell).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(next.hidden).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_halve_cell() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let w = zero_weights(&mut tape, 1, 2);
        let c0 = Tensor::from_fn(&[2, 3, 3], |i| i as f64 - 4.0);
        let h = tape.constant(Tensor::zeros(&[2, 3, 3]));
        let c = tape.constant(c0.clone());
        let next = convlstm_cell(&mut tape, x, &ConvLstmState::new(h, c), &w).unwrap();
        for (a, b) in tape.value(next.cell).data().iter().zip(c0.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_preserves_grid_shape() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 64, 64]));
        let w = zero_weights(&mut tape, 1, 4);
        let s = ConvLstmState::zeros(&mut tape, 4, 64, 64);
        let next = convlstm_cell(&mut tape, x, &s, &w).unwrap();
        assert_eq!(tape.shape(next.hidden), &[4, 64, 64]);
        assert_eq!(tape.shape(next.cell), &[4, 64, 64]);
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let w = zero_weights(&mut tape, 1, 2);
        let s = ConvLstmState::zeros(&mut tape, 2, 4, 4);
        assert!(matches!(convlstm_cell(&mut tape, x, &s, &w), Err(Error::Shape(_))));
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Per-pixel loops over gates, channels and taps.
    fn reference_cell(
        x: &Tensor,
        h: &Tensor,
        c: &Tensor,
        wx: &Tensor,
        wh: &Tensor,
        b: &Tensor,
    ) -> (Vec<f64>, Vec<f64>) {
        let (c_in, hh, ww) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ch = h.shape()[0];
        let k = wx.shape()[2];
        let pad = (k / 2) as isize;
        let at = |t: &Tensor, ch_: usize, y: isize, x_: isize| -> f64 {
            if y < 0 || x_ < 0 || y >= hh as isize || x_ >= ww as isize {
                0.0
            } else {
                t.data()[ch_ * hh * ww + y as usize * ww + x_ as usize]
            }
        };
        let (mut c_out, mut h_out) = (vec![0.0; ch * hh * ww], vec![0.0; ch * hh * ww]);
        for o in 0..ch {
            for y in 0..hh {
                for xx in 0..ww {
                    let mut pre = [0.0; 4];
                    for (gi, p) in pre.iter_mut().enumerate() {
                        let oc = gi * ch + o;
                        *p = b.data()[oc];
                        for dy in 0..k {
                            for dx in 0..k {
                                let (sy, sx) = (y as isize + dy as isize - pad, xx as isize + dx as isize - pad);
                                for ci in 0..c_in {
                                    *p += wx.data()[((oc * c_in + ci) * k + dy) * k + dx] * at(x, ci, sy, sx);
                                }
                                for ci in 0..ch {
                                    *p += wh.data()[((oc * ch + ci) * k + dy) * k + dx] * at(h, ci, sy, sx);
                                }
                            }
                        }
                    }
                    let idx = o * hh * ww + y * ww + xx;
                    let cn = sigmoid(pre[1]) * c.data()[idx] + sigmoid(pre[0]) * pre[3].tanh();
                    c_out[idx] = cn;
                    h_out[idx] = sigmoid(pre[2]) * cn.tanh();
                }
            }
        }
        (h_out, c_out)
    }

    #[test]
    fn cell_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
            let (x, h, c) = (rand(&[2, 4, 4]), rand(&[3, 4, 4]), rand(&[3, 4, 4]));
            let (wx, wh, b) = (rand(&[12, 2, 3, 3]), rand(&[12, 3, 3, 3]), rand(&[12]));
            let (h_ref, c_ref) = reference_cell(&x, &h, &c, &wx, &wh, &b);

            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let state = ConvLstmState::new(tape.constant(h), tape.constant(c));
            let w = CellWeights {
                input: tape.constant(wx),
                hidden: tape.constant(wh),
                bias: tape.constant(b),
            };
            let next = convlstm_cell(&mut tape, xv, &state, &w).unwrap();
            for (a, b) in tape.value(next.hidden).data().iter().zip(&h_ref) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in tape.value(next.cell).data().iter().zip(&c_ref) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_state_shortcut_matches_explicit_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let (x, wx, wh, b) = (rand(&[1, 5, 5]), rand(&[8, 1, 3, 3]), rand(&[8, 2, 3, 3]), rand(&[8]));
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let w = CellWeights {
            input: tape.constant(wx),
            hidden: tape.constant(wh),
            bias: tape.constant(b),
        };
        let fast = ConvLstmState::zeros(&mut tape, 2, 5, 5);
        let z = (tape.constant(Tensor::zeros(&[2, 5, 5])), tape.constant(Tensor::zeros(&[2, 5, 5])));
        let slow = ConvLstmState::new(z.0, z.1);
        let a = convlstm_cell(&mut tape, xv, &fast, &w).unwrap();
        let b = convlstm_cell(&mut tape, xv, &slow, &w).unwrap();
        assert_eq!(tape.value(a.hidden), tape.value(b.hidden));
        assert_eq!(tape.value(a.cell), tape.value(b.cell));
    }

    #[test]
    fn two_step_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        ps.push("wx", Tensor::from_fn(&[8, 1, 3, 3], |_| rng.random_range(-0.5..0.5)));
        ps.push("wh", Tensor::from_fn(&[8, 2, 3, 3], |_| rng.random_range(-0.5..0.5)));
        ps.push("b", Tensor::from_fn(&[8], |_| rng.random_range(-0.5..0.5)));
        let xs: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[1, 4, 4], |_| rng.random_range(-1.0..1.0))).collect();
        let probe = Tensor::from_fn(&[2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let loss = |tape: &mut Tape, v: &[Var]| {
            let w = CellWeights {
                input: v[0],
                hidden: v[1],
                bias: v[2],
            };
            let mut s = ConvLstmState::zeros(tape, 2, 4, 4);
            for x in &xs {
                let x = tape.constant(x.clone());
                s = convlstm_cell(tape, x, &s, &w)?;
            }
            let p = tape.constant(probe.clone());
            let hp = tape.mul(s.hidden, p)?;
            let cp = tape.mul(s.cell, p)?;
            let total = tape.add(hp, cp)?;
            Ok(tape.sum(total))
        };
        let report = grad_check(&ps, loss, GradCheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    fn small_config() -> ForecastConfig {
        ForecastConfig {
            hidden_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn model_output_contract() {
        let model = build_forecaster(&small_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.random_range(-2.0..2.0));
        let [lo, mid, hi] = model.predict(&inputs).unwrap();
        assert_eq!(lo.shape(), &[16, 16]);
        for p in 0..256 {
            assert!(lo.data()[p] <= mid.data()[p] && mid.data()[p] <= hi.data()[p]);
        }
        assert!(matches!(model.predict(&Tensor::zeros(&[2, 1, 16, 16])), Err(Error::Shape(_))));
        let mut bad = inputs.clone();
        bad.data_mut()[7] = f64::NAN;
        assert!(model.predict(&bad).is_err());
    }

    #[test]
    fn zero_params_give_constant_median() {
        let mut model = build_forecaster(&small_config(), 1).unwrap();
        for p in model.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let [_, mid, _] = model.predict(&Tensor::zeros(&[3, 1, 8, 8])).unwrap();
        assert!(mid.data().iter().all(|&v| v == mid.data()[0]));
    }

    #[test]
    fn basis_augmentation() {
        let levels = make_spatial_knots(&[3]).unwrap();
        let raster = rasterize_basis(&levels[0], 8, 8).unwrap();
        assert_eq!(raster.shape(), &[9, 8, 8]);
        let model = build_stdk_forecaster(&small_config(), raster, 4).unwrap();
        assert_eq!(model.input_channels(), 10);
        assert_eq!(model.params.get("cell.input_weight").unwrap().value.shape(), &[16, 10, 3, 3]);

        let plain = build_forecaster(&small_config(), 4).unwrap();
        let empty = build_stdk_forecaster(&small_config(), Tensor::zeros(&[0, 8, 8]), 4).unwrap();
        assert_eq!(plain.params, empty.params);
        let inputs = Tensor::from_fn(&[3, 1, 8, 8], |i| (i as f64 * 0.37).sin());
        assert_eq!(plain.predict(&inputs).unwrap(), empty.predict(&inputs).unwrap());
    }

    #[test]
    fn all_missing_target_contributes_nothing() {
        let model = build_forecaster(&small_config(), 0).unwrap();
        let sample = ImageSequenceSample {
            start: 0,
            inputs: Tensor::full(&[3, 1, 4, 4], 0.5),
            target: Tensor::full(&[4, 4], f64::NAN),
        };
        assert_eq!(model.loss(&[sample]).unwrap(), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let f: Vec<Tensor> = (0..9).map(|t| Tensor::from_fn(&[6, 6], |i| ((i + t) as f64 * 0.5).sin())).collect();
        let samples = build_sequences(&f).unwrap();
        let cfg = ForecastConfig {
            epochs: 3,
            batch_size: 2,
            ..small_config()
        };
        let (m1, h1) = train_forecaster(&samples, &cfg, 9).unwrap();
        let (m2, h2) = train_forecaster(&samples, &cfg, 9).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
        assert!(train_forecaster(&[], &cfg, 9).is_err());
    }
}
