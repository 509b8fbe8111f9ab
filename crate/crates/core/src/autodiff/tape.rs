use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Conv2d(Var, Var),
    ChannelBias(Var, Var),
    Narrow { x: Var, axis: usize, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one reverse sweep.
///
/// Nodes are appended in evaluation order, so reverse index order is a valid
/// topological order for the backward pass. [`Tape::backward`] consumes the
/// tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node did not influence the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// `b` broadcasts into `a` when its shape is a suffix of `a`'s shape.
fn broadcasts(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that gradients flow back to.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value treated as data; no gradient is kept for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(sa, sb, "matmul"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcasts(sa, sb) {
            return Err(Error::shape(sa, sb, name));
        }
        let shape = sa.to_vec();
        let bd = self.value(b).data();
        let nb = bd.len();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Elementwise `a + b`; `b` may broadcast over `a`'s leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("unary op preserves shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, kernels::softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Same-padded convolution of `input [C_in x H x W]` with
    /// `kernels [C_out x C_in x kh x kw]`; kernel sides must be odd.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let dims = self.conv_dims(input, kernel)?;
        let data = kernels::conv2d(self.value(input).data(), self.value(kernel).data(), dims);
        let rg = self.rg(input) || self.rg(kernel);
        let value = Tensor::new(vec![dims.c_out, dims.h, dims.w], data)?;
        Ok(self.push(value, Op::Conv2d(input, kernel), rg))
    }

    fn conv_dims(&self, input: Var, kernel: Var) -> Result<ConvDims> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] % 2 == 0 || sk[3] % 2 == 0 {
            return Err(Error::shape(si, sk, "conv2d"));
        }
        Ok(ConvDims {
            c_in: si[0],
            c_out: sk[0],
            h: si[1],
            w: si[2],
            kh: sk[2],
            kw: sk[3],
        })
    }

    /// Adds `bias [C]` to every pixel of channel `c` of `x [C x H x W]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::shape(sx, sb, "add_channel_bias"));
        }
        let plane = sx[1] * sx[2];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i / plane])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::ChannelBias(x, bias), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(Error::Shape(format!(
                "narrow: axis {axis} range {start}..{} out of bounds for {sx:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&sx, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Narrow { x, axis, start }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, contribution: Vec<f64>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], contribution);
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(a) {
                    send(a, kernels::matmul_grad_a(g, val(b), m, k, n));
                }
                if self.rg(b) {
                    send(b, kernels::matmul_grad_b(val(a), g, m, k, n));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(a) {
                    send(a, g.to_vec());
                }
                if self.rg(b) {
                    let nb = val(b).len();
                    let mut gb = vec![0.0; nb];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += sign * gi;
                    }
                    send(b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(a), val(b));
                let nb = db.len();
                if self.rg(a) {
                    send(a, g.iter().enumerate().map(|(i, gi)| gi * db[i % nb]).collect());
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; nb];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += gi * da[i];
                    }
                    send(b, gb);
                }
            }
            Op::Scale(a, c) => send(a, g.iter().map(|gi| gi * c).collect()),
            Op::Relu(a) => send(
                a,
                g.iter().zip(val(a)).map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 }).collect(),
            ),
            Op::Softplus(a) => send(
                a,
                g.iter().zip(val(a)).map(|(gi, &x)| gi * kernels::sigmoid(x)).collect(),
            ),
            Op::Sigmoid(a) => send(
                a,
                g.iter().zip(node.value.data()).map(|(gi, &s)| gi * s * (1.0 - s)).collect(),
            ),
            Op::Tanh(a) => send(
                a,
                g.iter().zip(node.value.data()).map(|(gi, &t)| gi * (1.0 - t * t)).collect(),
            ),
            Op::Sum(a) => send(a, vec![g[0]; val(a).len()]),
            Op::Conv2d(input, kernel) => {
                let dims = self.conv_dims(input, kernel)?;
                if self.rg(input) {
                    send(input, kernels::conv2d_grad_input(g, val(kernel), dims));
                }
                if self.rg(kernel) {
                    send(kernel, kernels::conv2d_grad_kernel(g, val(input), dims));
                }
            }
            Op::ChannelBias(x, bias) => {
                if self.rg(x) {
                    send(x, g.to_vec());
                }
                if self.rg(bias) {
                    let c = val(bias).len();
                    let plane = g.len() / c;
                    send(bias, g.chunks(plane).map(|ch| ch.iter().sum()).collect());
                }
            }
            Op::Narrow { x, axis, start } => {
                let sx = self.shape(x);
                let (outer, dim, inner) = split_axis(sx, axis);
                let len = node.value.shape()[axis];
                let mut gx = vec![0.0; val(x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                send(x, gx);
            }
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct quadruple loop with explicit zero padding.
    fn conv_reference(input: &Tensor, kernel: &Tensor) -> Vec<f64> {
        let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
        let (x, k) = (input.data(), kernel.data());
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let sy = y as isize + dy as isize - (kh / 2) as isize;
                                let sx = xx as isize + dx as isize - (kw / 2) as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x[(c * h + sy as usize) * w + sx as usize] * k[((o * ci + c) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn relu_and_softplus_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.softplus(z);
        assert!((tape.value(s).item() - 2f64.ln()).abs() < 1e-15);
        let big = tape.constant(Tensor::scalar(800.0));
        let s = tape.softplus(big);
        assert_eq!(tape.value(s).item(), 800.0);
        let small = tape.constant(Tensor::scalar(-800.0));
        let s = tape.softplus(small);
        assert!(tape.value(s).item() >= 0.0);
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let input = random(&[3, 5, 6], &mut rng);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        let x = tape.constant(input.clone());
        let kv = tape.constant(k);
        let y = tape.conv2d(x, kv).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (ks, co) in [(3usize, 2usize), (5, 4), (1, 3)] {
            let input = random(&[3, 8, 8], &mut rng);
            let kernel = random(&[co, 3, ks, ks], &mut rng);
            let mut tape = Tape::new();
            let x = tape.constant(input.clone());
            let k = tape.constant(kernel.clone());
            let y = tape.conv2d(x, k).unwrap();
            for (a, b) in tape.value(y).data().iter().zip(conv_reference(&input, &kernel)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
        let c = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add(a, c).is_err());
        let k = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(tape.conv2d(a, k).is_err());
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2, 3, 4]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 24]);
    }

    #[test]
    fn relu_subgradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[-1.0, 2.0, 0.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn broadcast_bias_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.param(t(&[3], &[0.5, 0.5, 0.5]));
        let y = tape.mul(x, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap(), &[5.0, 7.0, 9.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn narrow_slices_and_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let col = tape.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(tape.value(col).data(), &[1.0, 2.0, 4.0, 5.0]);
        let s = tape.sum(col);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut tape = Tape::new();
            let x = tape.constant(random(&[4, 6], &mut rng));
            let w = tape.param(random(&[6, 5], &mut rng));
            let h = tape.matmul(x, w).unwrap();
            let h = tape.tanh(h);
            let h2 = tape.mul(h, h).unwrap();
            let s = tape.sum(h2);
            let g = tape.backward(s).unwrap();
            g.get(w).unwrap().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
