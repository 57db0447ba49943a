//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its freshly computed value and
//! whatever it needs for the backward sweep. Nodes are only ever appended, so
//! the node order is a topological order and [`Graph::backward`] is a single
//! reverse pass.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{contract, ensure, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics computed by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    AddBias { x: Var, bias: Var },
    MatMul { a: Var, b: Var },
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    MulConst { x: Var, factor: Tensor },
    Sum(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
        pad: Option<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        window: usize,
        cols: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat { a: Var, b: Var },
    SelectStep { x: Var, step: usize },
    StackSteps(Vec<Var>),
    Softmax(Var),
    NllMean { probs: Var, golds: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: Vec<(String, Var)>,
    name_index: HashMap<String, Var>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_var: HashMap<Var, Tensor>,
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient for leaf `v`; `None` if `v` is not a differentiable leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v)
    }

    pub fn by_name(&self) -> &BTreeMap<String, Tensor> {
        &self.by_name
    }

    pub fn named(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

/// Splits a sequence-shaped tensor into `(batch, steps, channels)`; rank 2 is
/// treated as a single-example batch.
fn seq_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(contract!(
            "expected a (seq x channels) or (batch x seq x channels) tensor, got {:?}",
            shape
        )),
    }
}

fn with_seq_dims(template: &[usize], steps: usize, channels: usize) -> Vec<usize> {
    if template.len() == 2 {
        vec![steps, channels]
    } else {
        vec![template[0], steps, channels]
    }
}

/// Left zero-padding for a same-length convolution of window `k`.
pub fn same_padding_left(window: usize) -> usize {
    (window - 1) / 2
}

/// Number of examples whose weight-gradient partial sums are computed
/// together; fixed so the reduction order does not depend on the thread count.
const CONV_GRAD_CHUNK: usize = 4;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// An anonymous differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A named differentiable leaf. Names are unique within a graph.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        ensure!(
            !self.name_index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let v = self.leaf(value, true);
        self.names.push((name.to_string(), v));
        self.name_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.name_index.get(name).copied()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + shift);
        self.push(y, Op::Affine { x, scale }, &[x])
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        ensure!(
            self.shape(bias) == [c],
            "add_bias: bias shape {:?} does not match last axis {c}",
            self.shape(bias)
        );
        let b = self.value(bias).data().to_vec();
        let mut y = self.value(x).clone();
        for row in y.data_mut().chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.push(y, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Contracts the last axis of `a` with the first axis of matrix `b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        ensure!(bshape.len() == 2, "matmul: right operand must be a matrix, got {bshape:?}");
        let k = *ashape.last().unwrap();
        ensure!(
            k == bshape[0],
            "matmul: inner dimensions differ ({ashape:?} x {bshape:?})"
        );
        let n = bshape[1];
        let m = self.value(a).rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let mut shape = ashape;
        *shape.last_mut().unwrap() = n;
        let y = Tensor::new(&shape, out)?;
        Ok(self.push(y, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshaped(shape)?;
        Ok(self.push(y, Op::Reshape(x), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x), &[x])
    }

    /// Entrywise product with a fixed (non-differentiated) tensor, e.g. a
    /// dropout mask.
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        ensure!(
            self.shape(x) == factor.shape(),
            "mul_const: shape mismatch {:?} vs {:?}",
            self.shape(x),
            factor.shape()
        );
        let y = self.value(x).zip_map(&factor, |a, b| a * b);
        Ok(self.push(y, Op::MulConst { x, factor }, &[x]))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    /// Row lookup into `table` (vocab x dim). Output shape is `lead ++ [dim]`
    /// with `product(lead) == ids.len()`. Rows for `pad` are zero and receive
    /// no gradient.
    pub fn embed(&mut self, table: Var, ids: &[usize], lead: &[usize], pad: Option<usize>) -> Result<Var> {
        let tshape = self.shape(table).to_vec();
        ensure!(tshape.len() == 2, "embed: table must be a matrix, got {tshape:?}");
        let (vocab, dim) = (tshape[0], tshape[1]);
        ensure!(
            lead.iter().product::<usize>() == ids.len(),
            "embed: {} ids do not fill shape {lead:?}",
            ids.len()
        );
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(contract!("embed: id {bad} outside vocabulary of {vocab}"));
        }
        let src = self.value(table).data();
        let mut out = vec![0.0; ids.len() * dim];
        for (row, &id) in out.chunks_mut(dim).zip(ids) {
            if Some(id) != pad {
                row.copy_from_slice(&src[id * dim..(id + 1) * dim]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(dim);
        let y = Tensor::new(&shape, out)?;
        Ok(self.push(
            y,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                pad,
            },
            &[table],
        ))
    }

    /// Same-length 1-D convolution of `x` (seq x c_in, optionally batched)
    /// with kernel `w` (window x c_in x c_out) and bias `b` (c_out).
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let (batch, steps, cin) = seq_dims(&xshape)?;
        let wshape = self.shape(w).to_vec();
        ensure!(wshape.len() == 3, "conv1d: kernel must be (window x c_in x c_out), got {wshape:?}");
        let (window, wcin, cout) = (wshape[0], wshape[1], wshape[2]);
        ensure!(
            wcin == cin,
            "conv1d: input has {cin} channels but kernel expects {wcin}"
        );
        ensure!(self.shape(b) == [cout], "conv1d: bias must have {cout} entries");

        let kc = window * cin;
        let pad_left = same_padding_left(window);
        let xdata = self.value(x).data();
        let mut cols = vec![0.0; batch * steps * kc];
        cols.par_chunks_mut(steps * kc)
            .zip(xdata.par_chunks(steps * cin))
            .for_each(|(col, xs)| {
                for t in 0..steps {
                    for dt in 0..window {
                        let src = t as isize + dt as isize - pad_left as isize;
                        if src >= 0 && (src as usize) < steps {
                            let s = src as usize;
                            col[t * kc + dt * cin..t * kc + (dt + 1) * cin]
                                .copy_from_slice(&xs[s * cin..(s + 1) * cin]);
                        }
                    }
                }
            });

        let wdata = self.value(w).data();
        let bias = self.value(b).data();
        let mut out = vec![0.0; batch * steps * cout];
        out.par_chunks_mut(steps * cout)
            .zip(cols.par_chunks(steps * kc))
            .for_each(|(ys, col)| {
                for row in ys.chunks_mut(cout) {
                    row.copy_from_slice(bias);
                }
                gemm(steps, kc, cout, col, false, wdata, false, 1.0, ys);
            });
        let y = Tensor::new(&with_seq_dims(&xshape, steps, cout), out)?;
        Ok(self.push(
            y,
            Op::Conv1d {
                x,
                w,
                b,
                window,
                cols,
            },
            &[x, w, b],
        ))
    }

    /// Batch normalization with statistics over every position of every
    /// example, per channel (last axis).
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let c = self.value(x).last_dim();
        self.check_bn_params(gamma, beta, c)?;
        let n = self.value(x).rows();
        ensure!(n >= 2, "batch_norm: train mode needs at least 2 samples per channel, got {n}");
        let xs = self.value(x).data();
        let mut mean = vec![0.0; c];
        for row in xs.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; c];
        for row in xs.chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut var {
            *s /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let stats = BatchStats { mean: mean.clone(), var };
        let y = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((y, stats))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.value(x).last_dim();
        self.check_bn_params(gamma, beta, c)?;
        ensure!(
            mean.len() == c && var.len() == c,
            "batch_norm: running statistics must have {c} entries"
        );
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn check_bn_params(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        ensure!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "batch_norm: gamma/beta must have {c} entries, got {:?}/{:?}",
            self.shape(gamma),
            self.shape(beta)
        );
        Ok(())
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for ((row, hrow), orow) in xv.data().chunks(c).zip(xhat.chunks_mut(c)).zip(out.chunks_mut(c)) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = g[j] * h + bt[j];
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Non-overlapping max pooling over the sequence axis; trailing positions
    /// that do not fill a window are dropped.
    pub fn max_pool1d(&mut self, x: Var, k: usize) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let (batch, steps, c) = seq_dims(&xshape)?;
        ensure!(k >= 1, "max_pool1d: pool size must be positive");
        ensure!(steps >= k, "max_pool1d: sequence length {steps} shorter than pool size {k}");
        let out_steps = steps / k;
        let xs = self.value(x).data();
        let mut out = vec![0.0; batch * out_steps * c];
        let mut argmax = vec![0usize; out.len()];
        for b in 0..batch {
            for to in 0..out_steps {
                for ch in 0..c {
                    let mut best = (b * steps + to * k) * c + ch;
                    for dt in 1..k {
                        let idx = (b * steps + to * k + dt) * c + ch;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    let o = (b * out_steps + to) * c + ch;
                    out[o] = xs[best];
                    argmax[o] = best;
                }
            }
        }
        let y = Tensor::new(&with_seq_dims(&xshape, out_steps, c), out)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        ensure!(
            sa.len() == sb.len() && sa[..sa.len() - 1] == sb[..sb.len() - 1],
            "concat: leading dimensions differ ({sa:?} vs {sb:?})"
        );
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let mut out = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self.value(a).data().chunks(ca).zip(self.value(b).data().chunks(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let y = Tensor::new(&shape, out)?;
        Ok(self.push(y, Op::Concat { a, b }, &[a, b]))
    }

    /// Step `step` of a (batch x seq x c) tensor, as (batch x c).
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (batch, steps, c) = seq_dims(&shape)?;
        ensure!(step < steps, "select_step: step {step} out of range for length {steps}");
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(batch * c);
        for b in 0..batch {
            let off = (b * steps + step) * c;
            out.extend_from_slice(&xs[off..off + c]);
        }
        let y = Tensor::new(&[batch, c], out)?;
        Ok(self.push(y, Op::SelectStep { x, step }, &[x]))
    }

    /// Stacks equally shaped (batch x c) tensors into (batch x steps x c).
    pub fn stack_steps(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "stack_steps: nothing to stack");
        let first = self.shape(parts[0]).to_vec();
        ensure!(first.len() == 2, "stack_steps: parts must be (batch x c), got {first:?}");
        for &p in parts {
            ensure!(self.shape(p) == first.as_slice(), "stack_steps: parts differ in shape");
        }
        let (batch, c) = (first[0], first[1]);
        let steps = parts.len();
        let mut out = vec![0.0; batch * steps * c];
        for (t, &p) in parts.iter().enumerate() {
            for (b, row) in self.value(p).data().chunks(c).enumerate() {
                let off = (b * steps + t) * c;
                out[off..off + c].copy_from_slice(row);
            }
        }
        let y = Tensor::new(&[batch, steps, c], out)?;
        Ok(self.push(y, Op::StackSteps(parts.to_vec()), parts))
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let y = Tensor::new(xv.shape(), out).expect("same shape");
        self.push(y, Op::Softmax(x), &[x])
    }

    /// Mean over rows of `-ln(max(p[gold], 1e-12))`.
    pub fn nll_mean(&mut self, probs: Var, golds: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let k = pv.last_dim();
        ensure!(
            pv.rows() == golds.len(),
            "nll: {} probability rows for {} gold labels",
            pv.rows(),
            golds.len()
        );
        if let Some(&bad) = golds.iter().find(|&&g| g >= k) {
            return Err(contract!("nll: gold class {bad} outside {k} classes"));
        }
        let mut total = 0.0;
        for (row, &g) in pv.data().chunks(k).zip(golds) {
            total -= row[g].max(PROB_FLOOR).ln();
        }
        let y = Tensor::scalar(total / golds.len() as f64);
        Ok(self.push(
            y,
            Op::NllMean {
                probs,
                golds: golds.to_vec(),
            },
            &[probs],
        ))
    }

    /// Reverse sweep from scalar `loss`. Every differentiable leaf receives a
    /// gradient, all-zero if `loss` does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.value(loss).len() == 1,
            "backward: loss must be a scalar, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                if matches!(node.op, Op::Leaf) {
                    leaves.insert(Var(i), Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                leaves.insert(Var(i), dy);
                continue;
            }
            self.backprop_node(node, &dy, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves.insert(Var(i), Tensor::zeros(node.value.shape()));
            }
        }
        let by_name = self
            .names
            .iter()
            .map(|(name, v)| (name.clone(), leaves[v].clone()))
            .collect();
        Ok(Gradients {
            by_var: leaves,
            by_name,
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, dy.clone());
                }
                if self.wants(*b) {
                    acc(*b, dy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, dy.clone());
                }
                if self.wants(*b) {
                    acc(*b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, dy.zip_map(self.value(*b), |g, v| g * v));
                }
                if self.wants(*b) {
                    acc(*b, dy.zip_map(self.value(*a), |g, v| g * v));
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                acc(*x, dy.map(|g| g * s));
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    acc(*x, dy.clone());
                }
                if self.wants(*bias) {
                    acc(*bias, column_sums(dy));
                }
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.last_dim(), bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, dy.data(), false, bv.data(), true, 0.0, &mut da);
                    acc(*a, Tensor::new(av.shape(), da).expect("shape"));
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, dy.data(), false, 0.0, &mut db);
                    acc(*b, Tensor::new(bv.shape(), db).expect("shape"));
                }
            }
            Op::Reshape(x) => {
                acc(*x, dy.reshaped(self.shape(*x)).expect("shape"));
            }
            Op::Tanh(x) => acc(*x, dy.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(x) => acc(*x, dy.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Relu(x) => acc(
                *x,
                dy.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 }),
            ),
            Op::MulConst { x, factor } => acc(*x, dy.zip_map(factor, |g, f| g * f)),
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), dy.data()[0])),
            Op::Embed { table, ids, pad } => {
                let tshape = self.shape(*table);
                let dim = tshape[1];
                let mut dt = Tensor::zeros(tshape);
                let d = dt.data_mut();
                for (row, &id) in dy.data().chunks(dim).zip(ids) {
                    if Some(id) == *pad {
                        continue;
                    }
                    for (t, g) in d[id * dim..(id + 1) * dim].iter_mut().zip(row) {
                        *t += g;
                    }
                }
                acc(*table, dt);
            }
            Op::Conv1d {
                x,
                w,
                b,
                window,
                cols,
            } => {
                let xshape = self.shape(*x);
                let (batch, steps, cin) = seq_dims(xshape).expect("validated in forward");
                let wv = self.value(*w);
                let cout = wv.shape()[2];
                let kc = window * cin;
                if self.wants(*b) {
                    acc(*b, column_sums(dy));
                }
                if self.wants(*w) {
                    let partials: Vec<Vec<f64>> = cols
                        .par_chunks(CONV_GRAD_CHUNK * steps * kc)
                        .zip(dy.data().par_chunks(CONV_GRAD_CHUNK * steps * cout))
                        .map(|(col, g)| {
                            let rows = g.len() / cout;
                            let mut part = vec![0.0; kc * cout];
                            gemm(kc, rows, cout, col, true, g, false, 0.0, &mut part);
                            part
                        })
                        .collect();
                    let mut dw = vec![0.0; kc * cout];
                    for part in &partials {
                        for (d, p) in dw.iter_mut().zip(part) {
                            *d += p;
                        }
                    }
                    acc(*w, Tensor::new(wv.shape(), dw).expect("shape"));
                }
                if self.wants(*x) {
                    let pad_left = same_padding_left(*window);
                    let wdata = wv.data();
                    let mut dx = vec![0.0; batch * steps * cin];
                    dx.par_chunks_mut(steps * cin)
                        .zip(dy.data().par_chunks(steps * cout))
                        .for_each(|(dxs, g)| {
                            let mut dcol = vec![0.0; steps * kc];
                            gemm(steps, cout, kc, g, false, wdata, true, 0.0, &mut dcol);
                            for t in 0..steps {
                                for dt in 0..*window {
                                    let src = t as isize + dt as isize - pad_left as isize;
                                    if src >= 0 && (src as usize) < steps {
                                        let s = src as usize;
                                        let from = &dcol[t * kc + dt * cin..t * kc + (dt + 1) * cin];
                                        for (d, v) in dxs[s * cin..(s + 1) * cin].iter_mut().zip(from) {
                                            *d += v;
                                        }
                                    }
                                }
                            }
                        });
                    acc(*x, Tensor::new(xshape, dx).expect("shape"));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let n = dy.rows() as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (g, h) in dy.data().chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_dy[j] += g[j];
                        sum_dy_xhat[j] += g[j] * h[j];
                    }
                }
                if self.wants(*gamma) {
                    acc(*gamma, Tensor::new(&[c], sum_dy_xhat.clone()).expect("shape"));
                }
                if self.wants(*beta) {
                    acc(*beta, Tensor::new(&[c], sum_dy.clone()).expect("shape"));
                }
                if self.wants(*x) {
                    let gm = self.value(*gamma).data();
                    let mut dx = vec![0.0; dy.len()];
                    for ((d, g), h) in dx.chunks_mut(c).zip(dy.data().chunks(c)).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            let scale = gm[j] * inv_std[j];
                            d[j] = if *batch_stats {
                                scale * (g[j] - sum_dy[j] / n - h[j] * sum_dy_xhat[j] / n)
                            } else {
                                scale * g[j]
                            };
                        }
                    }
                    acc(*x, Tensor::new(dy.shape(), dx).expect("shape"));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.data_mut();
                for (&src, g) in argmax.iter().zip(dy.data()) {
                    d[src] += g;
                }
                acc(*x, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let rows = dy.rows();
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for row in dy.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                if self.wants(*a) {
                    acc(*a, Tensor::new(self.shape(*a), da).expect("shape"));
                }
                if self.wants(*b) {
                    acc(*b, Tensor::new(self.shape(*b), db).expect("shape"));
                }
            }
            Op::SelectStep { x, step } => {
                let shape = self.shape(*x);
                let (batch, steps, c) = seq_dims(shape).expect("validated in forward");
                // Accumulate in place: one step touches only `batch * c` entries,
                // and a sequence of T selections must not cost T full copies.
                let d = grads[x.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut();
                for b in 0..batch {
                    let off = (b * steps + step) * c;
                    for (g, v) in d[off..off + c].iter_mut().zip(dy.row(b)) {
                        *g += v;
                    }
                }
            }
            Op::StackSteps(parts) => {
                let (batch, steps, c) = seq_dims(dy.shape()).expect("rank 3");
                for (t, &p) in parts.iter().enumerate() {
                    if !self.wants(p) {
                        continue;
                    }
                    let mut part = Vec::with_capacity(batch * c);
                    for b in 0..batch {
                        let off = (b * steps + t) * c;
                        part.extend_from_slice(&dy.data()[off..off + c]);
                    }
                    acc(p, Tensor::new(&[batch, c], part).expect("shape"));
                }
            }
            Op::Softmax(x) => {
                let c = y.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((d, p), g) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(dy.data().chunks(c)) {
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[j] = p[j] * (g[j] - dot);
                    }
                }
                acc(*x, Tensor::new(y.shape(), dx).expect("shape"));
            }
            Op::NllMean { probs, golds } => {
                let pv = self.value(*probs);
                let k = pv.last_dim();
                let scale = dy.data()[0] / golds.len() as f64;
                let mut dp = Tensor::zeros(pv.shape());
                let d = dp.data_mut();
                for (i, &g) in golds.iter().enumerate() {
                    let p = pv.data()[i * k + g];
                    if p >= PROB_FLOOR {
                        d[i * k + g] = -scale / p;
                    }
                }
                acc(*probs, dp);
            }
        }
    }
}

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let c = t.last_dim();
    let mut out = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::new(&[c], out).expect("non-empty")
}
