//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a [`ComputeNode`] in creation order,
//! so node indices are already a topological order and [`Graph::backward`]
//! only has to walk the tape in reverse.

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{NumericsError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols { src: Var, start: usize },
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d { input: Var, weight: Var, bias: Var },
    AvgPool2d { input: Var, ph: usize, pw: usize },
    MeanRows(Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
        Op::Scale(a, _) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) | Op::Sum(a) | Op::Mean(a) | Op::Reshape(a) | Op::MeanRows(a) => {
            vec![*a]
        }
        Op::SliceCols { src, .. } => vec![*src],
        Op::Conv2d { input, weight, bias } => vec![*input, *weight, *bias],
        Op::AvgPool2d { input, .. } => vec![*input],
        Op::BceWithLogits { logits, .. } => vec![*logits],
    }
}

/// One recorded value with the rule needed to push gradients to its parents.
#[derive(Debug, Clone)]
pub struct ComputeNode {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

impl ComputeNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Parents in operand order.
    pub fn parents(&self) -> Vec<Var> {
        op_parents(&self.op)
    }

    /// Name of the backward rule.
    pub fn rule(&self) -> &'static str {
        match self.op {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::MeanRows(..) => "mean_rows",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when `var` did not influence the loss.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<ComputeNode>,
}

fn shape_err(msg: impl Into<String>) -> NumericsError {
    NumericsError::Shape(msg.into())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

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

    pub fn node(&self, var: Var) -> &ComputeNode {
        &self.nodes[var.0]
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op_parents(&op).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(ComputeNode { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(ComputeNode {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(format!(
                "{} between {:?} and {:?}",
                match op {
                    Op::Add(..) => "add",
                    Op::Sub(..) => "sub",
                    _ => "mul",
                },
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(bias).len() != n {
            return Err(shape_err(format!("bias of {} for {n} columns", self.value(bias).len())));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        Ok(self.push(t, Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect()).expect("same shape");
        self.push(t, Op::Scale(x, factor))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| f(*a)).collect()).expect("same shape");
        self.push(t, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |a| a.max(0.0), Op::Relu(x))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.value(src).dims2()?;
        if len == 0 || start + len > n {
            return Err(shape_err(format!("slice {start}..{} of {n} columns", start + len)));
        }
        let d = self.value(src).data();
        let mut out = Vec::with_capacity(m * len);
        for row in d.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::matrix(m, len, out)?;
        Ok(self.push(t, Op::SliceCols { src, start }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ma, na) = self.value(a).dims2()?;
        let (mb, nb) = self.value(b).dims2()?;
        if ma != mb {
            return Err(shape_err(format!("concat rows {ma} vs {mb}")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ma * (na + nb));
        for i in 0..ma {
            out.extend_from_slice(&da[i * na..(i + 1) * na]);
            out.extend_from_slice(&db[i * nb..(i + 1) * nb]);
        }
        let t = Tensor::matrix(ma, na + nb, out)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Mean squared error between two same-shaped nodes.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NumericsError> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Stride-1 "same" convolution. `input` is `[N, Cin, H, W]`, `weight` is
    /// `[Cout, Cin, KH, KW]` with odd kernel sides, `bias` has `Cout` entries.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, NumericsError> {
        let (n, ci, h, w) = dims4(self.value(input))?;
        let (co, ci2, kh, kw) = dims4(self.value(weight))?;
        if ci != ci2 || kh % 2 == 0 || kw % 2 == 0 || self.value(bias).len() != co {
            return Err(shape_err(format!(
                "conv2d input {:?} weight {:?} bias {:?}",
                self.value(input).shape(),
                self.value(weight).shape(),
                self.value(bias).shape()
            )));
        }
        let x = self.value(input).data();
        let k = self.value(weight).data();
        let b = self.value(bias).data();
        let (ph, pw) = (kh / 2, kw / 2);
        let mut out = vec![0.0; n * co * h * w];
        for s in 0..n {
            for o in 0..co {
                let plane = &mut out[((s * co) + o) * h * w..((s * co) + o + 1) * h * w];
                plane.iter_mut().for_each(|v| *v = b[o]);
                for c in 0..ci {
                    let xin = &x[((s * ci) + c) * h * w..((s * ci) + c + 1) * h * w];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let kv = k[((o * ci + c) * kh + dy) * kw + dx];
                            for y in 0..h {
                                let iy = y as isize + dy as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let iy = iy as usize;
                                let (x0, x1) = conv_span(w, dx, pw);
                                for xo in x0..x1 {
                                    let ix = xo + dx - pw;
                                    plane[y * w + xo] += kv * xin[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, co, h, w], out)?;
        Ok(self.push(t, Op::Conv2d { input, weight, bias }))
    }

    /// Non-overlapping average pooling over `[N, C, H, W]`; trailing rows and
    /// columns that do not fill a window are dropped.
    pub fn avg_pool2d(&mut self, input: Var, ph: usize, pw: usize) -> Result<Var, NumericsError> {
        let (n, c, h, w) = dims4(self.value(input))?;
        if ph == 0 || pw == 0 || h < ph || w < pw {
            return Err(shape_err(format!("pool {ph}x{pw} over {h}x{w}")));
        }
        let (oh, ow) = (h / ph, w / pw);
        let x = self.value(input).data();
        let norm = 1.0 / (ph * pw) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let xin = &x[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..oh * ph {
                for xx in 0..ow * pw {
                    o[(y / ph) * ow + xx / pw] += xin[y * w + xx] * norm;
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(t, Op::AvgPool2d { input, ph, pw }))
    }

    /// Averages `[N, C, H, W]` over `H`, flattening to `[N, C * W]`.
    pub fn mean_rows(&mut self, input: Var) -> Result<Var, NumericsError> {
        let (n, c, h, w) = dims4(self.value(input))?;
        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * w];
        for plane in 0..n * c {
            let xin = &x[plane * h * w..(plane + 1) * h * w];
            let o = &mut out[plane * w..(plane + 1) * w];
            for row in xin.chunks(w) {
                for (ov, v) in o.iter_mut().zip(row) {
                    *ov += v / h as f64;
                }
            }
        }
        let t = Tensor::matrix(n, c * w, out)?;
        Ok(self.push(t, Op::MeanRows(input)))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(shape_err(format!("{} logits for {} targets", z.len(), targets.len())));
        }
        let loss = z
            .iter()
            .zip(targets)
            .map(|(z, y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = &mut grads[var.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[var.0].value.shape()));
        f(t.data_mut());
    }

    fn propagate(&self, node: &ComputeNode, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("matrix");
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| matmul_bt_acc(gd, bv, ga, m, k, n));
                self.accumulate(grads, *b, |gb| matmul_at_acc(av, gd, gb, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((x, y), bb) in ga.iter_mut().zip(gd).zip(bv) {
                        *x += y * bb;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((x, y), aa) in gb.iter_mut().zip(gd).zip(av) {
                        *x += y * aa;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                self.accumulate(grads, *x, |gx| add_into(gx, gd));
                self.accumulate(grads, *bias, |gb| {
                    for row in gd.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, |gx| gx.iter_mut().zip(gd).for_each(|(a, b)| *a += b * f)),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((a, b), s) in gx.iter_mut().zip(gd).zip(y) {
                        *a += b * s * (1.0 - s);
                    }
                })
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for ((a, b), t) in gx.iter_mut().zip(gd).zip(y) {
                        *a += b * (1.0 - t * t);
                    }
                })
            }
            Op::Relu(x) => {
                let xin = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for ((a, b), v) in gx.iter_mut().zip(gd).zip(xin) {
                        if *v > 0.0 {
                            *a += b;
                        }
                    }
                })
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).shape()[1];
                let len = node.value.shape()[1];
                self.accumulate(grads, *src, |gs| {
                    for (grow, orow) in gs.chunks_mut(n).zip(gd.chunks(len)) {
                        add_into(&mut grow[*start..*start + len], orow);
                    }
                })
            }
            Op::ConcatCols(a, b) => {
                let na = self.value(*a).shape()[1];
                let nb = self.value(*b).shape()[1];
                self.accumulate(grads, *a, |ga| {
                    for (grow, orow) in ga.chunks_mut(na).zip(gd.chunks(na + nb)) {
                        add_into(grow, &orow[..na]);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (grow, orow) in gb.chunks_mut(nb).zip(gd.chunks(na + nb)) {
                        add_into(grow, &orow[na..]);
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += gd[0] / n))
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| add_into(gx, gd)),
            Op::Conv2d { input, weight, bias } => self.conv2d_backward(*input, *weight, *bias, gd, grads),
            Op::AvgPool2d { input, ph, pw } => {
                let (_, _, h, w) = dims4(self.value(*input)).expect("rank 4");
                let (oh, ow) = (h / ph, w / pw);
                let norm = 1.0 / (ph * pw) as f64;
                self.accumulate(grads, *input, |gx| {
                    for (plane, gplane) in gx.chunks_mut(h * w).zip(gd.chunks(oh * ow)) {
                        for y in 0..oh * ph {
                            for xx in 0..ow * pw {
                                plane[y * w + xx] += gplane[(y / ph) * ow + xx / pw] * norm;
                            }
                        }
                    }
                })
            }
            Op::MeanRows(input) => {
                let (_, _, h, w) = dims4(self.value(*input)).expect("rank 4");
                self.accumulate(grads, *input, |gx| {
                    for (plane, gplane) in gx.chunks_mut(h * w).zip(gd.chunks(w)) {
                        for row in plane.chunks_mut(w) {
                            for (a, b) in row.iter_mut().zip(gplane) {
                                *a += b / h as f64;
                            }
                        }
                    }
                })
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let n = z.len() as f64;
                self.accumulate(grads, *logits, |gz| {
                    for ((a, zv), y) in gz.iter_mut().zip(z).zip(targets) {
                        *a += gd[0] * (sigmoid(*zv) - y) / n;
                    }
                })
            }
        }
    }

    fn conv2d_backward(&self, input: Var, weight: Var, bias: Var, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let (n, ci, h, w) = dims4(self.value(input)).expect("rank 4");
        let (co, _, kh, kw) = dims4(self.value(weight)).expect("rank 4");
        let (ph, pw) = (kh / 2, kw / 2);
        let x = self.value(input).data();
        let k = self.value(weight).data();
        let plane = h * w;
        self.accumulate(grads, bias, |gb| {
            for s in 0..n {
                for o in 0..co {
                    gb[o] += gd[(s * co + o) * plane..(s * co + o + 1) * plane].iter().sum::<f64>();
                }
            }
        });
        self.accumulate(grads, weight, |gk| {
            for s in 0..n {
                for o in 0..co {
                    let gplane = &gd[(s * co + o) * plane..(s * co + o + 1) * plane];
                    for c in 0..ci {
                        let xin = &x[(s * ci + c) * plane..(s * ci + c + 1) * plane];
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let mut acc = 0.0;
                                for y in 0..h {
                                    let iy = y as isize + dy as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let iy = iy as usize;
                                    let (x0, x1) = conv_span(w, dx, pw);
                                    for xo in x0..x1 {
                                        acc += gplane[y * w + xo] * xin[iy * w + xo + dx - pw];
                                    }
                                }
                                gk[((o * ci + c) * kh + dy) * kw + dx] += acc;
                            }
                        }
                    }
                }
            }
        });
        self.accumulate(grads, input, |gx| {
            for s in 0..n {
                for o in 0..co {
                    let gplane = &gd[(s * co + o) * plane..(s * co + o + 1) * plane];
                    for c in 0..ci {
                        let gin = &mut gx[(s * ci + c) * plane..(s * ci + c + 1) * plane];
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let kv = k[((o * ci + c) * kh + dy) * kw + dx];
                                for y in 0..h {
                                    let iy = y as isize + dy as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let iy = iy as usize;
                                    let (x0, x1) = conv_span(w, dx, pw);
                                    for xo in x0..x1 {
                                        gin[iy * w + xo + dx - pw] += kv * gplane[y * w + xo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
}

/// Output columns `x0..x1` for which kernel column `dx` lands inside the input.
fn conv_span(w: usize, dx: usize, pw: usize) -> (usize, usize) {
    let x0 = pw.saturating_sub(dx);
    let x1 = (w + pw).saturating_sub(dx).min(w);
    (x0, x1.max(x0))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize), NumericsError> {
    match t.shape() {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        s => Err(shape_err(format!("expected rank-4 tensor, got {s:?}"))),
    }
}
