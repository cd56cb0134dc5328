//! Recording tape. Every op appends a node holding its output value; backward
//! replays the nodes in exact reverse order and accumulates (`+=`) gradients
//! into tracked inputs, so fan-out sums contributions.

use super::conv::{self, ConvKernel};
use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    ConvTranspose2 { x: Var, w: Var, b: Option<Var> },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    Dense { x: Var, w: Var, b: Option<Var> },
    DiceL2 { truth: Var, pred: Var },
    CrossEntropy { labels: Var, probs: Var },
    WeightedSum { x: Var, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    tracked: bool,
    leaf: bool,
}

pub const CE_LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(TensorError::Shape(msg))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input; its gradient is kept after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// A fixed input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false, true)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool, leaf: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
            leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push_node(value, op, tracked, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Stride-1 "same" convolution of `(b, c_in, h, w)` with `(c_out, c_in, k, k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let geo = ConvKernel::same(self.shape(w))?;
        let (batch, h, wd) = match *self.shape(x) {
            [batch, c, h, wd] if c == geo.c_in => (batch, h, wd),
            ref s => {
                return shape_err(format!(
                    "conv2d input {s:?} does not match {} input channels",
                    geo.c_in
                ))
            }
        };
        if h < geo.k || wd < geo.k {
            return shape_err(format!("conv2d spatial extent {h}x{wd} smaller than kernel {}", geo.k));
        }
        if let Some(b) = b {
            if self.shape(b) != [geo.c_out] {
                return shape_err(format!("conv2d bias {:?} must be [{}]", self.shape(b), geo.c_out));
            }
        }
        let mut out = Tensor::zeros(&[batch, geo.c_out, h, wd]);
        conv::conv2d_forward(
            &geo,
            self.value(x).values(),
            self.value(w).values(),
            b.map(|b| self.value(b).values()),
            batch,
            h,
            wd,
            out.values_mut(),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Conv2d { x, w, b }, &inputs))
    }

    /// 2x2 stride-2 transposed convolution with `(c_in, c_out, 2, 2)` weights.
    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (c_in, c_out) = match *self.shape(w) {
            [ci, co, 2, 2] => (ci, co),
            ref s => return shape_err(format!("transposed conv weights must be (c_in, c_out, 2, 2), got {s:?}")),
        };
        let (batch, h, wd) = match *self.shape(x) {
            [batch, c, h, wd] if c == c_in => (batch, h, wd),
            ref s => return shape_err(format!("transposed conv input {s:?} needs {c_in} channels")),
        };
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return shape_err(format!("transposed conv bias must be [{c_out}]"));
            }
        }
        let mut out = Tensor::zeros(&[batch, c_out, 2 * h, 2 * wd]);
        conv::tconv2_forward(
            self.value(x).values(),
            self.value(w).values(),
            b.map(|b| self.value(b).values()),
            batch,
            c_in,
            c_out,
            h,
            wd,
            out.values_mut(),
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::ConvTranspose2 { x, w, b }, &inputs))
    }

    /// 2x2 max-pool, stride 2. Ties go to the lowest linear index.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (bc, h, w) = match *self.shape(x) {
            [b, c, h, w] if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => (b * c, h, w),
            ref s => return shape_err(format!("maxpool2 needs even spatial extents, got {s:?}")),
        };
        let shape = self.shape(x).to_vec();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[shape[0], shape[1], oh, ow]);
        let mut argmax = vec![0usize; bc * oh * ow];
        let src = self.value(x).values();
        let dst = out.values_mut();
        for p in 0..bc {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for cand in [
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    let o = p * oh * ow + i * ow + j;
                    dst[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `(b, c, spatial...) -> (b, c)` by maximum over space.
    pub fn global_maxpool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return shape_err(format!("global_maxpool needs spatial axes, got {shape:?}"));
        }
        let plane: usize = shape[2..].iter().product();
        if plane == 0 {
            return shape_err("global_maxpool over an empty plane".into());
        }
        let bc = shape[0] * shape[1];
        let mut out = Tensor::zeros(&[shape[0], shape[1]]);
        let mut argmax = vec![0usize; bc];
        let src = self.value(x).values();
        for p in 0..bc {
            let mut best = p * plane;
            for idx in p * plane + 1..(p + 1) * plane {
                if src[idx] > src[best] {
                    best = idx;
                }
            }
            argmax[p] = best;
            out.values_mut()[p] = src[best];
        }
        Ok(self.push(out, Op::GlobalMaxPool { x, argmax }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Softmax over axis 1 (channels), independently per batch item and position.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err(format!("softmax needs (batch, channels, ...), got {shape:?}"));
        }
        let (batch, ch) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mut out = Tensor::zeros(&shape);
        let src = self.value(x).values();
        let dst = out.values_mut();
        for b in 0..batch {
            for p in 0..inner {
                let idx = |c: usize| (b * ch + c) * inner + p;
                let max = (0..ch).map(|c| src[idx(c)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for c in 0..ch {
                    let e = (src[idx(c)] - max).exp();
                    dst[idx(c)] = e;
                    sum += e;
                }
                for c in 0..ch {
                    dst[idx(c)] /= sum;
                }
            }
        }
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("add of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.shape(*p).to_vec(),
            None => return shape_err("concat of nothing".into()),
        };
        if first.len() < 2 {
            return shape_err(format!("concat needs (batch, channels, ...), got {first:?}"));
        }
        let mut ch = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return shape_err(format!("concat of {first:?} and {s:?}"));
            }
            ch += s[1];
        }
        let inner: usize = first[2..].iter().product();
        let mut shape = first.clone();
        shape[1] = ch;
        let mut out = Tensor::zeros(&shape);
        let mut offset = 0;
        for p in parts {
            let c = self.shape(*p)[1];
            let src = self.value(*p).values();
            for b in 0..first[0] {
                let dst = &mut out.values_mut()[(b * ch + offset) * inner..(b * ch + offset + c) * inner];
                dst.copy_from_slice(&src[b * c * inner..(b + 1) * c * inner]);
            }
            offset += c;
        }
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// `y = x W^T + b` for `x: (batch, in)`, `W: (out, in)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, din) = match *self.shape(x) {
            [b, d] => (b, d),
            ref s => return shape_err(format!("dense input must be (batch, features), got {s:?}")),
        };
        let dout = match *self.shape(w) {
            [o, i] if i == din => o,
            ref s => return shape_err(format!("dense weights {s:?} do not take {din} features")),
        };
        let mut out = Tensor::zeros(&[batch, dout]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return shape_err(format!("dense bias must be [{dout}]"));
            }
            let bias = self.value(b).values().to_vec();
            for row in out.values_mut().chunks_exact_mut(dout) {
                row.copy_from_slice(&bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            batch,
            din,
            dout,
            T::one(),
            self.value(x).values(),
            din as isize,
            1,
            self.value(w).values(),
            1,
            din as isize,
            beta,
            out.values_mut(),
            dout as isize,
            1,
        );
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Dense { x, w, b }, &inputs))
    }

    /// `||t - p||^2 / (||t||^2 + ||p||^2)` over the whole tensor.
    pub fn dice_l2_loss(&mut self, truth: Var, pred: Var) -> Result<Var> {
        if self.shape(truth) != self.shape(pred) {
            return shape_err(format!(
                "dice loss of {:?} against {:?}",
                self.shape(truth),
                self.shape(pred)
            ));
        }
        let (num, den) = dice_terms(self.value(truth).values(), self.value(pred).values());
        if den == T::zero() {
            return Err(TensorError::Domain("dice loss of two all-zero tensors is 0/0".into()));
        }
        Ok(self.push(Tensor::scalar(num / den), Op::DiceL2 { truth, pred }, &[truth, pred]))
    }

    /// Mean over the batch of `-sum(label * ln(max(prob, 1e-12)))`.
    pub fn cross_entropy(&mut self, labels: Var, probs: Var) -> Result<Var> {
        let (batch, classes) = match *self.shape(probs) {
            [b, c] if b > 0 && c > 0 => (b, c),
            ref s => return shape_err(format!("cross entropy expects (batch, classes), got {s:?}")),
        };
        if self.shape(labels) != self.shape(probs) {
            return shape_err("labels and probabilities differ in shape".into());
        }
        let p = self.value(probs).values();
        let l = self.value(labels).values();
        for b in 0..batch {
            let row = &p[b * classes..(b + 1) * classes];
            let sum: f64 = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
            if !((sum - 1.0).abs() <= 1e-6) || row.iter().any(|v| *v < T::zero()) {
                return Err(TensorError::Contract(format!(
                    "probability row {b} sums to {sum}, not 1"
                )));
            }
            let lrow = &l[b * classes..(b + 1) * classes];
            let ones = lrow.iter().filter(|v| **v == T::one()).count();
            let zeros = lrow.iter().filter(|v| **v == T::zero()).count();
            if ones != 1 || ones + zeros != classes {
                return Err(TensorError::Contract(format!("label row {b} is not one-hot")));
            }
        }
        let clamp = T::lit(CE_LOG_CLAMP);
        let mut total = T::zero();
        for (pv, lv) in p.iter().zip(l) {
            if *lv != T::zero() {
                total -= *lv * pv.max(clamp).ln();
            }
        }
        let loss = total / T::from_usize(batch).expect("batch fits");
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { labels, probs }, &[labels, probs]))
    }

    /// `sum(x * weights)`; reduces any tensor to a scalar with a fixed probe.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return shape_err("weighted_sum weight count differs from tensor size".into());
        }
        let mut s = T::zero();
        for (a, b) in self.value(x).values().iter().zip(&weights) {
            s += *a * *b;
        }
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Reverse pass from a single-element `loss`. Gradients of non-leaf nodes
    /// are released once propagated; leaf gradients remain readable.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward needs a scalar, got {:?}", self.shape(loss)));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].leaf || !self.nodes[idx].tracked {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(idx, &grad);
            for (var, g) in contributions {
                let node = &mut self.nodes[var.0];
                if !node.tracked {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn input_grads(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let gv = g.values();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let geo = ConvKernel::same(self.shape(*w)).expect("checked in forward");
                let s = self.shape(*x);
                let (batch, h, wd) = (s[0], s[2], s[3]);
                let mut dx = self.wants(*x).then(|| Tensor::zeros(s));
                let mut dw = self.wants(*w).then(|| Tensor::zeros(self.shape(*w)));
                let mut db = b.filter(|b| self.wants(*b)).map(|b| Tensor::zeros(self.shape(b)));
                conv::conv2d_backward(
                    &geo,
                    self.value(*x).values(),
                    self.value(*w).values(),
                    gv,
                    batch,
                    h,
                    wd,
                    dx.as_mut().map(|t| t.values_mut()),
                    dw.as_mut().map(|t| t.values_mut()),
                    db.as_mut().map(|t| t.values_mut()),
                );
                push_some(&mut out, *x, dx);
                push_some(&mut out, *w, dw);
                if let Some(b) = b {
                    push_some(&mut out, *b, db);
                }
            }
            Op::ConvTranspose2 { x, w, b } => {
                let s = self.shape(*x);
                let (batch, c_in, h, wd) = (s[0], s[1], s[2], s[3]);
                let c_out = self.shape(*w)[1];
                let mut dx = self.wants(*x).then(|| Tensor::zeros(s));
                let mut dw = self.wants(*w).then(|| Tensor::zeros(self.shape(*w)));
                let mut db = b.filter(|b| self.wants(*b)).map(|b| Tensor::zeros(self.shape(b)));
                conv::tconv2_backward(
                    self.value(*x).values(),
                    self.value(*w).values(),
                    gv,
                    batch,
                    c_in,
                    c_out,
                    h,
                    wd,
                    dx.as_mut().map(|t| t.values_mut()),
                    dw.as_mut().map(|t| t.values_mut()),
                    db.as_mut().map(|t| t.values_mut()),
                );
                push_some(&mut out, *x, dx);
                push_some(&mut out, *w, dw);
                if let Some(b) = b {
                    push_some(&mut out, *b, db);
                }
            }
            Op::MaxPool2 { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                let d = dx.values_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    d[src] += gv[o];
                }
                out.push((*x, dx));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).values();
                let mut dx = Tensor::zeros(self.shape(*x));
                for ((d, &xi), &gi) in dx.values_mut().iter_mut().zip(xv).zip(gv) {
                    if xi > T::zero() {
                        *d = gi;
                    }
                }
                out.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let y = node.value.values();
                let mut dx = Tensor::zeros(self.shape(*x));
                for ((d, &yi), &gi) in dx.values_mut().iter_mut().zip(y).zip(gv) {
                    *d = gi * yi * (T::one() - yi);
                }
                out.push((*x, dx));
            }
            Op::Softmax(x) => {
                let shape = self.shape(*x);
                let (batch, ch) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let y = node.value.values();
                let mut dx = Tensor::zeros(shape);
                let d = dx.values_mut();
                for b in 0..batch {
                    for p in 0..inner {
                        let idx = |c: usize| (b * ch + c) * inner + p;
                        let mut dot = T::zero();
                        for c in 0..ch {
                            dot += gv[idx(c)] * y[idx(c)];
                        }
                        for c in 0..ch {
                            d[idx(c)] = y[idx(c)] * (gv[idx(c)] - dot);
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Concat(parts) => {
                let shape = node.value.shape();
                let (batch, ch) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let mut offset = 0;
                for p in parts {
                    let c = self.shape(*p)[1];
                    if self.wants(*p) {
                        let mut dp = Tensor::zeros(self.shape(*p));
                        for b in 0..batch {
                            dp.values_mut()[b * c * inner..(b + 1) * c * inner]
                                .copy_from_slice(&gv[(b * ch + offset) * inner..(b * ch + offset + c) * inner]);
                        }
                        out.push((*p, dp));
                    }
                    offset += c;
                }
            }
            Op::Dense { x, w, b } => {
                let (batch, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x));
                    T::gemm(
                        batch, dout, din, T::one(), gv, dout as isize, 1, self.value(*w).values(),
                        din as isize, 1, T::zero(), dx.values_mut(), din as isize, 1,
                    );
                    out.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(self.shape(*w));
                    T::gemm(
                        dout, batch, din, T::one(), gv, 1, dout as isize, self.value(*x).values(),
                        din as isize, 1, T::zero(), dw.values_mut(), din as isize, 1,
                    );
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = Tensor::zeros(&[dout]);
                    for row in gv.chunks_exact(dout) {
                        for (d, v) in db.values_mut().iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    out.push((b, db));
                }
            }
            Op::DiceL2 { truth, pred } => {
                let t = self.value(*truth).values();
                let p = self.value(*pred).values();
                let (num, den) = dice_terms(t, p);
                let two = T::lit(2.0);
                let scale = gv[0] / (den * den);
                let grad_for = |a: &[T], other: &[T]| {
                    let mut d = Tensor::zeros(self.shape(*pred));
                    for ((di, &ai), &oi) in d.values_mut().iter_mut().zip(a).zip(other) {
                        *di = scale * two * ((ai - oi) * den - ai * num);
                    }
                    d
                };
                if self.wants(*pred) {
                    out.push((*pred, grad_for(p, t)));
                }
                if self.wants(*truth) {
                    out.push((*truth, grad_for(t, p)));
                }
            }
            Op::CrossEntropy { labels, probs } => {
                if self.wants(*probs) {
                    let p = self.value(*probs).values();
                    let l = self.value(*labels).values();
                    let batch = T::from_usize(self.shape(*probs)[0]).expect("batch fits");
                    let clamp = T::lit(CE_LOG_CLAMP);
                    let mut dp = Tensor::zeros(self.shape(*probs));
                    for ((d, &pi), &li) in dp.values_mut().iter_mut().zip(p).zip(l) {
                        if li != T::zero() && pi > clamp {
                            *d = -gv[0] * li / (pi * batch);
                        }
                    }
                    out.push((*probs, dp));
                }
            }
            Op::WeightedSum { x, weights } => {
                let values: Vec<T> = weights.iter().map(|w| *w * gv[0]).collect();
                out.push((*x, Tensor::from_vec(self.shape(*x), values).expect("same size")));
            }
        }
        out
    }
}

fn push_some<T>(out: &mut Vec<(Var, Tensor<T>)>, v: Var, t: Option<Tensor<T>>) {
    if let Some(t) = t {
        out.push((v, t));
    }
}

fn dice_terms<T: Scalar>(t: &[T], p: &[T]) -> (T, T) {
    let mut num = T::zero();
    let mut den = T::zero();
    for (&a, &b) in t.iter().zip(p) {
        num += (a - b) * (a - b);
        den += a * a + b * b;
    }
    (num, den)
}
