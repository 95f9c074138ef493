use std::sync::Arc;

use super::tensor::{axpy, dot, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, cols: Vec<f64> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log { x: Var, floor: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one backward pass. Not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

/// Split a tensor shape into `(rows, last)` for row-wise ops.
fn rows_cols(t: &Tensor) -> (usize, usize) {
    let last = t.last_dim();
    if last == 0 {
        (0, 0)
    } else {
        (t.len() / last, last)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value: Arc::new(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Arc<Tensor>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.constant_shared(Arc::new(t))
    }

    pub fn constant_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf with an explicit gradient flag (e.g. an input image for saliency).
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Arc::new(t), op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let aik = ad[i * k + kk];
                if aik != 0.0 {
                    axpy(aik, &bd[kk * n..(kk + 1) * n], row);
                }
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng, "matmul")
    }

    /// Adds a `[n]` (or `[1, n]`) bias to every row of `x`.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (_, cols) = rows_cols(tx);
        if tb.len() != cols {
            return Err(shape_err("bias_add", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            for (o, bb) in row.iter_mut().zip(tb.data()) {
                *o += bb;
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs(x) || self.needs(b);
        self.push(Tensor::new(shape, out)?, Op::BiasAdd(x, b), ng, "bias_add")
    }

    /// Valid (unpadded) 2-D convolution.
    /// `input [C, H, W]`, `weight [F, C, kh, kw]`, `bias [F]` -> `[F, Ho, Wo]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var, AutodiffError> {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let (is, ws) = (ti.shape(), tw.shape());
        if is.len() != 3 || ws.len() != 4 || is[0] != ws[1] || tb.len() != ws[0] || stride == 0 || is[1] < ws[2] || is[2] < ws[3] {
            return Err(shape_err(
                "conv2d",
                format!("input {:?}, weight {:?}, bias {:?}, stride {stride}", is, ws, tb.shape()),
            ));
        }
        let (c, h, w) = (is[0], is[1], is[2]);
        let (f, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = (h - kh) / stride + 1;
        let wo = (w - kw) / stride + 1;
        let k = c * kh * kw;
        let p = ho * wo;
        let x = ti.data();
        let mut cols = vec![0.0; p * k];
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut cols[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
                let mut j = 0;
                for ch in 0..c {
                    for ky in 0..kh {
                        let src = (ch * h + oy * stride + ky) * w + ox * stride;
                        dst[j..j + kw].copy_from_slice(&x[src..src + kw]);
                        j += kw;
                    }
                }
            }
        }
        let wd = tw.data();
        let bd = tb.data();
        let mut out = vec![0.0; f * p];
        for fi in 0..f {
            let wrow = &wd[fi * k..(fi + 1) * k];
            for pi in 0..p {
                out[fi * p + pi] = bd[fi] + dot(wrow, &cols[pi * k..(pi + 1) * k]);
            }
        }
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(Tensor::new(vec![f, ho, wo], out)?, Op::Conv2d { input, weight, bias, stride, cols }, ng, "conv2d")
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| f(v)).collect();
        let shape = tx.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape, out)?, op, ng, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor applies.
    pub fn log(&mut self, x: Var, floor: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Log { x, floor }, "log", move |v| v.max(floor).ln())
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, AutodiffError> {
        self.unary(x, Op::Scale(x, k), "scale", move |v| v * k)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        let (_, cols) = rows_cols(tx);
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = tx.shape().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), ng, "softmax")
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, out)?, op, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Concatenate along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let lead = self.value(*first).shape()[..self.value(*first).shape().len().saturating_sub(1)].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", format!("{:?} vs leading {:?}", s, lead)));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        let (rows, cols) = rows_cols(tx);
        if start + len > cols || len == 0 {
            return Err(shape_err("slice", format!("{start}..{} of {:?}", start + len, tx.shape())));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.data()[r * cols + start..r * cols + start + len]);
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::Slice { x, start, len }, ng, "slice")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng, "mean")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", t.shape(), shape)));
        }
        let data = t.data().to_vec();
        let ng = self.needs(x);
        self.push(Tensor::new(shape.to_vec(), data)?, Op::Reshape(x), ng, "reshape")
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(AutodiffError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFinite { op: op_name(&self.nodes[i].op) });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        let val = |v: Var| self.nodes[v.0].value.as_ref();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = slot(nodes, grads, *a, m * k) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            ga[i * k + kk] += dot(gi, &tb.data()[kk * n..(kk + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b, k * n) {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = ta.data()[i * k + kk];
                            if aik != 0.0 {
                                axpy(aik, gi, &mut gb[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::BiasAdd(x, b) => {
                let n = val(*b).len();
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    axpy(1.0, g, gx);
                }
                if let Some(gb) = slot(nodes, grads, *b, n) {
                    for row in g.chunks(n.max(1)) {
                        axpy(1.0, row, gb);
                    }
                }
            }
            Op::Conv2d { input, weight, bias, stride, cols } => {
                let (ti, tw) = (val(*input), val(*weight));
                let (c, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
                let (f, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
                let ho = (h - kh) / stride + 1;
                let wo = (w - kw) / stride + 1;
                let (k, p) = (c * kh * kw, ho * wo);
                if let Some(gb) = slot(nodes, grads, *bias, f) {
                    for fi in 0..f {
                        gb[fi] += g[fi * p..(fi + 1) * p].iter().sum::<f64>();
                    }
                }
                if let Some(gw) = slot(nodes, grads, *weight, f * k) {
                    for fi in 0..f {
                        let gwf = &mut gw[fi * k..(fi + 1) * k];
                        for pi in 0..p {
                            let gv = g[fi * p + pi];
                            if gv != 0.0 {
                                axpy(gv, &cols[pi * k..(pi + 1) * k], gwf);
                            }
                        }
                    }
                }
                if let Some(gi) = slot(nodes, grads, *input, c * h * w) {
                    let wd = tw.data();
                    let mut gcol = vec![0.0; k];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let pi = oy * wo + ox;
                            gcol.iter_mut().for_each(|v| *v = 0.0);
                            for fi in 0..f {
                                let gv = g[fi * p + pi];
                                if gv != 0.0 {
                                    axpy(gv, &wd[fi * k..(fi + 1) * k], &mut gcol);
                                }
                            }
                            let mut j = 0;
                            for ch in 0..c {
                                for ky in 0..kh {
                                    let dst = (ch * h + oy * stride + ky) * w + ox * stride;
                                    axpy(1.0, &gcol[j..j + kw], &mut gi[dst..dst + kw]);
                                    j += kw;
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        if *yi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = node.value.last_dim().max(1);
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    for ((o, gr), yr) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let s = dot(gr, yr);
                        for ((oi, gi), yi) in o.iter_mut().zip(gr).zip(yr) {
                            *oi += yi * (gi - s);
                        }
                    }
                }
            }
            Op::Log { x, floor } => {
                let xd = val(*x).data();
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xd) {
                        if *xi > *floor {
                            *o += gi / xi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a, g.len()) {
                    axpy(1.0, g, ga);
                }
                if let Some(gb) = slot(nodes, grads, *b, g.len()) {
                    axpy(1.0, g, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a, g.len()) {
                    axpy(1.0, g, ga);
                }
                if let Some(gb) = slot(nodes, grads, *b, g.len()) {
                    axpy(-1.0, g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if let Some(ga) = slot(nodes, grads, *a, g.len()) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b, g.len()) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(x, k) => {
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    axpy(*k, g, gx);
                }
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = if total == 0 { 0 } else { g.len() / total };
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    if let Some(gp) = slot(nodes, grads, p, rows * w) {
                        for r in 0..rows {
                            axpy(1.0, &g[r * total + offset..r * total + offset + w], &mut gp[r * w..(r + 1) * w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start, len } => {
                let tx = val(*x);
                let (rows, cols) = rows_cols(tx);
                if let Some(gx) = slot(nodes, grads, *x, tx.len()) {
                    for r in 0..rows {
                        axpy(1.0, &g[r * len..(r + 1) * len], &mut gx[r * cols + start..r * cols + start + len]);
                    }
                }
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                if let Some(gx) = slot(nodes, grads, *x, n) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                if let Some(gx) = slot(nodes, grads, *x, n) {
                    let share = g[0] / n as f64;
                    gx.iter_mut().for_each(|v| *v += share);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x, g.len()) {
                    axpy(1.0, g, gx);
                }
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::BiasAdd(..) => "bias_add",
        Op::Conv2d { .. } => "conv2d",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax(_) => "softmax",
        Op::Log { .. } => "log",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Concat(_) => "concat",
        Op::Slice { .. } => "slice",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Reshape(_) => "reshape",
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, or zeros of length `len` when nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}
