use std::collections::HashMap;
use std::sync::Arc;

use super::{dot, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, sigmoid, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Conv1d { input: Var, filters: Var, width: usize },
    MaxPoolTime { input: Var, argmax: Vec<usize> },
    Bilinear(Var, Var, Var),
    Cosine(Var, Var),
    EmbeddingLookup { table: Var, ids: Vec<usize> },
    SumRows(Var),
    Sum(Var),
    NllLoss(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Tape of primitive applications, in evaluation (topological) order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<(u64, ParamId), Var>,
}

/// Gradients of the loss with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_str(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Tracked input whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a parameter into the graph; repeated binds return the same node,
    /// so every use shares one gradient accumulator.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let key = (params.uid(), id);
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let v = self.push_shared(params.shared(id), Op::Leaf, true);
        self.bound.insert(key, v);
        v
    }

    /// Binds a parameter without tracking its gradient.
    pub fn frozen_param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push_shared(params.shared(id), Op::Leaf, false)
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the result drops the corresponding axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (sa[0], sa[1], sb[1]),
            (1, 2) if sa[0] == sb[0] => (1, sa[0], sb[1]),
            (2, 1) if sa[1] == sb[0] => (sa[0], sa[1], 1),
            _ => return Err(Error::shape("matmul", shape_str(&[&sa, &sb]))),
        };
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (1, 2) => vec![n],
            _ => vec![m],
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equal shapes, or a matrix plus a row vector added to
    /// every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let rg = self.rg(a) || self.rg(b);
        if sa == sb {
            let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
            return Ok(self.push(Tensor::new(sa, data)?, Op::Add(a, b), rg));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let bias = self.value(b).data();
            let mut data = self.value(a).data().to_vec();
            for row in data.chunks_mut(sa[1]) {
                for (x, &bv) in row.iter_mut().zip(bias) {
                    *x += bv;
                }
            }
            return Ok(self.push(Tensor::new(sa, data)?, Op::AddRowBroadcast(a, b), rg));
        }
        Err(Error::shape("add", shape_str(&[&sa, &sb])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape("mul", shape_str(&[&sa, &sb])));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(sa, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Concatenates vectors and scalars into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(Error::shape("concat", format!("operand of shape {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// `len` consecutive entries of a vector starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 1 || start + len > t.len() {
            return Err(Error::shape(
                "slice",
                format!("{:?} [{start}..{}]", t.shape(), start + len),
            ));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, start), rg))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || i >= t.shape()[0] {
            return Err(Error::shape("row", format!("{:?} row {i}", t.shape())));
        }
        let out = Tensor::vector(t.row(i).to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Row(a, i), rg))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::shape("stack_rows", "no rows"));
        };
        let cols = self.value(first).len();
        let mut data = Vec::with_capacity(cols * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != cols {
                return Err(Error::shape("stack_rows", format!("row {:?} vs width {cols}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(Tensor::matrix(rows.len(), cols, data)?, Op::StackRows(rows.to_vec()), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || t.rank() > 2 {
            return Err(Error::shape("softmax", format!("{:?}", t.shape())));
        }
        let cols = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Valid 1-D convolution with stride 1.
    ///
    /// `input` is `[T × d]` (one row per position), `filters` is
    /// `[F × width·d]` with each row a flattened `width × d` window. The
    /// result is `[T − width + 1 × F]`.
    pub fn conv1d(&mut self, input: Var, filters: Var, width: usize) -> Result<Var> {
        let (si, sf) = (self.shape(input).to_vec(), self.shape(filters).to_vec());
        if si.len() != 2 || sf.len() != 2 || width == 0 || sf[1] != width * si[1] || si[0] < width {
            return Err(Error::shape(
                "conv1d",
                format!("input {si:?}, filters {sf:?}, width {width}"),
            ));
        }
        let (t_len, d, f) = (si[0], si[1], sf[0]);
        let out_len = t_len - width + 1;
        let x = self.value(input).data();
        let w = self.value(filters).data();
        // Windows are contiguous in row-major layout.
        let mut out = vec![0.0; out_len * f];
        for t in 0..out_len {
            let window = &x[t * d..(t + width) * d];
            for (j, o) in out[t * f..(t + 1) * f].iter_mut().enumerate() {
                *o = dot(&w[j * width * d..(j + 1) * width * d], window);
            }
        }
        let rg = self.rg(input) || self.rg(filters);
        Ok(self.push(
            Tensor::matrix(out_len, f, out)?,
            Op::Conv1d { input, filters, width },
            rg,
        ))
    }

    /// Column-wise maximum of a `[T × F]` matrix; ties resolve to the earliest row.
    pub fn maxpool_over_time(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.rank() != 2 || t.shape()[0] == 0 {
            return Err(Error::shape("maxpool_over_time", format!("{:?}", t.shape())));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut best = t.row(0).to_vec();
        let mut argmax = vec![0; cols];
        for r in 1..rows {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(Tensor::vector(best), Op::MaxPoolTime { input, argmax }, rg))
    }

    /// `xᵀ M y` as a scalar.
    pub fn bilinear(&mut self, x: Var, m: Var, y: Var) -> Result<Var> {
        let (sx, sm, sy) = (self.shape(x).to_vec(), self.shape(m).to_vec(), self.shape(y).to_vec());
        if sx.len() != 1 || sy.len() != 1 || sm != [sx[0], sy[0]] {
            return Err(Error::shape("bilinear", shape_str(&[&sx, &sm, &sy])));
        }
        let (xv, mv, yv) = (self.value(x).data(), self.value(m).data(), self.value(y).data());
        let n = yv.len();
        let s: f64 = xv
            .iter()
            .enumerate()
            .map(|(i, &xi)| xi * dot(&mv[i * n..(i + 1) * n], yv))
            .sum();
        let rg = self.rg(x) || self.rg(m) || self.rg(y);
        Ok(self.push(Tensor::scalar(s), Op::Bilinear(x, m, y), rg))
    }

    /// Cosine similarity of two vectors; zero when either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 1 || sa != sb {
            return Err(Error::shape("cosine", shape_str(&[&sa, &sb])));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (na, nb) = (dot(av, av).sqrt(), dot(bv, bv).sqrt());
        let c = if na < COSINE_EPS || nb < COSINE_EPS {
            0.0
        } else {
            dot(av, bv) / (na * nb)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), rg))
    }

    /// Gathers rows of a `[V × d]` table into an `[n × d]` matrix.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || ids.iter().any(|&i| i >= t.shape()[0]) || ids.is_empty() {
            return Err(Error::shape(
                "embedding_lookup",
                format!("table {:?}, {} ids", t.shape(), ids.len()),
            ));
        }
        let d = t.shape()[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, data)?,
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Sums the rows of a matrix into a vector.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::shape("sum_rows", format!("{:?}", t.shape())));
        }
        let cols = t.shape()[1];
        let mut out = vec![0.0; cols];
        for row in t.data().chunks(cols.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(out), Op::SumRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let v = self.concat(terms)?;
        Ok(self.sum(v))
    }

    /// `−ln p[target]` for a probability vector.
    pub fn nll_loss(&mut self, probs: Var, target: usize) -> Result<Var> {
        let t = self.value(probs);
        if t.rank() != 1 || target >= t.len() {
            return Err(Error::shape("nll_loss", format!("{:?} target {target}", t.shape())));
        }
        let p = t.data()[target];
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::NllLoss(probs, target), rg))
    }

    /// Reverse sweep from a scalar `loss`; each node is visited once, in
    /// reverse evaluation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = match (sa.len(), sb.len()) {
                    (2, 2) => (sa[0], sa[1], sb[1]),
                    (1, 2) => (1, sa[0], sb[1]),
                    _ => (sa[0], sa[1], 1),
                };
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| gemm_a_bt_acc(g, bv, m, n, k, ga));
                self.accumulate(grads, *b, |gb| gemm_at_b_acc(av, g, m, k, n, gb));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::AddRowBroadcast(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let cols = self.value(*b).len();
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |ga| {
                for (o, &gi) in ga.iter_mut().zip(g) {
                    *o += c * gi;
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                self.accumulate(grads, *a, |ga| add_into(&mut ga[*start..*start + g.len()], g));
            }
            Op::Row(a, r) => {
                let n = g.len();
                self.accumulate(grads, *a, |ga| add_into(&mut ga[r * n..(r + 1) * n], g));
            }
            Op::StackRows(rows) => {
                let n = self.value(rows[0]).len();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(grads, r, |gr| add_into(gr, &g[i * n..(i + 1) * n]));
                }
            }
            Op::Relu(a) => self.accumulate(grads, *a, |ga| {
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    if yi > 0.0 {
                        *o += gi;
                    }
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |ga| {
                for ((o, &gi), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }),
            Op::Softmax(a) => {
                let cols = node.value.cols();
                self.accumulate(grads, *a, |ga| {
                    for ((grow, yrow), orow) in g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let inner = dot(grow, yrow);
                        for ((o, &gi), &yi) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - inner);
                        }
                    }
                });
            }
            Op::Conv1d { input, filters, width } => {
                let d = self.shape(*input)[1];
                let f = self.shape(*filters)[0];
                let span = width * d;
                let out_len = g.len() / f;
                let (x, w) = (self.value(*input).data(), self.value(*filters).data());
                self.accumulate(grads, *filters, |gw| {
                    for t in 0..out_len {
                        let window = &x[t * d..t * d + span];
                        for j in 0..f {
                            let gv = g[t * f + j];
                            if gv != 0.0 {
                                axpy(&mut gw[j * span..(j + 1) * span], gv, window);
                            }
                        }
                    }
                });
                self.accumulate(grads, *input, |gx| {
                    for t in 0..out_len {
                        let window = &mut gx[t * d..t * d + span];
                        for j in 0..f {
                            let gv = g[t * f + j];
                            if gv != 0.0 {
                                axpy(window, gv, &w[j * span..(j + 1) * span]);
                            }
                        }
                    }
                });
            }
            Op::MaxPoolTime { input, argmax } => {
                let cols = argmax.len();
                self.accumulate(grads, *input, |gx| {
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * cols + c] += g[c];
                    }
                });
            }
            Op::Bilinear(x, m, yv) => {
                let s = g[0];
                let (xd, md, yd) = (self.value(*x).data(), self.value(*m).data(), self.value(*yv).data());
                let n = yd.len();
                self.accumulate(grads, *x, |gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += s * dot(&md[i * n..(i + 1) * n], yd);
                    }
                });
                self.accumulate(grads, *yv, |gy| {
                    for (i, &xi) in xd.iter().enumerate() {
                        axpy(gy, s * xi, &md[i * n..(i + 1) * n]);
                    }
                });
                self.accumulate(grads, *m, |gm| {
                    for (i, &xi) in xd.iter().enumerate() {
                        axpy(&mut gm[i * n..(i + 1) * n], s * xi, yd);
                    }
                });
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (dot(av, av).sqrt(), dot(bv, bv).sqrt());
                if na < COSINE_EPS || nb < COSINE_EPS {
                    return;
                }
                let c = y[0];
                let s = g[0];
                self.accumulate(grads, *a, |ga| {
                    for ((o, &ai), &bi) in ga.iter_mut().zip(av).zip(bv) {
                        *o += s * (bi / (na * nb) - c * ai / (na * na));
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &bi), &ai) in gb.iter_mut().zip(bv).zip(av) {
                        *o += s * (ai / (na * nb) - c * bi / (nb * nb));
                    }
                });
            }
            Op::EmbeddingLookup { table, ids } => {
                let d = self.shape(*table)[1];
                self.accumulate(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::SumRows(a) => {
                let cols = g.len();
                self.accumulate(grads, *a, |ga| {
                    for row in ga.chunks_mut(cols.max(1)) {
                        add_into(row, g);
                    }
                });
            }
            Op::Sum(a) => self.accumulate(grads, *a, |ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::NllLoss(p, target) => {
                let pt = self.value(*p).data()[*target];
                self.accumulate(grads, *p, |gp| gp[*target] -= g[0] / pt);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }

    /// Gradients for every parameter of `params`, zero-filled where a
    /// parameter was not bound or did not influence the loss.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Vec<Vec<f64>> {
        params
            .ids()
            .map(|id| {
                self.bound
                    .get(&(params.uid(), id))
                    .and_then(|&v| grads.get(v))
                    .map_or_else(|| vec![0.0; params.get(id).len()], <[f64]>::to_vec)
            })
            .collect()
    }
}

const COSINE_EPS: f64 = 1e-12;

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, &xi) in dst.iter_mut().zip(x) {
        *d += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> Tensor {
        Tensor::vector(values.to_vec())
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(v(&[0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let mut t = rand_tensor(&[4, 7], &mut rng);
        t.data_mut()[3] = 700.0;
        t.data_mut()[10] = -700.0;
        let x = g.constant(t);
        let y = g.softmax(x).unwrap();
        for r in 0..4 {
            let row = g.value(y).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0 || r == 1));
        }
    }

    #[test]
    fn bilinear_identity() {
        let mut g = Graph::new();
        let x = g.constant(v(&[1.0, 0.0]));
        let m = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let s = g.bilinear(x, m, x).unwrap();
        assert_eq!(g.value(s).item(), 1.0);
    }

    #[test]
    fn conv1d_hand_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, w, 2).unwrap();
        assert_eq!(g.shape(y), &[2, 1]);
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv1d_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[6, 3], &mut rng);
        let w = rand_tensor(&[4, 9], &mut rng);
        let a = 2.75;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let xs = g.scale(xv, a);
        let wv = g.constant(w);
        let y1 = g.conv1d(xv, wv, 3).unwrap();
        let y2 = g.conv1d(xs, wv, 3).unwrap();
        for (p, q) in g.value(y1).data().iter().zip(g.value(y2).data()) {
            assert_relative_eq!(a * p, *q, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        assert!(g.mul(a, g.len().checked_sub(1).map(Var).unwrap()).is_ok());
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(c, a).unwrap_err().to_string().contains("add"));
        let w = g.constant(Tensor::zeros(&[1, 5]));
        assert!(g.conv1d(a, w, 2).unwrap_err().to_string().contains("conv1d"));
        assert!(g.nll_loss(c, 3).is_err());
    }

    #[test]
    fn backward_identity_and_relu_gate() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let grads = g.backward(x).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);

        let mut g = Graph::new();
        let x = g.input(v(&[-1.0, 2.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_skips_constants() {
        let mut g = Graph::new();
        let x = g.input(v(&[1.0, 2.0]));
        assert!(g.backward(x).is_err());

        let c = g.constant(v(&[5.0, 6.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[5.0, 6.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn shared_use_accumulates() {
        let mut g = Graph::new();
        let x = g.input(v(&[3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn param_binding_is_cached() {
        let mut params = ParamSet::new();
        let w = params.add("w", v(&[2.0]));
        let mut g = Graph::new();
        let a = g.param(&params, w);
        let b = g.param(&params, w);
        assert_eq!(a, b);
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(g.param_grads(&grads, &params), vec![vec![4.0]]);
    }

    // Each primitive's backward rule against central differences.

    fn check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: Tensor) {
        let err = gradient_check(f, &x, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradcheck_matmul_all_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = rand_tensor(&[3, 4], &mut rng);
        let bb = b.clone();
        check(
            move |g, x| {
                let w = g.constant(bb.clone());
                let y = g.matmul(x, w)?;
                let t = g.tanh(y);
                Ok(g.sum(t))
            },
            rand_tensor(&[2, 3], &mut rng),
        );
        let bb = b.clone();
        check(
            move |g, x| {
                let w = g.constant(bb.clone());
                let y = g.matmul(x, w)?;
                let t = g.tanh(y);
                Ok(g.sum(t))
            },
            rand_tensor(&[3], &mut rng),
        );
        let col = rand_tensor(&[4], &mut rng);
        check(
            move |g, w| {
                let c = g.constant(col.clone());
                let y = g.matmul(w, c)?;
                let t = g.sigmoid(y);
                Ok(g.sum(t))
            },
            b,
        );
    }

    #[test]
    fn gradcheck_elementwise_and_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let other = rand_tensor(&[2, 3], &mut rng);
        let bias = rand_tensor(&[3], &mut rng);
        check(
            move |g, x| {
                let o = g.constant(other.clone());
                let b = g.constant(bias.clone());
                let s = g.add(x, o)?;
                let s = g.add(s, b)?;
                let m = g.mul(s, x)?;
                let m = g.scale(m, 0.7);
                let r0 = g.row(m, 0)?;
                let r1 = g.row(m, 1)?;
                let sl = g.slice(r1, 1, 2)?;
                let cat = g.concat(&[r0, sl])?;
                let st = g.stack_rows(&[cat, cat])?;
                let sr = g.sum_rows(st)?;
                let t = g.tanh(sr);
                Ok(g.sum(t))
            },
            rand_tensor(&[2, 3], &mut rng),
        );
    }

    #[test]
    fn gradcheck_broadcast_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = rand_tensor(&[4, 3], &mut rng);
        check(
            move |g, b| {
                let mm = g.constant(m.clone());
                let s = g.add(mm, b)?;
                let t = g.sigmoid(s);
                Ok(g.sum(t))
            },
            rand_tensor(&[3], &mut rng),
        );
    }

    #[test]
    fn gradcheck_softmax_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        check(
            |g, x| {
                let p = g.softmax(x)?;
                g.nll_loss(p, 2)
            },
            rand_tensor(&[4], &mut rng),
        );
        let weights = rand_tensor(&[3, 5], &mut rng);
        check(
            move |g, x| {
                let p = g.softmax(x)?;
                let w = g.constant(weights.clone());
                let m = g.mul(p, w)?;
                Ok(g.sum(m))
            },
            rand_tensor(&[3, 5], &mut rng),
        );
    }

    #[test]
    fn gradcheck_relu_away_from_kinks() {
        let x = v(&[-0.7, 0.4, 1.3, -2.0, 0.9]);
        check(
            |g, x| {
                let r = g.relu(x);
                let sq = g.mul(r, r)?;
                Ok(g.sum(sq))
            },
            x,
        );
    }

    #[test]
    fn gradcheck_conv_and_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let filters = rand_tensor(&[3, 6], &mut rng);
        let fc = filters.clone();
        let input = rand_tensor(&[5, 2], &mut rng);
        check(
            move |g, x| {
                let w = g.constant(fc.clone());
                let c = g.conv1d(x, w, 3)?;
                let t = g.tanh(c);
                let p = g.maxpool_over_time(t)?;
                let sq = g.mul(p, p)?;
                Ok(g.sum(sq))
            },
            input.clone(),
        );
        check(
            move |g, w| {
                let x = g.constant(input.clone());
                let c = g.conv1d(x, w, 3)?;
                let t = g.tanh(c);
                let p = g.maxpool_over_time(t)?;
                let sq = g.mul(p, p)?;
                Ok(g.sum(sq))
            },
            filters,
        );
    }

    #[test]
    fn gradcheck_bilinear_all_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let m = rand_tensor(&[3, 2], &mut rng);
        let y = rand_tensor(&[2], &mut rng);
        let x = rand_tensor(&[3], &mut rng);
        let (m1, y1) = (m.clone(), y.clone());
        check(
            move |g, x| {
                let mv = g.constant(m1.clone());
                let yv = g.constant(y1.clone());
                let s = g.bilinear(x, mv, yv)?;
                Ok(g.tanh(s))
            },
            x.clone(),
        );
        let (x2, y2) = (x.clone(), y.clone());
        check(
            move |g, mv| {
                let xv = g.constant(x2.clone());
                let yv = g.constant(y2.clone());
                let s = g.bilinear(xv, mv, yv)?;
                Ok(g.tanh(s))
            },
            m.clone(),
        );
        check(
            move |g, yv| {
                let xv = g.constant(x.clone());
                let mv = g.constant(m.clone());
                let s = g.bilinear(xv, mv, yv)?;
                Ok(g.tanh(s))
            },
            y,
        );
    }

    #[test]
    fn gradcheck_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let other = rand_tensor(&[5], &mut rng);
        check(
            move |g, a| {
                let b = g.constant(other.clone());
                g.cosine(a, b)
            },
            rand_tensor(&[5], &mut rng),
        );
        check(
            |g, a| {
                let b = g.tanh(a);
                g.cosine(a, b)
            },
            rand_tensor(&[4], &mut rng),
        );
    }

    #[test]
    fn gradcheck_embedding_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        check(
            |g, table| {
                let e = g.embedding_lookup(table, &[2, 0, 2, 3])?;
                let s = g.sum_rows(e)?;
                let t = g.tanh(s);
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            },
            rand_tensor(&[4, 3], &mut rng),
        );
    }

    #[test]
    fn cosine_identical_is_one() {
        let mut g = Graph::new();
        let a = g.constant(v(&[0.3, -1.2, 2.0]));
        let c = g.cosine(a, a).unwrap();
        assert_relative_eq!(g.value(c).item(), 1.0, epsilon = 1e-12);
        let z = g.constant(v(&[0.0, 0.0, 0.0]));
        let c = g.cosine(a, z).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
    }
}
