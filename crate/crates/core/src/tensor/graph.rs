use alloc::vec;
use alloc::vec::Vec;

use super::{dims, ParamId, ParamStore, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    MeanRows(Var),
    Rows(Var, usize),
    Cols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Cosine(Var, Var),
    Sum(Var),
    Dot(Var, Var),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradient buffers filled by [`Graph::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    fn buf(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        if self.bufs.len() <= id.0 {
            self.bufs.resize(id.0 + 1, None);
        }
        self.bufs[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.bufs.get(id.0).and_then(|b| b.as_deref())
    }

    /// Parameters that received a gradient contribution.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.bufs
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_deref().map(|b| (ParamId(i), b)))
    }

    pub fn clear(&mut self) {
        for b in self.bufs.iter_mut().flatten() {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in self.bufs.iter_mut().flatten() {
            b.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.bufs.iter().flatten().flat_map(|b| b.iter()).map(|x| x * x).sum();
        libm::sqrt(sq)
    }
}

/// A forward computation recorded for reverse-mode differentiation.
///
/// Parameter leaves borrow their values from a [`ParamStore`]; backward
/// writes parameter gradients into a separate [`Gradients`].
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
    c
}

/// a[m,k] · b[n,k]ᵀ
fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            c[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// a[k,m]ᵀ · b[k,n]
fn matmul_tn_raw(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += av * bj;
            }
        }
    }
    c
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Graph<'p> {
    /// Graph whose parameter leaves read from `params`.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    /// Graph without parameters; only constants can be leaves.
    pub fn detached() -> Graph<'static> {
        Graph {
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => &self.params.expect("param node without store").get(*id).data,
        }
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    /// Leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `a @ b`. A 1-D `a` is treated as a single row and yields a 1-D result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() != 2 || sa.is_empty() || sa.len() > 2 {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k) = dims(sa);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(mismatch("matmul", sa, sb));
        }
        let shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        let data = matmul_raw(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::MatMul(a, b), ng))
    }

    /// `a @ bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let data = matmul_nt_raw(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], data, Op::MatMulNT(a, b), ng))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: &'static str, sign: f64) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        let data: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + sign * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        let node = if sign > 0.0 { Op::Add(a, b) } else { Op::Sub(a, b) };
        Ok(self.push(shape, data, node, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(a, b, "add", 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise(a, b, "sub", -1.0)
    }

    /// `x[m,n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, n) = dims(self.shape(x));
        if self.shape(bias) != [n] {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let data: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(shape, data, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(shape, data, Op::Scale(x, c), ng)
    }

    /// Elementwise product with a constant of the same size (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var, TensorError> {
        if c.len() != self.value(x).len() {
            return Err(mismatch("mul_const", self.shape(x), &[c.len()]));
        }
        let data = self.value(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape, data, Op::MulConst(x, c), ng))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(shape, data, Op::Gelu(x), ng)
    }

    /// Row-wise softmax. Columns with `valid[j] == false` get exactly zero
    /// weight; a row with no valid column is all zeros.
    pub fn softmax_rows(&mut self, x: Var, valid: Option<&[bool]>) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if let Some(v) = valid {
            if v.len() != n {
                return Err(mismatch("softmax_rows", self.shape(x), &[v.len()]));
            }
        }
        let xs = self.value(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let ok = |j: usize| valid.is_none_or(|v| v[j]);
            let max = (0..n).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in (0..n).filter(|&j| ok(j)) {
                let e = libm::exp(row[j] - max);
                out[i * n + j] = e;
                sum += e;
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= sum;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::Softmax(x), ng))
    }

    /// Row-wise layer normalization followed by `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / libm::sqrt(var + eps);
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(shape, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng))
    }

    /// Mean over rows: `[m,n] -> [n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if m == 0 {
            return Err(TensorError::Empty { op: "mean_rows" });
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let ng = self.needs(x);
        Ok(self.push(vec![n], out, Op::MeanRows(x), ng))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if self.shape(x).len() != 2 || start > end || end > m {
            return Err(TensorError::OutOfRange { op: "rows", index: end, bound: m });
        }
        let data = self.value(x)[start * n..end * n].to_vec();
        let ng = self.needs(x);
        Ok(self.push(vec![end - start, n], data, Op::Rows(x, start), ng))
    }

    /// Row `i` as a 1-D tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if self.shape(x).len() != 2 || i >= m {
            return Err(TensorError::OutOfRange { op: "row", index: i, bound: m });
        }
        let data = self.value(x)[i * n..(i + 1) * n].to_vec();
        let ng = self.needs(x);
        Ok(self.push(vec![n], data, Op::Rows(x, i), ng))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (m, n) = dims(self.shape(x));
        if self.shape(x).len() != 2 || start > end || end > n {
            return Err(TensorError::OutOfRange { op: "cols", index: end, bound: n });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in self.value(x).chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let ng = self.needs(x);
        Ok(self.push(vec![m, w], data, Op::Cols(x, start), ng))
    }

    /// Stacks parts along rows. 1-D parts count as one row.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_rows" })?;
        let (_, n) = dims(self.shape(first));
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, pn) = dims(self.shape(p));
            if pn != n || self.shape(p).len() > 2 || self.shape(p).is_empty() {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += m;
            data.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, n], data, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Joins 2-D parts with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let m = self.shape(first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return Err(mismatch("concat_cols", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..m {
                data[i * n + off..i * n + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![m, n], data, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Row lookup `table[ids[i]]` (embedding).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(mismatch("gather_rows", s, &[]));
        }
        let (v, n) = (s[0], s[1]);
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v {
                return Err(TensorError::OutOfRange { op: "gather_rows", index: id, bound: v });
            }
            data.extend_from_slice(&t[id * n..(id + 1) * n]);
        }
        let ng = self.needs(table);
        Ok(self.push(vec![ids.len(), n], data, Op::Gather(table, ids.to_vec()), ng))
    }

    /// Two-or-more-class cross-entropy of raw logits against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let s = self.shape(logits);
        if s.len() != 1 || s[0] == 0 {
            return Err(mismatch("cross_entropy", s, &[]));
        }
        if label >= s[0] {
            return Err(TensorError::OutOfRange { op: "cross_entropy", index: label, bound: s[0] });
        }
        let z = self.value(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        let loss = lse - z[label];
        let probs = z.iter().map(|v| libm::exp(v - lse)).collect();
        let ng = self.needs(logits);
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy { logits, label, probs }, ng))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(mismatch("cosine", self.shape(a), self.shape(b)));
        }
        let c = super::cosine_similarity(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![], vec![c], Op::Cosine(a, b), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(vec![], vec![s], Op::Sum(x), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("dot", self.shape(a), self.shape(b)));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![], vec![s], Op::Dot(a, b), ng))
    }

    /// Backpropagates from scalar `loss`, adding parameter gradients into
    /// `grads`. Parameters with `requires_grad == false` are skipped.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut g: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, gi, &mut g, grads);
        }
        Ok(())
    }

    /// Fresh gradients for `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let mut grads = Gradients::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    fn acc(&self, g: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut g[v.0] {
            Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Accumulates into a slice of `v`'s gradient without materializing the rest.
    fn acc_with(&self, g: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let len = self.value(v).len();
        let buf = g[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }

    fn backward_node(&self, node: &Node, gi: Vec<f64>, g: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        match &node.op {
            Op::Leaf => {
                if let Value::Param(id) = node.value {
                    let buf = grads.buf(id, gi.len());
                    buf.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.shape(*a));
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    self.acc(g, *a, matmul_nt_raw(&gi, self.value(*b), m, n, k));
                }
                if self.needs(*b) {
                    self.acc(g, *b, matmul_tn_raw(self.value(*a), &gi, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = dims(self.shape(*a));
                let n = self.shape(*b)[0];
                if self.needs(*a) {
                    self.acc(g, *a, matmul_raw(&gi, self.value(*b), m, n, k));
                }
                if self.needs(*b) {
                    self.acc(g, *b, matmul_tn_raw(&gi, self.value(*a), m, n, k));
                }
            }
            Op::Add(a, b) => {
                self.acc(g, *a, gi.clone());
                self.acc(g, *b, gi);
            }
            Op::Sub(a, b) => {
                self.acc(g, *b, gi.iter().map(|v| -v).collect());
                self.acc(g, *a, gi);
            }
            Op::AddBias(x, bias) => {
                let n = self.shape(*bias)[0];
                if self.needs(*bias) {
                    let mut gb = vec![0.0; n];
                    for row in gi.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    self.acc(g, *bias, gb);
                }
                self.acc(g, *x, gi);
            }
            Op::Scale(x, c) => self.acc(g, *x, gi.iter().map(|v| v * c).collect()),
            Op::MulConst(x, c) => self.acc(g, *x, gi.iter().zip(c).map(|(a, b)| a * b).collect()),
            Op::Gelu(x) => {
                let xs = self.value(*x);
                self.acc(g, *x, gi.iter().zip(xs).map(|(d, &v)| d * gelu_grad(v)).collect());
            }
            Op::Softmax(x) => {
                let (_, n) = dims(&node.shape);
                let y = self.node_value(node);
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gi.chunks(n)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (gr[j] - s);
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (m, n) = dims(&node.shape);
                let gam = self.value(*gamma);
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![0.0; n];
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += gi[i * n + j] * xhat[i * n + j];
                            gb[j] += gi[i * n + j];
                        }
                    }
                    self.acc(g, *gamma, gg);
                    self.acc(g, *beta, gb);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..n {
                            let dh = gi[i * n + j] * gam[j];
                            s1 += dh;
                            s2 += dh * xhat[i * n + j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dh = gi[i * n + j] * gam[j];
                            dx[i * n + j] = rstd[i] / nf * (nf * dh - s1 - xhat[i * n + j] * s2);
                        }
                    }
                    self.acc(g, *x, dx);
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = dims(self.shape(*x));
                let inv = 1.0 / m as f64;
                self.acc_with(g, *x, |buf| {
                    for row in buf.chunks_mut(n) {
                        row.iter_mut().zip(&gi).for_each(|(a, b)| *a += b * inv);
                    }
                });
            }
            Op::Rows(x, start) => {
                let (_, n) = dims(self.shape(*x));
                let off = start * n;
                self.acc_with(g, *x, |buf| {
                    buf[off..off + gi.len()].iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
                });
            }
            Op::Cols(x, start) => {
                let (_, n) = dims(self.shape(*x));
                let w = node.shape[1];
                self.acc_with(g, *x, |buf| {
                    for (row, grow) in buf.chunks_mut(n).zip(gi.chunks(w)) {
                        row[*start..start + w].iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(g, p, gi[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.shape[1];
                let mut off = 0;
                for &p in parts {
                    let (m, w) = (self.shape(p)[0], self.shape(p)[1]);
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&gi[i * n + off..i * n + off + w]);
                        }
                        self.acc(g, p, gp);
                    }
                    off += w;
                }
            }
            Op::Gather(table, ids) => {
                let n = self.shape(*table)[1];
                let scatter = |buf: &mut [f64]| {
                    for (r, &id) in ids.iter().enumerate() {
                        buf[id * n..(id + 1) * n]
                            .iter_mut()
                            .zip(&gi[r * n..(r + 1) * n])
                            .for_each(|(a, b)| *a += b);
                    }
                };
                match self.nodes[table.0].value {
                    // scatter straight into the parameter buffer; tables are large
                    Value::Param(id) if matches!(self.nodes[table.0].op, Op::Leaf) => {
                        if self.needs(*table) {
                            let len = self.value(*table).len();
                            scatter(grads.buf(id, len));
                        }
                    }
                    _ => self.acc_with(g, *table, scatter),
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                let d = gi[0];
                let mut gz: Vec<f64> = probs.iter().map(|p| p * d).collect();
                gz[*label] -= d;
                self.acc(g, *logits, gz);
            }
            Op::Cosine(a, b) => {
                let d = gi[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                let na = libm::sqrt(av.iter().map(|x| x * x).sum::<f64>());
                let nb = libm::sqrt(bv.iter().map(|x| x * x).sum::<f64>());
                let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
                let c = dot / (na * nb);
                if self.needs(*a) {
                    let ga = av.iter().zip(bv).map(|(x, y)| d * (y / (na * nb) - c * x / (na * na))).collect();
                    self.acc(g, *a, ga);
                }
                if self.needs(*b) {
                    let gb = av.iter().zip(bv).map(|(x, y)| d * (x / (na * nb) - c * y / (nb * nb))).collect();
                    self.acc(g, *b, gb);
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                self.acc(g, *x, vec![gi[0]; len]);
            }
            Op::Dot(a, b) => {
                let d = gi[0];
                let ga = self.value(*b).iter().map(|v| v * d).collect();
                let gb = self.value(*a).iter().map(|v| v * d).collect();
                self.acc(g, *a, ga);
                self.acc(g, *b, gb);
            }
        }
    }

    fn node_value<'a>(&'a self, node: &'a Node) -> &'a [f64] {
        match &node.value {
            Value::Owned(d) => d,
            Value::Param(id) => &self.params.expect("param store").get(*id).data,
        }
    }
}
