//! Define-by-run tape. Every operation appends a node; node indices are a
//! topological order, so backward is a single reverse sweep.

use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    ScaleVar { a: usize, s: usize },
    Act { a: usize, kind: Activation },
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    Gather { table: usize, ids: Vec<usize> },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum { a: usize },
    RepeatRows { a: usize, times: usize },
    WeightedRowSum { w: usize, z: usize },
    InterleaveRows { parts: Vec<usize> },
    Reshape { a: usize },
}

/// Reverse-mode tape over [`Tensor`] values.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    req: Vec<bool>,
    leaf_param: Vec<Option<ParamId>>,
    param_vars: Vec<Option<Var>>,
    no_grad: bool,
}

fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> NumError {
    NumError::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `c = a · b (+ c when accumulate)`, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    // Packing dominates for skinny or tiny products.
    if m.min(n) <= 4 || m * n * k <= 32_768 {
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            if !accumulate {
                row.fill(0.0);
            }
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                if csb == 1 {
                    let brow = &b[p * rsb..p * rsb + n];
                    for (cj, bj) in row.iter_mut().zip(brow) {
                        *cj += aip * bj;
                    }
                } else {
                    for (j, cj) in row.iter_mut().enumerate() {
                        *cj += aip * b[p * rsb + j * csb];
                    }
                }
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover every index reachable through the given
    // extents and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    req: &[bool],
    i: usize,
    n: usize,
) -> Option<&'a mut Vec<f64>> {
    if !req[i] {
        return None;
    }
    Some(grads[i].get_or_insert_with(|| vec![0.0; n]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records values only; backward is unavailable.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, req: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.req.push(req && !self.no_grad);
        self.leaf_param.push(None);
        Var(self.values.len() - 1)
    }

    fn any_req(&self, ins: &[usize]) -> bool {
        ins.iter().any(|&i| self.req[i])
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id return
    /// the same node, so every use of a parameter shares one gradient slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.index()) {
            return *v;
        }
        let v = self.leaf(store.value(id).clone(), !store.is_frozen(id));
        self.leaf_param[v.0] = Some(id);
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// The node bound to `id`, if the parameter was used on this graph.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_vars.get(id.index()).copied().flatten()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.req[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = if trans_b {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if k != kb || tb.shape().len() > 2 {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
        gemm(m, k, n, ta.data(), k, 1, tb.data(), rsb, csb, &mut out, false);
        let req = self.any_req(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
            },
            req,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(dim_err("add", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.any_req(&[a.0, b.0]);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, req))
    }

    /// Adds `bias` (length = columns of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[bias.0]);
        let c = ta.cols();
        if tb.len() != c {
            return Err(dim_err("add_row", ta.shape(), tb.shape()));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.any_req(&[a.0, bias.0]);
        Ok(self.push(t, Op::AddRow { a: a.0, bias: bias.0 }, req))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        if ta.shape() != tb.shape() {
            return Err(dim_err("mul", ta.shape(), tb.shape()));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.any_req(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = &self.values[a.0];
        let out: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let req = self.req[a.0];
        self.push(t, Op::Scale { a: a.0, c }, req)
    }

    /// Multiplies `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (&self.values[a.0], &self.values[s.0]);
        if ts.len() != 1 {
            return Err(dim_err("scale_by", ta.shape(), ts.shape()));
        }
        let k = ts.item();
        let out: Vec<f64> = ta.data().iter().map(|x| x * k).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.any_req(&[a.0, s.0]);
        Ok(self.push(t, Op::ScaleVar { a: a.0, s: s.0 }, req))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let ta = &self.values[a.0];
        if !ta.is_finite() {
            return Err(NumError::NumericDomain("activation input"));
        }
        let out: Vec<f64> = match kind {
            Activation::Tanh => ta.data().iter().map(|&x| tanh(x)).collect(),
            Activation::Sigmoid => ta.data().iter().map(|&x| sigmoid(x)).collect(),
            Activation::Softmax => {
                let mut out = ta.data().to_vec();
                for row in out.chunks_mut(ta.cols()) {
                    softmax_in_place(row);
                }
                out
            }
        };
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let req = self.req[a.0];
        Ok(self.push(t, Op::Act { a: a.0, kind }, req))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Softmax)
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let ta = &self.values[a.0];
        let c = ta.cols();
        if width == 0 || start + width > c {
            return Err(dim_err("slice_cols", ta.shape(), &[start, width]));
        }
        let r = ta.rows();
        let mut out = Vec::with_capacity(r * width);
        for row in ta.data().chunks(c) {
            out.extend_from_slice(&row[start..start + width]);
        }
        let t = Tensor::new(vec![r, width], out)?;
        let req = self.req[a.0];
        Ok(self.push(t, Op::SliceCols { a: a.0, start }, req))
    }

    /// Rows `start..start + count` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let ta = &self.values[a.0];
        let c = ta.cols();
        if count == 0 || start + count > ta.rows() {
            return Err(dim_err("slice_rows", ta.shape(), &[start, count]));
        }
        let out = ta.data()[start * c..(start + count) * c].to_vec();
        let t = Tensor::new(vec![count, c], out)?;
        let req = self.req[a.0];
        Ok(self.push(t, Op::SliceRows { a: a.0, start }, req))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.values[parts[0].0].rows();
        let mut total = 0;
        for p in parts {
            let tp = &self.values[p.0];
            if tp.rows() != r {
                return Err(dim_err(
                    "concat_cols",
                    self.values[parts[0].0].shape(),
                    tp.shape(),
                ));
            }
            total += tp.cols();
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(self.values[p.0].row(i));
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_req(&idx);
        let t = Tensor::new(vec![r, total], out)?;
        Ok(self.push(t, Op::ConcatCols { parts: idx }, req))
    }

    /// Embedding lookup: row `i` of the output is row `ids[i]` of `table`.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = &self.values[table.0];
        let (v, d) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(NumError::Contract("lookup with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumError::Vocabulary { id, size: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let req = self.req[table.0];
        Ok(self.push(
            t,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            req,
        ))
    }

    /// `Σ_t w_t · (−log softmax(logits_t)[targets_t])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let tl = &self.values[logits.0];
        let (t_len, v) = (tl.rows(), tl.cols());
        if targets.len() != t_len || weights.len() != t_len {
            return Err(dim_err(
                "cross_entropy",
                tl.shape(),
                &[targets.len(), weights.len()],
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(NumError::Contract(format!(
                "token weight must be finite and non-negative, got {w}"
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (t, row) in probs.chunks_mut(v).enumerate() {
            let y = targets[t];
            if y >= v {
                return Err(NumError::Vocabulary { id: y, size: v });
            }
            let logsum = log_sum_exp(row);
            let lp = row[y] - logsum;
            if weights[t] != 0.0 {
                loss -= weights[t] * lp;
            }
            for x in row.iter_mut() {
                *x = (*x - logsum).exp();
            }
        }
        if !loss.is_finite() {
            return Err(NumError::NumericDomain("cross_entropy"));
        }
        let req = self.req[logits.0];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs: if req { probs } else { Vec::new() },
            },
            req,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        let req = self.req[a.0];
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, req)
    }

    /// Sum of several same-shape terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Repeats each row `times` times: output row `b·times + t` is row `b`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let ta = &self.values[a.0];
        let c = ta.cols();
        let mut out = Vec::with_capacity(ta.len() * times);
        for row in ta.data().chunks(c) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let t = Tensor::new(vec![ta.rows() * times, c], out).expect("positive extents");
        let req = self.req[a.0];
        self.push(t, Op::RepeatRows { a: a.0, times }, req)
    }

    /// Batched weighted sum: `w` is `B×T`, `z` is `(B·T)×D` grouped by batch
    /// row; output row `b` is `Σ_t w[b,t] · z[b·T+t]`.
    pub fn weighted_row_sum(&mut self, w: Var, z: Var) -> Result<Var> {
        let (tw, tz) = (&self.values[w.0], &self.values[z.0]);
        let (b, t) = (tw.rows(), tw.cols());
        if tz.rows() != b * t {
            return Err(dim_err("weighted_row_sum", tw.shape(), tz.shape()));
        }
        let d = tz.cols();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let wv = tw.data()[bi * t + ti];
                for (x, zv) in o.iter_mut().zip(tz.row(bi * t + ti)) {
                    *x += wv * zv;
                }
            }
        }
        let tt = Tensor::new(vec![b, d], out)?;
        let req = self.any_req(&[w.0, z.0]);
        Ok(self.push(tt, Op::WeightedRowSum { w: w.0, z: z.0 }, req))
    }

    /// Stacks `T` matrices of shape `B×D` into `(B·T)×D` with row `b·T+t`
    /// taken from `parts[t]` row `b`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = &self.values[parts[0].0];
        let (b, d) = (first.rows(), first.cols());
        for p in parts {
            let tp = &self.values[p.0];
            if tp.rows() != b || tp.cols() != d {
                return Err(dim_err("interleave_rows", first.shape(), tp.shape()));
            }
        }
        let t = parts.len();
        let mut out = vec![0.0; b * t * d];
        for (ti, p) in parts.iter().enumerate() {
            let tp = &self.values[p.0];
            for bi in 0..b {
                let r = bi * t + ti;
                out[r * d..(r + 1) * d].copy_from_slice(tp.row(bi));
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.any_req(&idx);
        let tt = Tensor::new(vec![b * t, d], out)?;
        Ok(self.push(tt, Op::InterleaveRows { parts: idx }, req))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.values[a.0].clone().reshape(shape)?;
        let req = self.req[a.0];
        Ok(self.push(t, Op::Reshape { a: a.0 }, req))
    }

    /// Clears gradients held by leaves (intermediate gradients are rebuilt on
    /// every backward pass).
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Reverse sweep from a single-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.no_grad {
            return Err(NumError::Contract("backward on an inference graph".into()));
        }
        if self.values[loss.0].len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        for (g, op) in self.grads.iter_mut().zip(&self.ops) {
            if !matches!(op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.req[loss.0] {
            return Ok(());
        }
        match &mut self.grads[loss.0] {
            Some(g) => g[0] += 1.0,
            None => self.grads[loss.0] = Some(vec![1.0]),
        }
        for i in (0..=loss.0).rev() {
            if !self.req[i] || matches!(self.ops[i], Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Backward, then add parameter-leaf gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        for (v, p) in self.leaf_param.iter().enumerate() {
            if p.is_some() {
                self.grads[v] = None;
            }
        }
        self.backward(loss)?;
        for (v, p) in self.leaf_param.iter().enumerate() {
            if let (Some(id), Some(g)) = (p, &self.grads[v]) {
                for (s, x) in store.grad_mut(*id).iter_mut().zip(g) {
                    *s += x;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let values = &self.values;
        let grads = &mut self.grads;
        let req = &self.req;
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (&values[*a], &values[*b]);
                let (m, k) = (ta.rows(), ta.cols());
                let n = values[i].cols();
                if let Some(ga) = acc(grads, req, *a, ta.len()) {
                    // da = g · bᵀ  (or g · b when b is stored transposed)
                    let (rsb, csb) = if *trans_b { (k, 1) } else { (1, n) };
                    gemm(m, n, k, g, n, 1, tb.data(), rsb, csb, ga, true);
                }
                if let Some(gb) = acc(grads, req, *b, tb.len()) {
                    if *trans_b {
                        // db = gᵀ · a, shape n×k
                        gemm(n, m, k, g, 1, n, ta.data(), k, 1, gb, true);
                    } else {
                        // db = aᵀ · g, shape k×n
                        gemm(k, m, n, ta.data(), 1, k, g, n, 1, gb, true);
                    }
                }
            }
            Op::Add { a, b } => {
                for idx in [*a, *b] {
                    if let Some(ga) = acc(grads, req, idx, g.len()) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow { a, bias } => {
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                let c = values[*bias].len();
                if let Some(gb) = acc(grads, req, *bias, c) {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (values[*a].data(), values[*b].data());
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    for ((x, gv), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gv * bv;
                    }
                }
                if let Some(gb) = acc(grads, req, *b, g.len()) {
                    for ((x, gv), av) in gb.iter_mut().zip(g).zip(va) {
                        *x += gv * av;
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                }
            }
            Op::ScaleVar { a, s } => {
                let k = values[*s].item();
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += k * y);
                }
                let va = values[*a].data();
                if let Some(gs) = acc(grads, req, *s, 1) {
                    gs[0] += g.iter().zip(va).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            Op::Act { a, kind } => {
                let y = values[i].data();
                let c = values[i].cols();
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    match kind {
                        Activation::Tanh => {
                            for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                                *x += gv * (1.0 - yv * yv);
                            }
                        }
                        Activation::Sigmoid => {
                            for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                                *x += gv * yv * (1.0 - yv);
                            }
                        }
                        Activation::Softmax => {
                            for ((xr, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                                let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                                for ((x, gv), yv) in xr.iter_mut().zip(gr).zip(yr) {
                                    *x += yv * (gv - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let c = values[*a].cols();
                let w = values[i].cols();
                if let Some(ga) = acc(grads, req, *a, values[*a].len()) {
                    for (row, gr) in ga.chunks_mut(c).zip(g.chunks(w)) {
                        row[*start..start + w]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let c = values[*a].cols();
                if let Some(ga) = acc(grads, req, *a, values[*a].len()) {
                    ga[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                }
            }
            Op::ConcatCols { parts } => {
                let total = values[i].cols();
                let mut off = 0;
                for &p in parts {
                    let w = values[p].cols();
                    if let Some(gp) = acc(grads, req, p, values[p].len()) {
                        for (row, gr) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            row.iter_mut()
                                .zip(&gr[off..off + w])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    off += w;
                }
            }
            Op::Gather { table, ids } => {
                let d = values[*table].cols();
                if let Some(gt) = acc(grads, req, *table, values[*table].len()) {
                    for (&id, gr) in ids.iter().zip(g.chunks(d)) {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let v = values[*logits].cols();
                if let Some(gl) = acc(grads, req, *logits, probs.len()) {
                    for (t, (row, pr)) in gl.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                        let w = weights[t] * g[0];
                        if w == 0.0 {
                            continue;
                        }
                        for (x, p) in row.iter_mut().zip(pr) {
                            *x += w * p;
                        }
                        row[targets[t]] -= w;
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = acc(grads, req, *a, values[*a].len()) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::RepeatRows { a, times } => {
                let c = values[*a].cols();
                if let Some(ga) = acc(grads, req, *a, values[*a].len()) {
                    for (b, row) in ga.chunks_mut(c).enumerate() {
                        for t in 0..*times {
                            let r = b * times + t;
                            row.iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::WeightedRowSum { w, z } => {
                let (tw, tz) = (&values[*w], &values[*z]);
                let (b, t) = (tw.rows(), tw.cols());
                let d = tz.cols();
                if let Some(gw) = acc(grads, req, *w, tw.len()) {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            gw[bi * t + ti] +=
                                gr.iter().zip(tz.row(bi * t + ti)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gz) = acc(grads, req, *z, tz.len()) {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let wv = tw.data()[bi * t + ti];
                            let r = bi * t + ti;
                            gz[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(x, y)| *x += wv * y);
                        }
                    }
                }
            }
            Op::InterleaveRows { parts } => {
                let t = parts.len();
                let d = values[i].cols();
                for (ti, &p) in parts.iter().enumerate() {
                    let b = values[p].rows();
                    if let Some(gp) = acc(grads, req, p, values[p].len()) {
                        for bi in 0..b {
                            let r = bi * t + ti;
                            gp[bi * d..(bi + 1) * d]
                                .iter_mut()
                                .zip(&g[r * d..(r + 1) * d])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = acc(grads, req, *a, g.len()) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
}

/// `tanh` through one `exp`; several times faster than the libm routine.
pub fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

/// Log-probabilities of one row of logits.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(row);
    row.iter().map(|x| x - l).collect()
}
