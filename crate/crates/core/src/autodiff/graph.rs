use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::Float;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Param(ParamId),
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddTiled(Var, Var),
    Mul(Var, Var),
    Select { new: Var, old: Var, keep_new: Vec<bool> },
    Sigmoid(Var),
    Tanh(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    TimeToCols { a: Var, batch: usize },
    MaskedSoftmax { a: Var, mask: Vec<bool> },
    WeightedSumTime { w: Var, keys: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<Float>, probs: Tensor },
    SumAll(Var),
    Scale(Var, Float),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input => "input",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::AddTiled(..) => "add_tiled",
            Op::Mul(..) => "mul",
            Op::Select { .. } => "select",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Gather { .. } => "gather",
            Op::TimeToCols { .. } => "time_to_cols",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::WeightedSumTime { .. } => "weighted_sum_time",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumAll(_) => "sum_all",
            Op::Scale(..) => "scale",
        }
    }
}

struct Node {
    op: Op,
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a node (inputs included); `None` if the
    /// loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }
}

/// A single-threaded computation tape over a borrowed parameter store.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    nonfinite: Option<String>,
}

fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            nonfinite: None,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(format!("{} (node {})", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            (None, _) => unreachable!("only parameter leaves borrow their value"),
        }
    }

    /// Fails if any value computed so far is NaN or infinite.
    pub fn ensure_finite(&self) -> Result<()> {
        match &self.nonfinite {
            Some(what) => Err(Error::NonFinite(what.clone())),
            None => Ok(()),
        }
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        if self.nonfinite.is_none() && !self.store.get(id).value.is_finite() {
            self.nonfinite = Some(format!("parameter {}", self.store.get(id).name));
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Constant or differentiable input leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = tensor::matmul(ta, tb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: fn(Float, Float) -> Float) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// `a[m,n] + bias[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), out))
    }

    /// `a[T*B,n] + b[B,n]`, adding row `i` of `b` to rows `t*B + i` of `a`.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() == 0 || ta.rows() % tb.rows() != 0 || ta.cols() != tb.cols() {
            return Err(Error::shape(
                "add_tiled",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        }
        let batch = tb.rows();
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(tb.row(r % batch)) {
                *o += x;
            }
        }
        Ok(self.push(Op::AddTiled(a, b), out))
    }

    /// Row-wise choice: row `i` comes from `new` when `keep_new[i]`, else from `old`.
    pub fn select_rows(&mut self, new: Var, old: Var, keep_new: Vec<bool>) -> Result<Var> {
        let (tn, to) = (self.value(new), self.value(old));
        if tn.shape() != to.shape() || keep_new.len() != tn.rows() {
            return Err(Error::shape(
                "select",
                format!("{:?} / {:?} with {} flags", tn.shape(), to.shape(), keep_new.len()),
            ));
        }
        let mut out = to.clone();
        for (r, &k) in keep_new.iter().enumerate() {
            if k {
                out.row_mut(r).copy_from_slice(tn.row(r));
            }
        }
        Ok(self.push(Op::Select { new, old, keep_new }, out))
    }

    fn map(&mut self, a: Var, f: fn(Float) -> Float) -> Tensor {
        let ta = self.value(a);
        Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| f(*x)).collect())
            .expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, Float::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn scale(&mut self, a: Var, factor: Float) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(
            ta.rows(),
            ta.cols(),
            ta.data().iter().map(|x| x * factor).collect(),
        )
        .expect("same shape");
        self.push(Op::Scale(a, factor), out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {:?}", start + len, ta.shape()),
            ));
        }
        let mut out = Tensor::zeros(ta.rows(), len);
        for r in 0..ta.rows() {
            out.row_mut(r).copy_from_slice(&ta.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols { a, start }, out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|p| self.value(*p).rows())
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let t = self.value(*p);
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
                off += t.cols();
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|p| self.value(*p).cols())
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let rows: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Rows `ids` of `table`, in order.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather",
                format!("row {bad} of table with {} rows", t.rows()),
            ));
        }
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// Reshapes a time-major column `[T*B, 1]` into batch-major `[B, T]`.
    pub fn time_to_cols(&mut self, a: Var, batch: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 || batch == 0 || t.rows() % batch != 0 {
            return Err(Error::shape(
                "time_to_cols",
                format!("{:?} with batch {batch}", t.shape()),
            ));
        }
        let steps = t.rows() / batch;
        let mut out = Tensor::zeros(batch, steps);
        for s in 0..steps {
            for b in 0..batch {
                out.set(b, s, t.data()[s * batch + b]);
            }
        }
        Ok(self.push(Op::TimeToCols { a, batch }, out))
    }

    /// Row-wise softmax over positions where `mask` is true; masked
    /// positions are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::shape(
                "masked_softmax",
                format!("mask of {} for {:?}", mask.len(), t.shape()),
            ));
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(t.rows(), cols);
        for r in 0..t.rows() {
            let m = &mask[r * cols..(r + 1) * cols];
            let row = t.row(r);
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(x, _)| *x)
                .fold(Float::NEG_INFINITY, Float::max);
            if max == Float::NEG_INFINITY {
                return Err(Error::AllMasked);
            }
            let orow = out.row_mut(r);
            let mut z = 0.0;
            for c in 0..cols {
                if m[c] {
                    orow[c] = (row[c] - max).exp();
                    z += orow[c];
                }
            }
            orow.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(
            Op::MaskedSoftmax {
                a,
                mask: mask.to_vec(),
            },
            out,
        ))
    }

    /// `out[i] = Σ_t w[i,t] · keys[t*B + i]` for `w[B,T]`, `keys[T*B,h]`.
    pub fn weighted_sum_time(&mut self, w: Var, keys: Var) -> Result<Var> {
        let (tw, tk) = (self.value(w), self.value(keys));
        let (batch, steps) = (tw.rows(), tw.cols());
        if tk.rows() != batch * steps {
            return Err(Error::shape(
                "weighted_sum_time",
                format!("weights {:?} with keys {:?}", tw.shape(), tk.shape()),
            ));
        }
        let mut out = Tensor::zeros(batch, tk.cols());
        for b in 0..batch {
            for s in 0..steps {
                let wv = tw.get(b, s);
                if wv != 0.0 {
                    for (o, k) in out.row_mut(b).iter_mut().zip(tk.row(s * batch + b)) {
                        *o += wv * k;
                    }
                }
            }
        }
        Ok(self.push(Op::WeightedSumTime { w, keys }, out))
    }

    /// `Σ_i weights[i] · (−log softmax(logits[i])[targets[i]])` as a `1 x 1` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[Float]) -> Result<Var> {
        let t = self.value(logits);
        if targets.len() != t.rows() || weights.len() != t.rows() {
            return Err(Error::shape(
                "cross_entropy",
                format!(
                    "{} targets / {} weights for {:?}",
                    targets.len(),
                    weights.len(),
                    t.shape()
                ),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&id| id >= t.cols()) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {bad} outside {} classes", t.cols()),
            ));
        }
        let mut probs = Tensor::zeros(t.rows(), t.cols());
        let mut loss = 0.0;
        for r in 0..t.rows() {
            let row = t.row(r);
            let max = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
            let prow = probs.row_mut(r);
            let mut z = 0.0;
            for (p, x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            prow.iter_mut().for_each(|p| *p /= z);
            if weights[r] != 0.0 {
                loss += weights[r] * (z.ln() + max - row[targets[r]]);
            }
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.ensure_finite()?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(_) | Op::Input => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    tensor::matmul_nt_acc(&dy, tb, self.slot(&mut grads, *a));
                    tensor::matmul_tn_acc(ta, &dy, self.slot(&mut grads, *b));
                }
                Op::Add(a, b) => {
                    self.slot(&mut grads, *a).add_assign(&dy);
                    self.slot(&mut grads, *b).add_assign(&dy);
                }
                Op::AddRow(a, bias) => {
                    self.slot(&mut grads, *a).add_assign(&dy);
                    let gb = self.slot(&mut grads, *bias);
                    for r in 0..dy.rows() {
                        for (g, d) in gb.data_mut().iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::AddTiled(a, b) => {
                    self.slot(&mut grads, *a).add_assign(&dy);
                    let gb = self.slot(&mut grads, *b);
                    let batch = gb.rows();
                    for r in 0..dy.rows() {
                        for (g, d) in gb.row_mut(r % batch).iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = self.slot(&mut grads, *a);
                    for ((g, d), y) in ga.data_mut().iter_mut().zip(dy.data()).zip(tb.data()) {
                        *g += d * y;
                    }
                    let gb = self.slot(&mut grads, *b);
                    for ((g, d), x) in gb.data_mut().iter_mut().zip(dy.data()).zip(ta.data()) {
                        *g += d * x;
                    }
                }
                Op::Select { new, old, keep_new } => {
                    let gn = self.slot(&mut grads, *new);
                    for (r, &k) in keep_new.iter().enumerate() {
                        if k {
                            for (g, d) in gn.row_mut(r).iter_mut().zip(dy.row(r)) {
                                *g += d;
                            }
                        }
                    }
                    let go = self.slot(&mut grads, *old);
                    for (r, &k) in keep_new.iter().enumerate() {
                        if !k {
                            for (g, d) in go.row_mut(r).iter_mut().zip(dy.row(r)) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("owned");
                    let ga = self.slot(&mut grads, *a);
                    for ((g, d), s) in ga.data_mut().iter_mut().zip(dy.data()).zip(y.data()) {
                        *g += d * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("owned");
                    let ga = self.slot(&mut grads, *a);
                    for ((g, d), t) in ga.data_mut().iter_mut().zip(dy.data()).zip(y.data()) {
                        *g += d * (1.0 - t * t);
                    }
                }
                Op::SliceCols { a, start } => {
                    let ga = self.slot(&mut grads, *a);
                    for r in 0..dy.rows() {
                        let dst = &mut ga.row_mut(r)[*start..*start + dy.cols()];
                        for (g, d) in dst.iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let gp = self.slot(&mut grads, *p);
                        let w = gp.cols();
                        for r in 0..dy.rows() {
                            for (g, d) in gp.row_mut(r).iter_mut().zip(&dy.row(r)[off..off + w]) {
                                *g += d;
                            }
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let gp = self.slot(&mut grads, *p);
                        let n = gp.len();
                        for (g, d) in gp.data_mut().iter_mut().zip(&dy.data()[off..off + n]) {
                            *g += d;
                        }
                        off += n;
                    }
                }
                Op::Gather { table, ids } => {
                    let gt = self.slot(&mut grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (g, d) in gt.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::TimeToCols { a, batch } => {
                    let ga = self.slot(&mut grads, *a);
                    let steps = dy.cols();
                    for s in 0..steps {
                        for b in 0..*batch {
                            ga.data_mut()[s * batch + b] += dy.get(b, s);
                        }
                    }
                }
                Op::MaskedSoftmax { a, mask } => {
                    let y = node.value.as_ref().expect("owned");
                    let ga = self.slot(&mut grads, *a);
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let inner: Float = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        let grow = ga.row_mut(r);
                        for c in 0..cols {
                            if mask[r * cols + c] {
                                grow[c] += yr[c] * (dr[c] - inner);
                            }
                        }
                    }
                }
                Op::WeightedSumTime { w, keys } => {
                    let (tw, tk) = (self.value(*w), self.value(*keys));
                    let batch = tw.rows();
                    {
                        let gw = self.slot(&mut grads, *w);
                        for b in 0..batch {
                            for s in 0..tw.cols() {
                                gw.data_mut()[b * tw.cols() + s] +=
                                    tensor::dot(dy.row(b), tk.row(s * batch + b));
                            }
                        }
                    }
                    let gk = self.slot(&mut grads, *keys);
                    for b in 0..batch {
                        for s in 0..tw.cols() {
                            let wv = tw.get(b, s);
                            for (g, d) in gk.row_mut(s * batch + b).iter_mut().zip(dy.row(b)) {
                                *g += wv * d;
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let scale = dy.item();
                    let gl = self.slot(&mut grads, *logits);
                    for r in 0..probs.rows() {
                        let w = weights[r] * scale;
                        if w == 0.0 {
                            continue;
                        }
                        for (g, p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                            *g += w * p;
                        }
                        gl.row_mut(r)[targets[r]] -= w;
                    }
                }
                Op::SumAll(a) => {
                    let d = dy.item();
                    self.slot(&mut grads, *a)
                        .data_mut()
                        .iter_mut()
                        .for_each(|g| *g += d);
                }
                Op::Scale(a, factor) => {
                    let ga = self.slot(&mut grads, *a);
                    for (g, d) in ga.data_mut().iter_mut().zip(dy.data()) {
                        *g += factor * d;
                    }
                }
            }
        }

        let mut params: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(v) = node {
                if let Some(g) = grads[v.0].as_ref() {
                    if !g.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "gradient of {}",
                            self.store.get(ParamId(pid)).name
                        )));
                    }
                    params[pid] = Some(g.clone());
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let t = self.value(v);
        let (r, c) = (t.rows(), t.cols());
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_routes_rows() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::from_vec(2, 1, vec![1.0, 2.0]).unwrap());
        let b = g.input(Tensor::from_vec(2, 1, vec![10.0, 20.0]).unwrap());
        let s = g.select_rows(a, b, vec![true, false]).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 20.0]);
        let loss = g.sum_all(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn nonfinite_value_is_reported_by_name() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::scalar(1e308));
        let b = g.scale(a, 10.0);
        let err = g.backward(b).err().unwrap().to_string();
        assert!(err.contains("scale"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
        let c = g.input(Tensor::zeros(3, 2));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new(&store);
        let w1 = g.param(id);
        let w2 = g.param(id);
        assert_eq!(w1, w2);
        let y = g.mul(w1, w2).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param(id).unwrap().item(), 6.0);
    }

    #[test]
    fn masked_softmax_zeroes_masked_and_sums_to_one() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::from_vec(2, 3, vec![1.0, 5.0, -2.0, 0.3, 0.1, 9.0]).unwrap());
        let s = g
            .masked_softmax(a, &[true, false, true, true, true, false])
            .unwrap();
        let t = g.value(s);
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.get(1, 2), 0.0);
        for r in 0..2 {
            assert!((t.row(r).iter().sum::<Float>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            g.masked_softmax(a, &[false; 6]),
            Err(Error::AllMasked)
        ));
    }
}
