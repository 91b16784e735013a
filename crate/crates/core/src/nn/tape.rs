//! Reverse-mode tape.
//!
//! Each op appends a node holding its output and a closure that maps the
//! output gradient to input gradients. [`Tape::backward`] walks the nodes in
//! exact reverse creation order, which is a reverse topological order because
//! an op can only consume earlier nodes.

use rand::Rng;

use crate::engine::{attention_auto, AttentionMode};
use crate::error::{Error, Result};
use crate::reference::AttentionConfig;
use crate::tensor::{matmul, matmul_tn, Matrix, Scalar};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<T> = Box<dyn FnOnce(&Matrix<T>, &mut GradBuf<T>) -> Result<()>>;

struct Node<T: Scalar> {
    value: Matrix<T>,
    back: Option<BackFn<T>>,
}

/// Gradient slots, one per node, filled during the reverse sweep.
pub struct GradBuf<T: Scalar> {
    slots: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> GradBuf<T> {
    fn add(&mut self, v: Var, g: Matrix<T>) -> Result<()> {
        match &mut self.slots[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }
}

/// Gradients for every registered parameter, indexed by parameter id.
#[derive(Debug, Clone)]
pub struct ParamGrads<T: Scalar> {
    pub grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: usize) -> Option<&Matrix<T>> {
        self.grads.get(id).and_then(Option::as_ref)
    }
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, Var)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, back: Option<BackFn<T>>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, None)
    }

    /// A trainable leaf. Each id may be registered once per tape.
    pub fn param(&mut self, id: usize, value: &Matrix<T>) -> Result<Var> {
        if self.params.iter().any(|&(p, _)| p == id) {
            return Err(Error::InvalidConfig(format!("parameter {id} registered twice on one tape")));
        }
        let v = self.push(value.clone(), None);
        self.params.push((id, v));
        Ok(v)
    }

    /// Parameter ids in registration order.
    pub fn param_ids(&self) -> Vec<usize> {
        self.params.iter().map(|&(p, _)| p).collect()
    }

    /// Rows of `table` selected by `tokens`.
    pub fn embedding(&mut self, table: Var, tokens: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, d) = t.shape();
        if let Some(&bad) = tokens.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidIndex { index: bad, width: vocab });
        }
        let mut out = Matrix::zeros(tokens.len(), d);
        for (r, &tok) in tokens.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(tok));
        }
        let tokens = tokens.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let mut dt = Matrix::zeros(vocab, d);
                for (r, &tok) in tokens.iter().enumerate() {
                    for (a, &b) in dt.row_mut(tok).iter_mut().zip(g.row(r)) {
                        *a = *a + b;
                    }
                }
                buf.add(table, dt)
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.add(a, g.clone())?;
                buf.add(b, g.clone())
            })),
        ))
    }

    /// `a · b`, or `a · bᵀ` when `transpose_b`.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = matmul(&av, &bv, transpose_b)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                if transpose_b {
                    buf.add(a, matmul(g, &bv, false)?)?;
                    buf.add(b, matmul_tn(g, &av)?)
                } else {
                    buf.add(a, matmul(g, &bv, true)?)?;
                    buf.add(b, matmul_tn(&av, g)?)
                }
            })),
        ))
    }

    /// Row-wise layer normalisation with gain and offset of shape `[1, d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.shape();
        let (gv, ov) = (self.value(gain).clone(), self.value(offset).clone());
        if gv.shape() != (1, d) || ov.shape() != (1, d) {
            return Err(Error::shape(
                "layer_norm",
                format!("gain {:?} / offset {:?} for width {d}", gv.shape(), ov.shape()),
            ));
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(d).unwrap();
        let mut xhat = Matrix::zeros(rows, d);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let s = (var + eps).sqrt().recip();
            inv_std.push(s);
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mu) * s;
            }
        }
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, &gk), &bk) in out.row_mut(r).iter_mut().zip(gv.row(0)).zip(ov.row(0)) {
                *o = *o * gk + bk;
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let mut dgain = Matrix::zeros(1, d);
                let mut doff = Matrix::zeros(1, d);
                let mut dx = Matrix::zeros(rows, d);
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    for k in 0..d {
                        dgain.row_mut(0)[k] = dgain.row(0)[k] + gr[k] * xr[k];
                        doff.row_mut(0)[k] = doff.row(0)[k] + gr[k];
                        dxhat[k] = gr[k] * gv.row(0)[k];
                    }
                    let mean = dxhat.iter().copied().sum::<T>() / n;
                    let mean_x = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for (k, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std[r] * (dxhat[k] - mean - xr[k] * mean_x);
                    }
                }
                buf.add(x, dx)?;
                buf.add(gain, dgain)?;
                buf.add(offset, doff)
            })),
        ))
    }

    /// Horizontal concatenation of equally tall blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = Matrix::zeros(rows, total);
        for r in 0..rows {
            let mut c0 = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out.row_mut(r)[c0..c0 + w].copy_from_slice(self.value(p).row(r));
                c0 += w;
            }
        }
        let parts = parts.to_vec();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let mut c0 = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let gp = Matrix::from_fn(rows, w, |r, c| g.get(r, c0 + c));
                    buf.add(p, gp)?;
                    c0 += w;
                }
                Ok(())
            })),
        ))
    }

    /// Attention through any of the engines.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        cfg: &AttentionConfig,
        mode: AttentionMode,
    ) -> Result<Var> {
        let node = attention_auto(self.value(q), self.value(k), self.value(v), cfg, mode)?;
        let (out, backward) = node.into_parts();
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let grads = backward(g)?;
                buf.add(q, grads.d_q)?;
                buf.add(k, grads.d_k)?;
                buf.add(v, grads.d_v)
            })),
        ))
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales the
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask = Matrix::from_fn(xv.rows(), xv.cols(), |_, _| {
            if rng.random_bool(rate) {
                T::zero()
            } else {
                keep
            }
        });
        let out = xv.hadamard(&mask)?;
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| buf.add(x, g.hadamard(&mask)?))),
        ))
    }

    /// Mean of all entries, as a `[1, 1]` node.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let (rows, cols) = xv.shape();
        let inv = T::from_usize(xv.len()).unwrap().recip();
        let out = Matrix::filled(1, 1, xv.sum() * inv);
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                buf.add(x, Matrix::filled(rows, cols, g.get(0, 0) * inv))
            })),
        ))
    }

    /// Mean token cross-entropy over the positions that carry a target.
    /// Returns a `[1, 1]` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = lv.shape();
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::InvalidConfig("cross_entropy: no target positions".into()));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(Error::InvalidIndex { index: bad, width: classes });
        }
        let mut probs = Matrix::zeros(rows, classes);
        let mut loss = 0.0f64;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            loss += (z.ln() + m - row[t]).to_f64_lossy();
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - m).exp() / z;
            }
        }
        let inv = T::from_usize(count).unwrap().recip();
        let targets = targets.to_vec();
        let out = Matrix::filled(1, 1, T::from_f64_lossy(loss / count as f64));
        Ok(self.push(
            out,
            Some(Box::new(move |g, buf| {
                let s = g.get(0, 0) * inv;
                let mut d = probs;
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let row = d.row_mut(r);
                        row[t] = row[t] - T::one();
                        for v in row.iter_mut() {
                            *v = *v * s;
                        }
                    }
                }
                buf.add(logits, d)
            })),
        ))
    }

    /// Runs the reverse sweep from a `[1, 1]` node, seeding its gradient with
    /// `seed`, and returns the gradient of every registered parameter.
    /// Parameters the loss does not depend on get an explicit zero.
    pub fn backward(self, loss: Var, seed: T) -> Result<ParamGrads<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward", "loss must be a 1x1 node"));
        }
        let Tape { nodes, params } = self;
        let shapes: Vec<(usize, usize)> = params.iter().map(|&(_, v)| nodes[v.0].value.shape()).collect();
        let mut buf = GradBuf {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        buf.slots[loss.0] = Some(Matrix::filled(1, 1, seed));
        let mut nodes = nodes;
        nodes.truncate(loss.0 + 1);
        while let Some(node) = nodes.pop() {
            let i = nodes.len();
            if let Some(back) = node.back {
                if let Some(g) = buf.slots[i].take() {
                    back(&g, &mut buf)?;
                }
            }
        }
        let n_ids = params.iter().map(|&(p, _)| p + 1).max().unwrap_or(0);
        let mut grads: Vec<Option<Matrix<T>>> = (0..n_ids).map(|_| None).collect();
        for (&(p, v), &(r, c)) in params.iter().zip(&shapes) {
            grads[p] = Some(buf.slots[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c)));
        }
        Ok(ParamGrads { grads })
    }
}
