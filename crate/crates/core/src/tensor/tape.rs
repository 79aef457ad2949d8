//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in exact
//! reverse order of execution and accumulates parameter gradients into a
//! [`Gradients`] buffer. Parameter values are borrowed from the
//! [`ParamStore`], never copied onto the tape.

use rand::Rng;

use super::kernels::{self, axpy, conv_offset, dot, tap_range};
use super::{Gradients, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    Conv {
        input: Var,
        filter: Var,
        bias: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MatVec {
        matrix: Var,
        vector: Var,
    },
    Dot(Var, Var),
    Slice {
        input: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    MaxPoolTime {
        input: Var,
        argmax: usize,
    },
    MaxPoolWindow {
        input: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Same-length convolution over time: `input` is `d×T`, `filter` is
    /// `d×w`, optional `bias` has one element. Output has shape `[T]`.
    pub fn conv_time(&mut self, input: Var, filter: Var, bias: Option<Var>) -> Result<Var> {
        let mut out = kernels::conv_time(self.value(input), self.value(filter))?;
        let mut inputs = vec![input, filter];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.len() != 1 {
                return Err(Error::shape("conv_time", "bias must be a single value"));
            }
            let bv = bv.data()[0];
            out.data_mut().iter_mut().for_each(|v| *v += bv);
            inputs.push(b);
        }
        Ok(self.push(
            Op::Conv {
                input,
                filter,
                bias,
            },
            out,
            &inputs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::relu);
        self.push(Op::Relu(x), out, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push(Op::Sigmoid(x), out, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.push(Op::Tanh(x), out, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let mut out = av.clone();
        out.data_mut()
            .iter_mut()
            .zip(bv.data())
            .for_each(|(x, y)| *x += *y);
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let mut out = av.clone();
        out.data_mut()
            .iter_mut()
            .zip(bv.data())
            .for_each(|(x, y)| *x *= *y);
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    /// `matrix (R×C) · vector (C)`.
    pub fn matvec(&mut self, matrix: Var, vector: Var) -> Result<Var> {
        let (m, v) = (self.value(matrix), self.value(vector));
        let (rows, cols) = m.dims2()?;
        if v.len() != cols {
            return Err(Error::shape(
                "matvec",
                format!("matrix {rows}x{cols} times vector of length {}", v.len()),
            ));
        }
        let x = v.data();
        let out: Vec<T> = m.data().chunks_exact(cols).map(|row| dot(row, x)).collect();
        Ok(self.push(
            Op::MatVec { matrix, vector },
            Tensor::vector(out),
            &[matrix, vector],
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::shape(
                "dot",
                format!("lengths {} and {}", av.len(), bv.len()),
            ));
        }
        let out = Tensor::scalar(dot(av.data(), bv.data()));
        Ok(self.push(Op::Dot(a, b), out, &[a, b]))
    }

    /// Contiguous slice of the flattened input.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(input);
        if start + len > v.len() {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) of length {}", start + len, v.len()),
            ));
        }
        let out = Tensor::vector(v.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { input, start }, out, &[input]))
    }

    /// Flattened concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let total = parts.iter().map(|p| self.value(*p).len()).sum();
        let mut out = Vec::with_capacity(total);
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(out), parts))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(input), out, &[input]))
    }

    /// Maximum over every element; the gradient flows to the first argmax.
    pub fn max_pool_time(&mut self, input: Var) -> Result<Var> {
        let (max, argmax) = kernels::max_pool_time(self.value(input).data())?;
        Ok(self.push(
            Op::MaxPoolTime { input, argmax },
            Tensor::scalar(max),
            &[input],
        ))
    }

    pub fn max_pool_window(&mut self, input: Var, window: (usize, usize)) -> Result<Var> {
        let (out, argmax) = kernels::max_pool_window(self.value(input), window)?;
        Ok(self.push(Op::MaxPoolWindow { input, argmax }, out, &[input]))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = Tensor::vector(kernels::softmax(self.value(x).data()));
        self.push(Op::Softmax(x), out, &[x])
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} items", w.len(), items.len()),
            ));
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        for (k, item) in items.iter().enumerate() {
            let iv = self.value(*item);
            same_shape("weighted_sum", &out, iv)?;
            axpy(w.data()[k], iv.data(), out.data_mut());
        }
        let mut inputs = items.to_vec();
        inputs.push(weights);
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            out,
            &inputs,
        ))
    }

    /// Cross-entropy of `softmax(logits)` against `label`, as a 1-element
    /// tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        let loss = kernels::cross_entropy_logits(z, label)?;
        let probs = kernels::softmax(z);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
            &[logits],
        ))
    }

    /// Inverted dropout with a freshly drawn mask.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R) -> Var {
        let mask: Vec<T> = kernels::dropout_mask(self.value(input).len(), rate, rng);
        let mut out = self.value(input).clone();
        out.data_mut()
            .iter_mut()
            .zip(&mask)
            .for_each(|(x, m)| *x *= *m);
        self.push(Op::Dropout { input, mask }, out, &[input])
    }

    /// Gathers table rows for `ids` into a `d×T` grid (one column per id).
    /// Gradient for `frozen_row` is dropped.
    pub fn embed(&mut self, table: Var, ids: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = tv.dims2()?;
        if ids.is_empty() {
            return Err(Error::shape("embed", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "embed",
                format!("id {bad} outside table of {rows} rows"),
            ));
        }
        let len = ids.len();
        let mut out = vec![T::zero(); d * len];
        for (t, &id) in ids.iter().enumerate() {
            for (i, &v) in tv.row(id).iter().enumerate() {
                out[i * len + t] = v;
            }
        }
        let out = Tensor::new(vec![d, len], out)?;
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
                frozen_row,
            },
            out,
            &[table],
        ))
    }

    /// Backpropagates from a single-element `loss` node, adding
    /// `d loss / d param` into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) -> Result<()> {
        self.backward_scaled(loss, T::one(), grads)
    }

    /// As [`Tape::backward`] with the seed gradient set to `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: T, grads: &mut Gradients<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut g: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = g[idx].take() else { continue };
            self.backward_node(node, &gout, &mut g, grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn grad_buf<'g>(&self, g: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let len = self.value(v).len();
        g[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        gout: &[T],
        g: &mut [Option<Vec<T>>],
        grads: &mut Gradients<T>,
    ) {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                axpy(T::one(), gout, grads.get_mut(*id).data_mut());
            }
            Op::Conv {
                input,
                filter,
                bias,
            } => {
                let iv = self.value(*input);
                let fv = self.value(*filter);
                let (d, len) = (iv.shape()[0], iv.shape()[1]);
                let width = fv.shape()[1];
                let offset = conv_offset(width);
                if self.wants(*filter) {
                    let df = self.grad_buf(g, *filter);
                    for i in 0..d {
                        let row = &iv.data()[i * len..(i + 1) * len];
                        for j in 0..width {
                            let (lo, hi) = tap_range(len, j, offset);
                            if lo < hi {
                                let src = &row[lo + j - offset..hi + j - offset];
                                df[i * width + j] += dot(&gout[lo..hi], src);
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    let di = self.grad_buf(g, *input);
                    for i in 0..d {
                        let row = &mut di[i * len..(i + 1) * len];
                        for j in 0..width {
                            let f = fv.data()[i * width + j];
                            let (lo, hi) = tap_range(len, j, offset);
                            if lo < hi {
                                axpy(f, &gout[lo..hi], &mut row[lo + j - offset..hi + j - offset]);
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let total: T = gout.iter().copied().sum();
                        self.grad_buf(g, *b)[0] += total;
                    }
                }
            }
            Op::Relu(x) => {
                let y = node.value.as_ref().expect("relu value");
                let dx = self.grad_buf(g, *x);
                for ((d, &go), &yv) in dx.iter_mut().zip(gout).zip(y.data()) {
                    if yv > T::zero() {
                        *d += go;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_ref().expect("sigmoid value");
                let dx = self.grad_buf(g, *x);
                for ((d, &go), &yv) in dx.iter_mut().zip(gout).zip(y.data()) {
                    *d += go * yv * (T::one() - yv);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.as_ref().expect("tanh value");
                let dx = self.grad_buf(g, *x);
                for ((d, &go), &yv) in dx.iter_mut().zip(gout).zip(y.data()) {
                    *d += go * (T::one() - yv * yv);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        axpy(T::one(), gout, self.grad_buf(g, *v));
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).data();
                    let da = self.grad_buf(g, *a);
                    for ((d, &go), &y) in da.iter_mut().zip(gout).zip(bv) {
                        *d += go * y;
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a).data();
                    let db = self.grad_buf(g, *b);
                    for ((d, &go), &x) in db.iter_mut().zip(gout).zip(av) {
                        *d += go * x;
                    }
                }
            }
            Op::MatVec { matrix, vector } => {
                let m = self.value(*matrix);
                let v = self.value(*vector);
                let cols = v.len();
                if self.wants(*matrix) {
                    let dm = self.grad_buf(g, *matrix);
                    for (r, &go) in gout.iter().enumerate() {
                        if go != T::zero() {
                            axpy(go, v.data(), &mut dm[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                if self.wants(*vector) {
                    let dv = self.grad_buf(g, *vector);
                    for (r, &go) in gout.iter().enumerate() {
                        if go != T::zero() {
                            axpy(go, m.row(r), dv);
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                let go = gout[0];
                if self.wants(*a) {
                    axpy(go, self.value(*b).data(), self.grad_buf(g, *a));
                }
                if self.wants(*b) {
                    axpy(go, self.value(*a).data(), self.grad_buf(g, *b));
                }
            }
            Op::Slice { input, start } => {
                let dx = self.grad_buf(g, *input);
                axpy(T::one(), gout, &mut dx[*start..*start + gout.len()]);
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.wants(*p) {
                        axpy(T::one(), &gout[at..at + len], self.grad_buf(g, *p));
                    }
                    at += len;
                }
            }
            Op::Reshape(x) => {
                axpy(T::one(), gout, self.grad_buf(g, *x));
            }
            Op::MaxPoolTime { input, argmax } => {
                self.grad_buf(g, *input)[*argmax] += gout[0];
            }
            Op::MaxPoolWindow { input, argmax } => {
                let dx = self.grad_buf(g, *input);
                for (&a, &go) in argmax.iter().zip(gout) {
                    dx[a] += go;
                }
            }
            Op::Softmax(x) => {
                let y = node.value.as_ref().expect("softmax value").data();
                let gy = dot(gout, y);
                let dx = self.grad_buf(g, *x);
                for ((d, &go), &yv) in dx.iter_mut().zip(gout).zip(y) {
                    *d += yv * (go - gy);
                }
            }
            Op::WeightedSum { weights, items } => {
                if self.wants(*weights) {
                    let dws: Vec<T> = items
                        .iter()
                        .map(|it| dot(gout, self.value(*it).data()))
                        .collect();
                    axpy(T::one(), &dws, self.grad_buf(g, *weights));
                }
                let w = self.value(*weights).data();
                for (k, it) in items.iter().enumerate() {
                    if self.wants(*it) {
                        axpy(w[k], gout, self.grad_buf(g, *it));
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let go = gout[0];
                let dz = self.grad_buf(g, *logits);
                for (k, (d, &p)) in dz.iter_mut().zip(probs).enumerate() {
                    let target = if k == *label { T::one() } else { T::zero() };
                    *d += go * (p - target);
                }
            }
            Op::Dropout { input, mask } => {
                let dx = self.grad_buf(g, *input);
                for ((d, &go), &m) in dx.iter_mut().zip(gout).zip(mask) {
                    *d += go * m;
                }
            }
            Op::Embed {
                table,
                ids,
                frozen_row,
            } => {
                let len = ids.len();
                let d = self.value(*table).shape()[1];
                // Scatter straight into the parameter gradient when the table
                // is a stored parameter; avoids a dense |V|×d node buffer.
                let direct = match self.nodes[table.0].op {
                    Op::Param(id) => Some(id),
                    _ => None,
                };
                let dt: &mut [T] = match direct {
                    Some(id) => grads.get_mut(id).data_mut(),
                    None => self.grad_buf(g, *table),
                };
                for (t, &id) in ids.iter().enumerate() {
                    if Some(id) == *frozen_row {
                        continue;
                    }
                    let row = &mut dt[id * d..(id + 1) * d];
                    for (i, r) in row.iter_mut().enumerate() {
                        *r += gout[i * len + t];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn max_pool_tie_routes_to_first() {
        let s = store(&[("x", Tensor::vector(vec![2.0, 2.0]))]);
        let mut tape = Tape::new(&s);
        let x = tape.param(s.id("x").unwrap());
        let m = tape.max_pool_time(x).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0]);
        let mut g = Gradients::zeros_like(&s);
        tape.backward(m, &mut g).unwrap();
        assert_eq!(g.get(s.id("x").unwrap()).data(), &[1.0, 0.0]);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let s = store(&[
            ("a", Tensor::vector(vec![1.0, 2.0])),
            ("b", Tensor::vector(vec![3.0, 4.0])),
        ]);
        let mut tape = Tape::new(&s);
        let a = tape.param(s.id("a").unwrap());
        let _b = tape.param(s.id("b").unwrap());
        let l = tape.dot(a, a).unwrap();
        let mut g = Gradients::zeros_like(&s);
        tape.backward(l, &mut g).unwrap();
        assert_eq!(g.get(s.id("a").unwrap()).data(), &[2.0, 4.0]);
        assert_eq!(g.get(s.id("b").unwrap()).data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_logit_gradient() {
        let s = store(&[("z", Tensor::vector(vec![0.0, 0.0]))]);
        let mut tape = Tape::new(&s);
        let z = tape.param(s.id("z").unwrap());
        let l = tape.softmax_cross_entropy(z, 0).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-15);
        let mut g = Gradients::zeros_like(&s);
        tape.backward(l, &mut g).unwrap();
        assert_eq!(g.get(s.id("z").unwrap()).data(), &[-0.5, 0.5]);
    }

    #[test]
    fn embed_masks_frozen_row() {
        let table = Tensor::from_fn(&[3, 2], |i| i as f64);
        let s = store(&[("emb", table)]);
        let mut tape = Tape::new(&s);
        let t = tape.param(s.id("emb").unwrap());
        let grid = tape.embed(t, &[2, 0, 2], Some(0)).unwrap();
        assert_eq!(tape.value(grid).shape(), &[2, 3]);
        assert_eq!(tape.value(grid).data(), &[4.0, 0.0, 4.0, 5.0, 1.0, 5.0]);
        let ones = tape.constant(Tensor::filled(&[2, 3], 1.0));
        let prod = tape.mul(grid, ones).unwrap();
        let flat = tape.reshape(prod, vec![6]).unwrap();
        let w = tape.constant(Tensor::vector(vec![1.0; 6]));
        let l = tape.dot(flat, w).unwrap();
        let mut g = Gradients::zeros_like(&s);
        tape.backward(l, &mut g).unwrap();
        assert_eq!(
            g.get(s.id("emb").unwrap()).data(),
            &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]
        );
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let s = store(&[("x", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::new(&s);
        let x = tape.param(s.id("x").unwrap());
        let mut g = Gradients::zeros_like(&s);
        assert!(tape.backward(x, &mut g).is_err());
    }
}
