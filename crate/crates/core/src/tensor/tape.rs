//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and the ids of
//! its inputs. Node ids are assigned in creation order, so walking the node
//! list backwards from the loss is a valid reverse topological order and
//! visits each node once.

use std::cell::{Ref, RefCell};

use super::kernels::{conv_forward, gemm_acc, gemm_at_acc, gemm_bt_acc, sigmoid};
use super::{mismatch, Real, Rng, Tensor, TensorError};

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Mul { a: usize, b: usize },
    MulConst { x: usize, c: Vec<T> },
    Scale { x: usize, c: T },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Dropout { x: usize, mask: Vec<T> },
    Concat { a: usize, b: usize, ca: usize, cb: usize },
    SliceLast { x: usize, start: usize, width: usize, full: usize },
    Conv { x: usize, w: usize, bias: usize, dims: ConvDims },
    Reshape { x: usize },
    SelectTime { x: usize, t: usize, steps: usize },
    StackTime { parts: Vec<usize> },
    ReverseTime { x: usize, steps: usize },
    CrossEntropy { logits: usize, rows: Vec<(usize, usize)>, probs: Vec<T>, vocab: usize },
    Sum { x: usize },
}

#[derive(Clone, Copy)]
struct ConvDims {
    batch: usize,
    steps: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
}

struct Inner<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

/// Recording of one forward pass. Confined to a single thread.
pub struct Tape<T: Real> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                values: Vec::new(),
                ops: Vec::new(),
                requires: Vec::new(),
                grads: Vec::new(),
                backward_done: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.ops.push(op);
        inner.requires.push(requires);
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let inner = self.inner.borrow();
        let g = inner.grads.get(v.id)?.as_ref()?;
        Some(Tensor::new(inner.values[v.id].shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Drops all gradients so that backward may run again.
    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grads.clear();
        inner.backward_done = false;
    }

    /// Propagates d(loss)/d(node) to every node that depends on a trainable
    /// leaf. A second call without [`Tape::zero_grad`] is rejected.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<(), TensorError> {
        let mut guard = self.inner.borrow_mut();
        let inner = &mut *guard;
        if inner.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        if inner.values[loss.id].numel() != 1 {
            return Err(TensorError::NotScalar(inner.values[loss.id].shape().to_vec()));
        }
        inner.backward_done = true;
        inner.grads = vec![None; inner.values.len()];
        inner.grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            if !inner.requires[id] {
                continue;
            }
            let Some(g) = inner.grads[id].take() else { continue };
            backprop(&inner.ops[id], id, &g, &inner.values, &inner.requires, &mut inner.grads);
            inner.grads[id] = Some(g);
        }
        Ok(())
    }
}

fn accumulate<T: Real>(
    grads: &mut [Option<Vec<T>>],
    requires: &[bool],
    values: &[Tensor<T>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !requires[id] {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![T::zero(); values[id].numel()]);
    f(buf);
}

fn backprop<T: Real>(
    op: &Op<T>,
    id: usize,
    g: &[T],
    values: &[Tensor<T>],
    requires: &[bool],
    grads: &mut [Option<Vec<T>>],
) {
    let out = values[id].data();
    let val = |i: usize| values[i].data();
    match op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            accumulate(grads, requires, values, a, |d| gemm_bt_acc(g, val(b), d, m, k, n));
            accumulate(grads, requires, values, b, |d| gemm_at_acc(val(a), g, d, m, k, n));
        }
        &Op::Add { a, b } => {
            for x in [a, b] {
                accumulate(grads, requires, values, x, |d| add_into(d, g));
            }
        }
        &Op::AddBias { x, bias } => {
            accumulate(grads, requires, values, x, |d| add_into(d, g));
            let n = values[bias].numel();
            accumulate(grads, requires, values, bias, |d| {
                for row in g.chunks(n) {
                    add_into(d, row);
                }
            });
        }
        &Op::Mul { a, b } => {
            accumulate(grads, requires, values, a, |d| {
                for ((d, &gv), &bv) in d.iter_mut().zip(g).zip(val(b)) {
                    *d += gv * bv;
                }
            });
            accumulate(grads, requires, values, b, |d| {
                for ((d, &gv), &av) in d.iter_mut().zip(g).zip(val(a)) {
                    *d += gv * av;
                }
            });
        }
        Op::MulConst { x, c } => {
            accumulate(grads, requires, values, *x, |d| {
                for ((d, &gv), &cv) in d.iter_mut().zip(g).zip(c) {
                    *d += gv * cv;
                }
            });
        }
        &Op::Scale { x, c } => {
            accumulate(grads, requires, values, x, |d| {
                for (d, &gv) in d.iter_mut().zip(g) {
                    *d += gv * c;
                }
            });
        }
        &Op::Sigmoid { x } => accumulate(grads, requires, values, x, |d| {
            for ((d, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                *d += gv * y * (T::one() - y);
            }
        }),
        &Op::Tanh { x } => accumulate(grads, requires, values, x, |d| {
            for ((d, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                *d += gv * (T::one() - y * y);
            }
        }),
        &Op::Relu { x } => accumulate(grads, requires, values, x, |d| {
            for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                if xv > T::zero() {
                    *d += gv;
                }
            }
        }),
        Op::Dropout { x, mask } => accumulate(grads, requires, values, *x, |d| {
            for ((d, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                *d += gv * m;
            }
        }),
        &Op::Concat { a, b, ca, cb } => {
            let c = ca + cb;
            accumulate(grads, requires, values, a, |d| {
                for (drow, grow) in d.chunks_mut(ca).zip(g.chunks(c)) {
                    add_into(drow, &grow[..ca]);
                }
            });
            accumulate(grads, requires, values, b, |d| {
                for (drow, grow) in d.chunks_mut(cb).zip(g.chunks(c)) {
                    add_into(drow, &grow[ca..]);
                }
            });
        }
        &Op::SliceLast { x, start, width, full } => accumulate(grads, requires, values, x, |d| {
            for (drow, grow) in d.chunks_mut(full).zip(g.chunks(width)) {
                add_into(&mut drow[start..start + width], grow);
            }
        }),
        &Op::Conv { x, w, bias, dims } => {
            let ConvDims { batch, steps, cin, cout, kernel, dilation } = dims;
            accumulate(grads, requires, values, x, |d| {
                let wv = val(w);
                for bt in 0..batch * steps {
                    let (b, t) = (bt / steps, bt % steps);
                    let grow = &g[bt * cout..(bt + 1) * cout];
                    for k in 0..kernel {
                        let Some(src) = t.checked_sub(k * dilation) else { break };
                        let r = b * steps + src;
                        gemm_bt_acc(
                            grow,
                            &wv[k * cin * cout..(k + 1) * cin * cout],
                            &mut d[r * cin..(r + 1) * cin],
                            1,
                            cin,
                            cout,
                        );
                    }
                }
            });
            accumulate(grads, requires, values, w, |d| {
                let xv = val(x);
                for bt in 0..batch * steps {
                    let (b, t) = (bt / steps, bt % steps);
                    let grow = &g[bt * cout..(bt + 1) * cout];
                    for k in 0..kernel {
                        let Some(src) = t.checked_sub(k * dilation) else { break };
                        let r = b * steps + src;
                        gemm_at_acc(
                            &xv[r * cin..(r + 1) * cin],
                            grow,
                            &mut d[k * cin * cout..(k + 1) * cin * cout],
                            1,
                            cin,
                            cout,
                        );
                    }
                }
            });
            accumulate(grads, requires, values, bias, |d| {
                for row in g.chunks(cout) {
                    add_into(d, row);
                }
            });
        }
        &Op::Reshape { x } => accumulate(grads, requires, values, x, |d| add_into(d, g)),
        &Op::SelectTime { x, t, steps } => accumulate(grads, requires, values, x, |d| {
            let width = values[x].numel() / (values[x].shape()[0] * steps);
            for (b, grow) in g.chunks(width).enumerate() {
                let r = b * steps + t;
                add_into(&mut d[r * width..(r + 1) * width], grow);
            }
        }),
        Op::StackTime { parts } => {
            let steps = parts.len();
            for (t, &p) in parts.iter().enumerate() {
                let width = values[p].shape()[1];
                accumulate(grads, requires, values, p, |d| {
                    for (b, drow) in d.chunks_mut(width).enumerate() {
                        let r = b * steps + t;
                        add_into(drow, &g[r * width..(r + 1) * width]);
                    }
                });
            }
        }
        &Op::ReverseTime { x, steps } => accumulate(grads, requires, values, x, |d| {
            let width = g.len() / (values[x].shape()[0] * steps);
            for (r, grow) in g.chunks(width).enumerate() {
                let (b, t) = (r / steps, r % steps);
                let src = b * steps + (steps - 1 - t);
                add_into(&mut d[src * width..(src + 1) * width], grow);
            }
        }),
        Op::CrossEntropy { logits, rows, probs, vocab } => {
            let scale = g[0] / T::from_usize(rows.len()).expect("count");
            accumulate(grads, requires, values, *logits, |d| {
                for (k, &(row, target)) in rows.iter().enumerate() {
                    let p = &probs[k * vocab..(k + 1) * vocab];
                    let drow = &mut d[row * vocab..(row + 1) * vocab];
                    for (dv, &pv) in drow.iter_mut().zip(p) {
                        *dv += scale * pv;
                    }
                    drow[target] -= scale;
                }
            });
        }
        &Op::Sum { x } => accumulate(grads, requires, values, x, |d| {
            for dv in d.iter_mut() {
                *dv += g[0];
            }
        }),
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    for (dv, &gv) in d.iter_mut().zip(g) {
        *dv += gv;
    }
}

/// `[B, T, C]` view of a rank-2 `[T, C]` or rank-3 tensor.
fn seq_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [t, c] => Some((1, t, c)),
        [b, t, c] => Some((b, t, c)),
        _ => None,
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrow of the stored value.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.inner.borrow(), |i| &i.values[self.id])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().requires[self.id]
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    fn req2(&self, other: &Var<'t, T>) -> bool {
        let inner = self.tape.inner.borrow();
        inner.requires[self.id] || inner.requires[other.id]
    }

    fn unary(&self, f: impl Fn(T) -> T, op: Op<T>) -> Var<'t, T> {
        let (value, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let data = x.data().iter().map(|&v| f(v)).collect();
            (
                Tensor::new(x.shape().to_vec(), data).expect("same shape"),
                inner.requires[self.id],
            )
        };
        self.tape.push(value, op, req)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(other);
        let (value, m, k, n) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            let b = &inner.values[other.id];
            let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
                return mismatch(format!("matmul needs matrices, got {:?} x {:?}", a.shape(), b.shape()));
            };
            if k != k2 {
                return mismatch(format!("matmul inner dims {:?} x {:?}", a.shape(), b.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            gemm_acc(a.data(), b.data(), &mut out, m, k, n);
            (Tensor::new(vec![m, n], out)?, m, k, n)
        };
        let req = self.req2(other);
        Ok(self.tape.push(value, Op::MatMul { a: self.id, b: other.id, m, k, n }, req))
    }

    /// `x[.., k] · w[k, n]` over all leading dimensions.
    pub fn linear(&self, w: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let shape = self.shape();
        let k = *shape.last().ok_or_else(|| TensorError::ShapeMismatch("scalar input".into()))?;
        let rows = shape.iter().product::<usize>() / k.max(1);
        let y = self.reshape(&[rows, k])?.matmul(w)?;
        let n = y.shape()[1];
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(n);
        y.reshape(&out_shape)
    }

    fn zip_with(
        &self,
        other: &Var<'t, T>,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(other);
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            let b = &inner.values[other.id];
            if a.shape() != b.shape() {
                return mismatch(format!("{name} of {:?} and {:?}", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        let req = self.req2(other);
        Ok(self.tape.push(value, op, req))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.zip_with(other, "add", |x, y| x + y, Op::Add { a: self.id, b: other.id })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.zip_with(other, "hadamard", |x, y| x * y, Op::Mul { a: self.id, b: other.id })
    }

    /// Adds a `[n]` vector to every row of `[.., n]`.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(bias);
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let b = &inner.values[bias.id];
            let n = b.numel();
            if b.shape().len() != 1 || x.shape().last() != Some(&n) {
                return mismatch(format!("bias {:?} on {:?}", b.shape(), x.shape()));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                add_into(row, b.data());
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        let req = self.req2(bias);
        Ok(self.tape.push(value, Op::AddBias { x: self.id, bias: bias.id }, req))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&self, c: &Tensor<T>) -> Result<Var<'t, T>, TensorError> {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            if x.shape() != c.shape() {
                return mismatch(format!("mul_const {:?} by {:?}", x.shape(), c.shape()));
            }
            let data = x.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let req = self.requires_grad();
        Ok(self.tape.push(value, Op::MulConst { x: self.id, c: c.data().to_vec() }, req))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(|v| v * c, Op::Scale { x: self.id, c })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(sigmoid, Op::Sigmoid { x: self.id })
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(|v| v.tanh(), Op::Tanh { x: self.id })
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(|v| v.max(T::zero()), Op::Relu { x: self.id })
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - p)`.
    /// Identity when `train` is false or `p` is zero.
    pub fn dropout(&self, p: f64, train: bool, rng: &mut Rng) -> Var<'t, T> {
        if !train || p <= 0.0 {
            return *self;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let (value, mask, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let mask: Vec<T> = (0..x.numel())
                .map(|_| if rng.uniform() < p { T::zero() } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (
                Tensor::new(x.shape().to_vec(), data).expect("same shape"),
                mask,
                inner.requires[self.id],
            )
        };
        self.tape.push(value, Op::Dropout { x: self.id, mask }, req)
    }

    /// Concatenates along the last (channel) axis.
    pub fn concat_channels(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(other);
        let (value, ca, cb) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.values[self.id];
            let b = &inner.values[other.id];
            let (sa, sb) = (a.shape(), b.shape());
            if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
                return mismatch(format!("concat {sa:?} with {sb:?}"));
            }
            let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
            let mut data = Vec::with_capacity(a.numel() + b.numel());
            for (ra, rb) in a.data().chunks(ca.max(1)).zip(b.data().chunks(cb.max(1))) {
                data.extend_from_slice(ra);
                data.extend_from_slice(rb);
            }
            let mut shape = sa.to_vec();
            *shape.last_mut().expect("non-empty") = ca + cb;
            (Tensor::new(shape, data)?, ca, cb)
        };
        let req = self.req2(other);
        Ok(self.tape.push(value, Op::Concat { a: self.id, b: other.id, ca, cb }, req))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_channels(&self, start: usize, width: usize) -> Result<Var<'t, T>, TensorError> {
        let (value, full, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let full = *x.shape().last().unwrap_or(&0);
            if start + width > full {
                return mismatch(format!("slice {start}+{width} of {:?}", x.shape()));
            }
            let data: Vec<T> = x
                .data()
                .chunks(full)
                .flat_map(|r| r[start..start + width].iter().copied())
                .collect();
            let mut shape = x.shape().to_vec();
            *shape.last_mut().expect("non-empty") = width;
            (Tensor::new(shape, data)?, full, inner.requires[self.id])
        };
        Ok(self
            .tape
            .push(value, Op::SliceLast { x: self.id, start, width, full }, req))
    }

    /// Causal dilated 1-D convolution. `self` is `[T, Cin]` or `[B, T, Cin]`,
    /// `w` is `[K, Cin, Cout]`, `bias` is `[Cout]`. Output keeps the input
    /// length; position `t` only sees inputs at `t, t-d, …, t-(K-1)d`.
    pub fn causal_conv1d(
        &self,
        w: &Var<'t, T>,
        bias: &Var<'t, T>,
        dilation: usize,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(w);
        self.same_tape(bias);
        if dilation == 0 {
            return mismatch("dilation must be positive");
        }
        let (value, dims) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let wt = &inner.values[w.id];
            let bt = &inner.values[bias.id];
            let Some((batch, steps, cin)) = seq_dims(x.shape()) else {
                return mismatch(format!("conv input {:?}", x.shape()));
            };
            let &[kernel, wcin, cout] = wt.shape() else {
                return mismatch(format!("conv kernel {:?}", wt.shape()));
            };
            if kernel == 0 || wcin != cin || bt.shape() != [cout] {
                return mismatch(format!(
                    "conv {:?} with kernel {:?} and bias {:?}",
                    x.shape(),
                    wt.shape(),
                    bt.shape()
                ));
            }
            let mut out = vec![T::zero(); batch * steps * cout];
            conv_forward(x.data(), wt.data(), bt.data(), &mut out, batch, steps, cin, cout, kernel, dilation);
            let mut shape = x.shape().to_vec();
            *shape.last_mut().expect("rank >= 2") = cout;
            let dims = ConvDims { batch, steps, cin, cout, kernel, dilation };
            (Tensor::new(shape, out)?, dims)
        };
        let req = {
            let inner = self.tape.inner.borrow();
            inner.requires[self.id] || inner.requires[w.id] || inner.requires[bias.id]
        };
        Ok(self.tape.push(
            value,
            Op::Conv { x: self.id, w: w.id, bias: bias.id, dims },
            req,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let (value, req) = {
            let inner = self.tape.inner.borrow();
            let x = inner.values[self.id].clone();
            (x.reshaped(shape)?, inner.requires[self.id])
        };
        Ok(self.tape.push(value, Op::Reshape { x: self.id }, req))
    }

    /// Row `t` of every sequence in `[B, T, C]`, giving `[B, C]`.
    pub fn select_time(&self, t: usize) -> Result<Var<'t, T>, TensorError> {
        let (value, steps, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let &[batch, steps, c] = x.shape() else {
                return mismatch(format!("select_time on {:?}", x.shape()));
            };
            if t >= steps {
                return mismatch(format!("time {t} out of {steps}"));
            }
            let mut data = Vec::with_capacity(batch * c);
            for b in 0..batch {
                let r = b * steps + t;
                data.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
            }
            (Tensor::new(vec![batch, c], data)?, steps, inner.requires[self.id])
        };
        Ok(self.tape.push(value, Op::SelectTime { x: self.id, t, steps }, req))
    }

    /// Stacks `[B, C]` steps into `[B, T, C]`.
    pub fn stack_time(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::ShapeMismatch("empty stack".into()))?;
        let tape = first.tape;
        let (value, req) = {
            let inner = tape.inner.borrow();
            let shape = inner.values[first.id].shape().to_vec();
            let &[batch, c] = shape.as_slice() else {
                return mismatch(format!("stack_time of {shape:?}"));
            };
            let steps = parts.len();
            let mut data = vec![T::zero(); batch * steps * c];
            let mut req = false;
            for (t, p) in parts.iter().enumerate() {
                first.same_tape(p);
                let v = &inner.values[p.id];
                if v.shape() != shape.as_slice() {
                    return mismatch(format!("stack_time of {shape:?} and {:?}", v.shape()));
                }
                req |= inner.requires[p.id];
                for b in 0..batch {
                    let r = b * steps + t;
                    data[r * c..(r + 1) * c].copy_from_slice(&v.data()[b * c..(b + 1) * c]);
                }
            }
            (Tensor::new(vec![batch, steps, c], data)?, req)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(value, Op::StackTime { parts: ids }, req))
    }

    /// Reverses the time axis of `[B, T, C]`.
    pub fn reverse_time(&self) -> Result<Var<'t, T>, TensorError> {
        let (value, steps, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let &[batch, steps, c] = x.shape() else {
                return mismatch(format!("reverse_time on {:?}", x.shape()));
            };
            let mut data = Vec::with_capacity(x.numel());
            for b in 0..batch {
                for t in (0..steps).rev() {
                    let r = b * steps + t;
                    data.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
                }
            }
            (Tensor::new(x.shape().to_vec(), data)?, steps, inner.requires[self.id])
        };
        Ok(self.tape.push(value, Op::ReverseTime { x: self.id, steps }, req))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `self` (`[N, V]` or `[B, T, V]` flattened to rows). Rows whose mask
    /// entry is false are excluded from the mean.
    pub fn cross_entropy(&self, targets: &[usize], mask: &[bool]) -> Result<Var<'t, T>, TensorError> {
        let (value, rows, probs, vocab, req) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.values[self.id];
            let vocab = *x.shape().last().unwrap_or(&0);
            if vocab < 2 {
                return mismatch(format!("cross_entropy needs >= 2 classes, got {:?}", x.shape()));
            }
            let n = x.numel() / vocab;
            if targets.len() != n || mask.len() != n {
                return mismatch(format!(
                    "{n} rows but {} targets and {} mask entries",
                    targets.len(),
                    mask.len()
                ));
            }
            let mut rows = Vec::new();
            let mut probs = Vec::new();
            let mut loss = T::zero();
            for (r, (&tgt, &keep)) in targets.iter().zip(mask).enumerate() {
                if !keep {
                    continue;
                }
                if tgt >= vocab {
                    return mismatch(format!("target {tgt} outside vocabulary {vocab}"));
                }
                let mut p = x.data()[r * vocab..(r + 1) * vocab].to_vec();
                let row = &x.data()[r * vocab..(r + 1) * vocab];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                loss += lse - row[tgt];
                super::softmax_in_place(&mut p);
                probs.extend(p);
                rows.push((r, tgt));
            }
            if rows.is_empty() {
                return Err(TensorError::EmptyMask);
            }
            let mean = loss / T::from_usize(rows.len()).expect("count");
            (Tensor::scalar(mean), rows, probs, vocab, inner.requires[self.id])
        };
        Ok(self.tape.push(
            value,
            Op::CrossEntropy { logits: self.id, rows, probs, vocab },
            req,
        ))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let (value, req) = {
            let inner = self.tape.inner.borrow();
            let s = inner.values[self.id].data().iter().copied().sum();
            (Tensor::scalar(s), inner.requires[self.id])
        };
        self.tape.push(value, Op::Sum { x: self.id }, req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testing::{assert_grads_close, random_tensor};

    #[test]
    fn product_rule() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.param(Tensor::scalar(5.0));
        let z = x.mul(&y).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(x.grad().unwrap().item(), 5.0);
        assert_eq!(y.grad().unwrap().item(), 3.0);
    }

    #[test]
    fn double_backward_rejected_until_reset() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let z = x.mul(&x).unwrap();
        tape.backward(z).unwrap();
        let first = x.grad().unwrap();
        assert_eq!(tape.backward(z), Err(TensorError::DoubleBackward));
        tape.zero_grad();
        tape.backward(z).unwrap();
        assert_eq!(x.grad().unwrap(), first);
        assert_eq!(first.item(), 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let i = tape.constant(Tensor::eye(2));
        assert_eq!(*i.matmul(&a).unwrap().value(), *a.value());
        let s = tape.constant(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![1, 1], vec![-2.5]).unwrap());
        assert_eq!(s.matmul(&t).unwrap().value().item(), -7.5);
        assert!(matches!(a.matmul(&a), Err(TensorError::ShapeMismatch(_))));
    }

    #[test]
    fn conv_direct_definition() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![4, 1], vec![1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1, 1], vec![1., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = x.causal_conv1d(&w, &b, 2).unwrap();
        assert_eq!(y.value().data(), &[1., 2., 4., 6.]);

        let ident = tape.constant(Tensor::new(vec![2, 1, 1], vec![1., 0.]).unwrap());
        for d in 1..5 {
            let y = x.causal_conv1d(&ident, &b, d).unwrap();
            assert_eq!(y.value().data(), x.value().data());
        }
        assert!(x.causal_conv1d(&w, &b, 0).is_err());
    }

    #[test]
    fn elementwise_values() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[3]));
        assert_eq!(z.sigmoid().value().data(), &[0.5; 3]);
        assert_eq!(z.tanh().value().data(), &[0.0; 3]);
        let mut rng = Rng::new(1, 0);
        let x = tape.constant(Tensor::full(&[5], 2.0));
        assert_eq!(x.dropout(0.5, false, &mut rng).id(), x.id());
        let a = tape.constant(Tensor::zeros(&[7, 256]));
        let b = tape.constant(Tensor::zeros(&[7, 512]));
        assert_eq!(a.concat_channels(&b).unwrap().shape(), vec![7, 768]);
    }

    #[test]
    fn dropout_inverted_scaling() {
        let tape = Tape::<f64>::new();
        let mut rng = Rng::new(3, 0);
        let x = tape.constant(Tensor::full(&[10_000], 1.0));
        let y = x.dropout(0.5, true, &mut rng);
        let v = y.value();
        assert!(v.data().iter().all(|&u| u == 0.0 || u == 2.0));
        let mean: f64 = v.data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn cross_entropy_values() {
        let tape = Tape::<f64>::new();
        let v = 7;
        let logits = tape.constant(Tensor::zeros(&[3, v]));
        let loss = logits.cross_entropy(&[0, 3, 6], &[true, true, false]).unwrap();
        assert!((loss.value().item() - (v as f64).ln()).abs() < 1e-12);
        let mut peaked = Tensor::zeros(&[1, 2]);
        peaked.data_mut()[1] = 50.0;
        let l = tape.constant(peaked).cross_entropy(&[1], &[true]).unwrap();
        assert!(l.value().item() < 1e-20);
        assert_eq!(
            logits.cross_entropy(&[0, 0, 0], &[false; 3]).err(),
            Some(TensorError::EmptyMask)
        );
    }

    #[test]
    fn gradient_checks() {
        for seed in 0..3 {
            let mut rng = Rng::new(seed, 0);
            let a = random_tensor(&[3, 4], &mut rng);
            let b = random_tensor(&[4, 2], &mut rng);
            assert_grads_close(&[a.clone(), b.clone()], |_, v| {
                v[0].matmul(&v[1]).unwrap().tanh().sum()
            });
            let x = random_tensor(&[2, 5, 3], &mut rng);
            let w = random_tensor(&[2, 3, 4], &mut rng);
            let bias = random_tensor(&[4], &mut rng);
            for d in [1, 2, 3] {
                assert_grads_close(&[x.clone(), w.clone(), bias.clone()], |_, v| {
                    v[0].causal_conv1d(&v[1], &v[2], d).unwrap().sigmoid().sum()
                });
            }
            let p = random_tensor(&[2, 3], &mut rng);
            let q = random_tensor(&[2, 3], &mut rng);
            let r = random_tensor(&[3], &mut rng);
            assert_grads_close(&[p.clone(), q.clone(), r.clone()], |_, v| {
                let h = v[0].mul(&v[1]).unwrap().add(&v[0]).unwrap().add_bias(&v[2]).unwrap();
                let c = h.concat_channels(&v[1].relu()).unwrap();
                c.slice_channels(1, 4).unwrap().tanh().scale(1.7).sum()
            });
            let s = random_tensor(&[2, 4, 3], &mut rng);
            assert_grads_close(&[s.clone()], |_, v| {
                let r = v[0].reverse_time().unwrap();
                let steps: Vec<_> = (0..4).map(|t| r.select_time(t).unwrap().sigmoid()).collect();
                Var::stack_time(&steps).unwrap().linear(&v[0].tape().constant(Tensor::eye(3))).unwrap().sum()
            });
            let logits = random_tensor(&[4, 5], &mut rng);
            assert_grads_close(&[logits.clone()], |_, v| {
                v[0].cross_entropy(&[0, 4, 2, 1], &[true, false, true, true]).unwrap()
            });
        }
    }
}
