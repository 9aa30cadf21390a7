//! Dense row-major tensors with define-by-run reverse-mode differentiation.
//!
//! Every op allocates a fresh node. A node whose inputs include a tracked
//! tensor keeps its parents and a closure mapping the upstream gradient to
//! per-parent gradients; [`Tensor::backward`] walks those nodes in reverse
//! topological order. Only leaf parameters (`requires_grad`) retain a
//! gradient buffer after backward.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    tracked: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Reference-counted handle to a graph node. Cloning shares the node.
pub struct Tensor<T: Scalar = f64> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                requires_grad,
                tracked: requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    /// Constant (non-differentiable) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), false)
    }

    /// Learnable leaf tensor.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![T::zero(); numel(shape)], shape.to_vec(), false).expect("consistent shape")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false).expect("consistent shape")
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], vec![1], false).expect("consistent shape")
    }

    /// 2-D constant from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(data, &[rows.len(), cols])
    }

    fn from_op<F>(data: Vec<T>, shape: Vec<usize>, parents: Vec<Tensor<T>>, backward: F) -> Self
    where
        F: Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        let tracked = parents.iter().any(Tensor::is_tracked);
        let (parents, backward): (Vec<Tensor<T>>, Option<BackwardFn<T>>) = if tracked {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                requires_grad: false,
                tracked,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.node.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// True when gradients flow through this tensor.
    pub fn is_tracked(&self) -> bool {
        self.node.tracked
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.node.shape.clone(), false).expect("consistent shape")
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    /// Resets the gradient buffer to zeros (parameters only).
    pub fn zero_grad(&self) {
        if self.node.requires_grad {
            *self.node.grad.borrow_mut() = Some(vec![T::zero(); self.numel()]);
        }
    }

    /// Replaces the gradient buffer (parameters only).
    pub fn set_grad(&self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.numel() {
            return Err(Error::shape("set_grad", &self.node.shape, &[grad.len()]));
        }
        *self.node.grad.borrow_mut() = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrites values in place. Intended for optimizers and probes.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::shape("set_data", &self.node.shape, &[data.len()]));
        }
        *self.node.data.borrow_mut() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.data.borrow_mut());
    }

    pub fn ptr_eq(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Parameter gradients accumulate
    /// into their buffers until cleared.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.node.shape.clone()));
        }
        if !self.is_tracked() {
            return Ok(());
        }

        // Iterative post-order DFS; the result is a topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.key(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.is_tracked() && !visited.contains_key(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.key(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            if t.node.requires_grad {
                let mut slot = t.node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => *slot = Some(g),
                }
                continue;
            }
            let Some(backward) = &t.node.backward else {
                continue;
            };
            let parent_grads = backward(&g);
            for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.is_tracked() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel());
                match grads.get_mut(&p.key()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.insert(p.key(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// dense kernels

/// a (m×k) · b (k×n)
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// a (m×k) · bᵀ where b is (n×k)
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// aᵀ · b where a is (k×m) and b is (k×n)
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x · sigmoid(x)`
#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

// ---------------------------------------------------------------------------
// ops

impl<T: Scalar> Tensor<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        let x = self.to_vec();
        let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(y, self.shape().to_vec(), vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.iter().zip(&y_saved))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            vec![Some(gx)]
        })
    }

    /// Elementwise binary op where `other` is either the same shape or a
    /// trailing-suffix broadcast (e.g. a bias row added to every row).
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        dfa: impl Fn(T, T) -> T + 'static,
        dfb: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let suffix_ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if !suffix_ok || other.numel() == 0 {
            return Err(Error::shape(op, sa, sb));
        }
        let a = self.to_vec();
        let b = other.to_vec();
        let nb = b.len();
        let out: Vec<T> = a
            .iter()
            .enumerate()
            .map(|(i, &av)| f(av, b[i % nb]))
            .collect();
        Ok(Tensor::from_op(
            out,
            sa.to_vec(),
            vec![self.clone(), other.clone()],
            move |g| {
                let mut ga = Vec::with_capacity(a.len());
                let mut gb = vec![T::zero(); nb];
                for (i, (&gv, &av)) in g.iter().zip(&a).enumerate() {
                    let bv = b[i % nb];
                    ga.push(gv * dfa(av, bv));
                    gb[i % nb] += gv * dfb(av, bv);
                }
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn silu(&self) -> Tensor<T> {
        self.unary(silu, |x, _| {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(T::tanh, |_, y| T::one() - y * y)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(T::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        if self.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::InvalidArgument("log of non-positive value".into()));
        }
        Ok(self.unary(T::ln, |x, _| T::one() / x))
    }

    pub fn sum(&self) -> Tensor<T> {
        let n = self.numel();
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        Ok(self.sum().scale(T::one() / T::from_usize_lossy(n)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, self.shape(), &[])),
        }
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (a, b) = (self.to_vec(), other.to_vec());
        let out = gemm_nn(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = gemm_nt(g, &b, m, n, k);
                let gb = gemm_tn(&a, g, m, k, n);
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    /// `self · otherᵀ`, the layout used by linear layers with `[out, in]` weights.
    pub fn matmul_t(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2("matmul_t")?;
        let (n, k2) = other.dims2("matmul_t")?;
        if k != k2 {
            return Err(Error::shape("matmul_t", self.shape(), other.shape()));
        }
        let (a, b) = (self.to_vec(), other.to_vec());
        let out = gemm_nt(&a, &b, m, k, n);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = gemm_nn(g, &b, m, n, k);
                let gb = gemm_tn(g, &a, m, n, k);
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("transpose")?;
        let x = self.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(out, vec![c, r], vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat_rows(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().is_empty() || p.shape()[1..] != *tail {
                return Err(Error::shape("concat_rows", first.shape(), p.shape()));
            }
            rows += p.shape()[0];
            sizes.push(p.numel());
            data.extend_from_slice(&p.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Ok(Tensor::from_op(data, shape, parts.to_vec(), move |g| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&n| {
                    let s = g[off..off + n].to_vec();
                    off += n;
                    Some(s)
                })
                .collect()
        }))
    }

    /// Concatenates 2-D tensors along columns; row counts must agree.
    pub fn concat_cols(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let (rows, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("concat_cols")?;
            if r != rows {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        let views: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for i in 0..rows {
            for (v, &w) in views.iter().zip(&widths) {
                data.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
        }
        drop(views);
        Ok(Tensor::from_op(data, vec![rows, total], parts.to_vec(), move |g| {
            let mut out: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
            for i in 0..rows {
                let mut off = i * total;
                for (o, &w) in out.iter_mut().zip(&widths) {
                    o.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        }))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::shape("slice_rows", shape, &[start, len]));
        }
        let stride = numel(&shape[1..]);
        let total = self.numel();
        let data = self.data()[start * stride..(start + len) * stride].to_vec();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); total];
            gx[start * stride..(start + len) * stride].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2("slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", self.shape(), &[start, len]));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        drop(x);
        Ok(Tensor::from_op(data, vec![r, len], vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            vec![Some(gx)]
        }))
    }

    /// Embedding lookup: rows of a `[vocab, dim]` table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let (v, d) = self.dims2("gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows: index {bad} out of range for table of {v} rows"
            )));
        }
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&table[i * d..(i + 1) * d]);
        }
        drop(table);
        let ids = ids.to_vec();
        Ok(Tensor::from_op(data, vec![ids.len(), d], vec![self.clone()], move |g| {
            let mut gt = vec![T::zero(); v * d];
            for (row, &i) in ids.iter().enumerate() {
                for (a, &b) in gt[i * d..(i + 1) * d].iter_mut().zip(&g[row * d..(row + 1) * d]) {
                    *a += b;
                }
            }
            vec![Some(gt)]
        }))
    }

    /// Normalizes each row of a 2-D tensor, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let (rows, d) = self.dims2("layer_norm")?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gamma.shape()));
        }
        let x = self.to_vec();
        let gm = gamma.to_vec();
        let bt = beta.to_vec();
        let dn = T::from_usize_lossy(d);
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for i in 0..rows {
            let row = &x[i * d..(i + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gm[j] + bt[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![rows, d],
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let mut gx = vec![T::zero(); rows * d];
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                for i in 0..rows {
                    let gr = &g[i * d..(i + 1) * d];
                    let hr = &xhat[i * d..(i + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                        let dh = gr[j] * gm[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= dn;
                    mean_dh_h /= dn;
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        gx[i * d + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        ))
    }

    /// Row-wise softmax of a 2-D tensor. Columns flagged in `key_mask`
    /// receive exactly zero weight.
    pub fn masked_softmax(&self, key_mask: Option<&[bool]>) -> Result<Tensor<T>> {
        let (rows, cols) = self.dims2("masked_softmax")?;
        if let Some(m) = key_mask {
            if m.len() != cols {
                return Err(Error::shape("masked_softmax", self.shape(), &[m.len()]));
            }
            if m.iter().all(|&b| b) {
                return Err(Error::InvalidArgument(
                    "masked_softmax: every key is masked".into(),
                ));
            }
        }
        let masked = |j: usize| key_mask.is_some_and(|m| m[j]);
        let x = self.data();
        let mut y = vec![T::zero(); rows * cols];
        for i in 0..rows {
            let row = &x[i * cols..(i + 1) * cols];
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if !masked(j) && v > mx {
                    mx = v;
                }
            }
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if !masked(j) {
                    let e = (v - mx).exp();
                    y[i * cols + j] = e;
                    z += e;
                }
            }
            for v in &mut y[i * cols..(i + 1) * cols] {
                *v /= z;
            }
        }
        drop(x);
        let y_saved = y.clone();
        Ok(Tensor::from_op(y, vec![rows, cols], vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); rows * cols];
            for i in 0..rows {
                let yr = &y_saved[i * cols..(i + 1) * cols];
                let gr = &g[i * cols..(i + 1) * cols];
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..cols {
                    gx[i * cols + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Expands each element of a 2-D `[rows, n]` tensor into `grid.len()`
    /// bump responses `1 - tanh((x - g) / denominator)^exponent`, giving
    /// `[rows, n * grid.len()]` laid out input-major.
    pub fn switch_basis(&self, grid: &[T], denominator: T, exponent: i32) -> Result<Tensor<T>> {
        let (rows, n) = self.dims2("switch_basis")?;
        if exponent < 1 || denominator <= T::zero() {
            return Err(Error::InvalidArgument(
                "switch_basis needs exponent >= 1 and a positive denominator".into(),
            ));
        }
        let gsz = grid.len();
        let inv = T::one() / denominator;
        let x = self.data();
        let mut th = vec![T::zero(); rows * n * gsz];
        let mut out = vec![T::zero(); rows * n * gsz];
        for (idx, &xv) in x.iter().enumerate() {
            for (k, &gk) in grid.iter().enumerate() {
                let t = ((xv - gk) * inv).tanh();
                th[idx * gsz + k] = t;
                out[idx * gsz + k] = T::one() - t.powi(exponent);
            }
        }
        drop(x);
        let e = T::from_i32(exponent).expect("small integer");
        Ok(Tensor::from_op(out, vec![rows, n * gsz], vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); rows * n];
            for (idx, slot) in gx.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..gsz {
                    let t = th[idx * gsz + k];
                    let d = -e * t.powi(exponent - 1) * (T::one() - t * t) * inv;
                    acc += g[idx * gsz + k] * d;
                }
                *slot = acc;
            }
            vec![Some(gx)]
        }))
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mul(&Tensor::new(mask, self.shape())?)
    }
}
