use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[n, d] + [1, d]`, the bias is broadcast across rows.
    AddRow(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    /// Elementwise product with a fixed mask that carries no gradient.
    MaskMul(NodeId, Vec<f64>),
    Relu(NodeId),
    Softmax(NodeId),
    Clamp(NodeId, f64, f64),
    Ln(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Picks column `idx[r]` from every row `r`, producing `[n, 1]`.
    Gather(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    /// Column `c` of an `[n, k]` matrix as `[n, 1]`.
    Column(NodeId, usize),
    /// Replicates an `[n, 1]` column `k` times into `[n, k]`.
    Tile(NodeId, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Dynamic record of executed operations.
///
/// The tape is rebuilt for every forward pass, so the recorded graph may
/// differ between samples and iterations. Parameters are bound through
/// [`Tape::param`]; a parameter bound twice returns the same node, which
/// makes gradient contributions from shared uses accumulate.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, NodeId>,
}

/// Per-node gradients produced by [`Tape::backward_nodes`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bound: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, `None` if it is unreachable.
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.bound
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.wrt(*n))
    }

    /// Writes the gradient of every parameter into its tensor's grad buffer.
    /// Parameters the loss never touched receive zeros.
    pub fn write_into(&self, store: &mut ParamStore) {
        store.zero_grads();
        for &(pid, nid) in &self.bound {
            if pid.0 >= store.len() {
                continue;
            }
            if let Some(g) = self.wrt(nid) {
                let _ = store.get_mut(pid).set_grad(g.to_vec());
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a value that receives no parameter gradient of its own.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Copy of `x` cut off from the backward pass.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.bound.get(&id) {
            return n;
        }
        let mut v = store.get(id).clone();
        v.clear_grad();
        let n = self.push(v, Op::Param);
        self.bound.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let (n, k, m) = (va.rows(), va.cols(), vb.cols());
        let out = matmul_raw(va.data(), vb.data(), n, k, m);
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.shape().len() != 2 || vb.len() != vx.cols() {
            return Err(shape_err("add_row", vx, vb));
        }
        let c = vx.cols();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + vb.data()[i % c])
            .collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, bias)))
    }

    /// Sum of any number of equally shaped tensors.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("add_n needs at least one operand".into()))?;
        let mut acc = self.value(*first).clone();
        acc.clear_grad();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != acc.shape() {
                return Err(shape_err("add_n", &acc, v));
            }
            acc.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.push(acc, Op::AddN(xs.to_vec())))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|a| f(*a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |a| a + c, Op::AddScalar(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn mask_mul(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != mask.len() {
            return Err(Error::Shape {
                op: "mask_mul",
                left: v.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MaskMul(x, mask)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::ln, Op::Ln(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(x, |a| a.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Row-wise softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (n, k) = v.as_rank2();
        if k < 2 {
            return Err(Error::Contract(format!(
                "softmax needs at least two classes, got shape {:?}",
                v.shape()
            )));
        }
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let row = v.row_slice(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, a) in out[r * k..(r + 1) * k].iter_mut().zip(row) {
                *o = (a - mx).exp();
                z += *o;
            }
            out[r * k..(r + 1) * k].iter_mut().for_each(|o| *o /= z);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(x)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let (n, k) = v.as_rank2();
        if idx.len() != n || idx.iter().any(|&i| i >= k) {
            return Err(Error::Shape {
                op: "gather",
                left: v.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect();
        let t = Tensor::matrix(n, 1, data)?;
        Ok(self.push(t, Op::Gather(x, idx.to_vec())))
    }

    pub fn column(&mut self, x: NodeId, c: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (n, k) = v.as_rank2();
        if c >= k {
            return Err(Error::Shape {
                op: "column",
                left: v.shape().to_vec(),
                right: vec![c],
            });
        }
        let data = (0..n).map(|r| v.get(r, c)).collect();
        let t = Tensor::matrix(n, 1, data)?;
        Ok(self.push(t, Op::Column(x, c)))
    }

    pub fn tile(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.cols() != 1 {
            return Err(Error::Shape {
                op: "tile",
                left: v.shape().to_vec(),
                right: vec![k],
            });
        }
        let n = v.rows();
        let data = (0..n * k).map(|i| v.data()[i / k]).collect();
        let t = Tensor::matrix(n, k, data)?;
        Ok(self.push(t, Op::Tile(x, k)))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat_cols needs at least one operand".into()))?;
        let n = self.value(*first).rows();
        let mut total = 0;
        for &x in xs {
            let v = self.value(x);
            if v.rows() != n {
                return Err(shape_err("concat_cols", self.value(*first), v));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &x in xs {
                data.extend_from_slice(self.value(x).row_slice(r));
            }
        }
        let t = Tensor::matrix(n, total, data)?;
        Ok(self.push(t, Op::ConcatCols(xs.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every node.
    pub fn backward_nodes(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(up) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                    let bt = transpose(vb.data(), k, m);
                    let da = matmul_raw(&up, &bt, n, m, k);
                    let at = transpose(va.data(), n, k);
                    let db = matmul_raw(&at, &up, k, n, m);
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &up);
                    accumulate(&mut grads[b.0], &up);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &up);
                    let neg: Vec<f64> = up.iter().map(|g| -g).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = up.iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = up.iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::AddRow(x, b) => {
                    let c = out.cols();
                    let mut db = vec![0.0; c];
                    for (j, g) in up.iter().enumerate() {
                        db[j % c] += g;
                    }
                    accumulate(&mut grads[x.0], &up);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        accumulate(&mut grads[x.0], &up);
                    }
                }
                Op::Scale(x, c) => {
                    let d: Vec<f64> = up.iter().map(|g| g * c).collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::AddScalar(x) => accumulate(&mut grads[x.0], &up),
                Op::MaskMul(x, mask) => {
                    let d: Vec<f64> = up.iter().zip(mask).map(|(g, m)| g * m).collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    let d: Vec<f64> = up
                        .iter()
                        .zip(vx.data())
                        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Softmax(x) => {
                    let (n, k) = out.as_rank2();
                    let mut d = vec![0.0; n * k];
                    for r in 0..n {
                        let y = out.row_slice(r);
                        let g = &up[r * k..(r + 1) * k];
                        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                        for j in 0..k {
                            d[r * k + j] = y[j] * (g[j] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Clamp(x, lo, hi) => {
                    let vx = self.value(*x);
                    let d: Vec<f64> = up
                        .iter()
                        .zip(vx.data())
                        .map(|(g, a)| if *a >= *lo && *a <= *hi { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Ln(x) => {
                    let vx = self.value(*x);
                    let d: Vec<f64> = up.iter().zip(vx.data()).map(|(g, a)| g / a).collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Exp(x) => {
                    let d: Vec<f64> = up.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], &vec![up[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], &vec![up[0] / n as f64; n]);
                }
                Op::Gather(x, idx) => {
                    let k = self.value(*x).cols();
                    let mut d = vec![0.0; idx.len() * k];
                    for (r, &c) in idx.iter().enumerate() {
                        d[r * k + c] = up[r];
                    }
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Column(x, c) => {
                    let (n, k) = self.value(*x).as_rank2();
                    let mut d = vec![0.0; n * k];
                    for r in 0..n {
                        d[r * k + c] = up[r];
                    }
                    accumulate(&mut grads[x.0], &d);
                }
                Op::Tile(x, k) => {
                    let n = out.rows();
                    let d: Vec<f64> = (0..n).map(|r| up[r * k..(r + 1) * k].iter().sum()).collect();
                    accumulate(&mut grads[x.0], &d);
                }
                Op::ConcatCols(xs) => {
                    let n = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for x in xs {
                        let c = self.value(*x).cols();
                        let mut d = Vec::with_capacity(n * c);
                        for r in 0..n {
                            d.extend_from_slice(&up[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads[x.0], &d);
                        offset += c;
                    }
                }
            }
            grads[i] = Some(up);
        }

        let mut bound: Vec<(ParamId, NodeId)> = self.bound.iter().map(|(p, n)| (*p, *n)).collect();
        bound.sort();
        Ok(Gradients { grads, bound })
    }

    /// Runs the reverse sweep and writes parameter gradients into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let g = self.backward_nodes(loss)?;
        g.write_into(store);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        t.constant(Tensor::matrix(rows, cols, data.to_vec()).unwrap())
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = leaf(&mut t, 2, 2, &[1., 2., 3., 4.]);
        let i = leaf(&mut t, 2, 2, &[1., 0., 0., 1.]);
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_inner_product() {
        let mut t = Tape::new();
        let a = leaf(&mut t, 1, 2, &[1., 2.]);
        let b = leaf(&mut t, 2, 1, &[3., 4.]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[1, 1]);
        assert_eq!(t.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut t = Tape::new();
        let z = leaf(&mut t, 2, 3, &[0.; 6]);
        let b = leaf(&mut t, 3, 2, &[1., -2., 3.5, 4., 5., 6.]);
        let c = t.matmul(z, b).unwrap();
        assert!(t.value(c).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = leaf(&mut t, 2, 3, &[0.; 6]);
        let b = leaf(&mut t, 2, 3, &[0.; 6]);
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 3, &[-1., 0., 2.]);
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0., 0., 2.]);

        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 2, &[-1., 2.]);
        let y = t.relu(x);
        let s = t.sum(y);
        let g = t.backward_nodes(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0., 1.]);

        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 3, &[0.5, 1., 7.]);
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.5, 1., 7.]);
    }

    #[test]
    fn softmax_closed_forms() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 2, 2, &[0., 0., 9f64.ln(), 1f64.ln()]);
        let y = t.softmax(x).unwrap();
        let v = t.value(y).data();
        assert_eq!(&v[..2], &[0.5, 0.5]);
        assert!((v[2] - 0.9).abs() < 1e-15);
        assert!((v[3] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_single_class() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 2, 1, &[0., 1.]);
        assert!(t.softmax(x).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 2, 3, &[1., -2., 3., 0.5, 0., 9.]);
        let s = t.sum(x);
        let g = t.backward_nodes(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.; 6]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 1, &[3.]);
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y);
        let g = t.backward_nodes(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let build = |twice: bool| {
            let mut t = Tape::new();
            let x = leaf(&mut t, 1, 3, &[0.3, -1.2, 2.0]);
            let e = t.exp(x);
            let f = t.sum(e);
            let loss = if twice { t.add(f, f).unwrap() } else { f };
            let g = t.backward_nodes(loss).unwrap();
            g.wrt(x).unwrap().to_vec()
        };
        let once = build(false);
        let twice = build(true);
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = leaf(&mut t, 1, 2, &[1., 2.]);
        assert!(matches!(t.backward_nodes(x), Err(Error::Contract(_))));
    }

    #[test]
    fn untouched_parameters_get_zero() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::row(&[1., 2.]), true);
        let b = store.register("b", Tensor::row(&[5.]), true);
        let mut t = Tape::new();
        let na = t.param(&store, a);
        let s = t.sum(na);
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.get(a).grad().unwrap(), &[1., 1.]);
        assert_eq!(store.get(b).grad().unwrap(), &[0.]);
    }

    #[test]
    fn binding_a_param_twice_reuses_node() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::row(&[2.]), true);
        let mut t = Tape::new();
        let n1 = t.param(&store, a);
        let n2 = t.param(&store, a);
        assert_eq!(n1, n2);
        let p = t.mul(n1, n2).unwrap();
        let s = t.sum(p);
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.get(a).grad().unwrap(), &[4.]);
    }
}
