//! Differentiable elementwise, reduction, shape and matrix operations.

use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{Axis, Ix2, IxDyn, Slice};

use crate::tensor::{Array, Op, Tensor};

fn sum_to_shape(value: &Array, target: &[usize]) -> Array {
    let mut out = value.clone();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for (axis, &t) in target.iter().enumerate() {
        if t == 1 && out.shape()[axis] != 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    assert_eq!(out.shape(), target, "cannot reduce {:?} to {:?}", value.shape(), target);
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

fn binary_value(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        return out;
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = av.to_owned();
    out.zip_mut_with(&bv, |x, &y| *x = f(*x, y));
    out
}

struct AddOp;
impl Op for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.sum_to(p[0].shape())), Some(g.sum_to(p[1].shape()))]
    }
}

struct SubOp;
impl Op for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.sum_to(p[0].shape())), Some(g.neg().sum_to(p[1].shape()))]
    }
}

struct MulOp;
impl Op for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.mul(&p[1]).sum_to(p[0].shape())), Some(g.mul(&p[0]).sum_to(p[1].shape()))]
    }
}

struct DivOp;
impl Op for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        let ga = g.div(&p[1]);
        let gb = ga.mul(out).neg();
        vec![Some(ga.sum_to(p[0].shape())), Some(gb.sum_to(p[1].shape()))]
    }
}

struct ScaleOp(f64);
impl Op for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.scale(self.0))]
    }
}

struct AddScalarOp;
impl Op for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone())]
    }
}

struct ExpOp;
impl Op for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.mul(out))]
    }
}

struct LnOp;
impl Op for LnOp {
    fn name(&self) -> &'static str {
        "ln"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.div(&p[0]))]
    }
}

struct SqrtOp;
impl Op for SqrtOp {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.div(out).scale(0.5))]
    }
}

struct TanhOp;
impl Op for TanhOp {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        let slope = out.mul(out).neg().add_scalar(1.0);
        vec![Some(g.mul(&slope))]
    }
}

/// Piecewise-linear ops: the backward pass multiplies by a frozen 0/1 (or
/// slope) mask, so second derivatives vanish almost everywhere.
struct MaskOp {
    name: &'static str,
    mask: Tensor,
}
impl Op for MaskOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.mul(&self.mask))]
    }
}

struct SumAxesOp;
impl Op for SumAxesOp {
    fn name(&self) -> &'static str {
        "sum_axes"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.broadcast_to(p[0].shape()))]
    }
}

struct SumToOp;
impl Op for SumToOp {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.broadcast_to(p[0].shape()))]
    }
}

struct BroadcastOp;
impl Op for BroadcastOp {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.sum_to(p[0].shape()))]
    }
}

struct ReshapeOp;
impl Op for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.reshape(p[0].shape()))]
    }
}

struct TransposeOp;
impl Op for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, _p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.t())]
    }
}

struct MatmulOp;
impl Op for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.matmul(&p[1].t())), Some(p[0].t().matmul(g))]
    }
}

struct ConcatOp {
    axis: usize,
}
impl Op for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        let mut start = 0;
        p.iter()
            .map(|t| {
                let len = t.shape()[self.axis];
                let piece = g.narrow(self.axis, start, len);
                start += len;
                Some(piece)
            })
            .collect()
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}
impl Op for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.embed(self.axis, self.start, p[0].shape()[self.axis]))]
    }
}

struct EmbedOp {
    axis: usize,
    start: usize,
}
impl Op for EmbedOp {
    fn name(&self) -> &'static str {
        "embed"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        vec![Some(g.narrow(self.axis, self.start, p[0].shape()[self.axis]))]
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let v = binary_value(self.value(), other.value(), |a, b| a + b);
        Tensor::from_op(v, AddOp, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let v = binary_value(self.value(), other.value(), |a, b| a - b);
        Tensor::from_op(v, SubOp, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let v = binary_value(self.value(), other.value(), |a, b| a * b);
        Tensor::from_op(v, MulOp, vec![self.clone(), other.clone()])
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        let v = binary_value(self.value(), other.value(), |a, b| a / b);
        Tensor::from_op(v, DivOp, vec![self.clone(), other.clone()])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_op(self.value() * c, ScaleOp(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        Tensor::from_op(self.value() + c, AddScalarOp, vec![self.clone()])
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn exp(&self) -> Tensor {
        Tensor::from_op(self.value().mapv(f64::exp), ExpOp, vec![self.clone()])
    }

    pub fn ln(&self) -> Tensor {
        Tensor::from_op(self.value().mapv(f64::ln), LnOp, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Tensor {
        Tensor::from_op(self.value().mapv(f64::sqrt), SqrtOp, vec![self.clone()])
    }

    pub fn tanh(&self) -> Tensor {
        Tensor::from_op(self.value().mapv(f64::tanh), TanhOp, vec![self.clone()])
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let x = self.value();
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { slope });
        let out = x * &mask;
        let op = MaskOp { name: "leaky_relu", mask: Tensor::constant(mask) };
        Tensor::from_op(out, op, vec![self.clone()])
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    /// Elementwise `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        let x = self.value();
        let mask = x.mapv(|v| if v > floor { 1.0 } else { 0.0 });
        let out = x.mapv(|v| v.max(floor));
        let op = MaskOp { name: "clamp_min", mask: Tensor::constant(mask) };
        Tensor::from_op(out, op, vec![self.clone()])
    }

    /// Sums over `axes`, keeping them as length-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Tensor {
        let mut v = self.value().clone();
        for &axis in axes {
            v = v.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
        Tensor::from_op(v, SumAxesOp, vec![self.clone()])
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Tensor {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / count as f64)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.sum_axes(&axes).reshape(&[])
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Reduces a broadcast result back to `shape` by summation.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        Tensor::from_op(sum_to_shape(self.value(), shape), SumToOp, vec![self.clone()])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", self.shape(), shape))
            .to_owned();
        Tensor::from_op(v, BroadcastOp, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {:?} to {:?}", self.shape(), shape));
        Tensor::from_op(v, ReshapeOp, vec![self.clone()])
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Tensor {
        assert_eq!(self.ndim(), 2, "t() expects a matrix");
        let v = self.value().t().as_standard_layout().into_owned();
        Tensor::from_op(v, TransposeOp, vec![self.clone()])
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let a = self.value().view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-D");
        let b = other.value().view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-D");
        let v = a.dot(&b).into_dyn();
        Tensor::from_op(v, MatmulOp, vec![self.clone(), other.clone()])
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shapes agree");
        Tensor::from_op(v, ConcatOp { axis }, parts.to_vec())
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let v = self.value().slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned();
        Tensor::from_op(v, NarrowOp { axis, start }, vec![self.clone()])
    }

    /// Zero-pads along `axis` so this tensor occupies `start..` of a length
    /// `total` dimension. Adjoint of [`Tensor::narrow`].
    pub fn embed(&self, axis: usize, start: usize, total: usize) -> Tensor {
        let mut shape = self.shape().to_vec();
        let len = shape[axis];
        shape[axis] = total;
        let mut v = Array::zeros(IxDyn(&shape));
        v.slice_axis_mut(Axis(axis), Slice::from(start..start + len)).assign(self.value());
        Tensor::from_op(v, EmbedOp { axis, start }, vec![self.clone()])
    }

    /// Row-wise softmax over the last axis of a matrix.
    pub fn softmax(&self) -> Tensor {
        let last = self.ndim() - 1;
        let max = self
            .value()
            .map_axis(Axis(last), |row| row.fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .insert_axis(Axis(last));
        let shifted = self.sub(&Tensor::constant(max));
        let e = shifted.exp();
        e.div(&e.sum_axes(&[last]))
    }
}

macro_rules! impl_binary {
    ($trait:ident, $method:ident) => {
        impl $trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(self, rhs)
            }
        }
    };
}

impl_binary!(Add, add);
impl_binary!(Sub, sub);
impl_binary!(Mul, mul);
impl_binary!(Div, div);

impl Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.scale(rhs)
    }
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_to_reduces_broadcast_axes() {
        let a = Array::ones(IxDyn(&[2, 3, 4]));
        let r = sum_to_shape(&a, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert!(r.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn broadcasting_binary_values() {
        let a = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[3], vec![10.0, 20.0, 30.0]);
        let c = a.add(&b);
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 1000.0, 1000.0, 1000.0]);
        let s = x.softmax();
        for row in s.value().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((s.value()[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_and_embed_are_adjoint_shapes() {
        let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let n = x.narrow(1, 1, 2);
        assert_eq!(n.to_vec(), vec![2.0, 3.0]);
        let e = n.embed(1, 1, 4);
        assert_eq!(e.to_vec(), vec![0.0, 2.0, 3.0, 0.0]);
    }
}
