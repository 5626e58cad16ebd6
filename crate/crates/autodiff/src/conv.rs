//! 2-D convolution in NCHW layout and its two adjoints.
//!
//! With `y = conv(x, w)` the three maps
//!
//! * `conv(x, w)`             x-shaped, w-shaped -> y-shaped
//! * `conv_input_grad(gy, w)` y-shaped, w-shaped -> x-shaped
//! * `conv_weight_grad(x, gy)` x-shaped, y-shaped -> w-shaped
//!
//! are the same trilinear contraction with one slot left open, so the
//! backward rule of each is expressed with the other two. That closure is
//! what makes gradients of gradients available.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Ix4, IxDyn};

use crate::tensor::{Array, Op, Tensor};

/// Kernel size, stride and zero padding of a square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    /// Output spatial size of a forward convolution.
    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Spatial size produced by the transposed convolution.
    pub fn transposed_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

fn view4(a: &Array) -> ArrayView4<'_, f64> {
    a.view().into_dimensionality::<Ix4>().expect("expected a 4-D tensor")
}

/// Unfolds `x` into a `[n*oh*ow, c*k*k]` patch matrix.
fn im2col(x: ArrayView4<f64>, g: ConvGeometry) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (g.output_size(h), g.output_size(w));
    let k = g.kernel;
    let cols = c * k * k;
    let mut out = vec![0.0; n * oh * ow * cols];
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * cols;
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = base + iy as usize * w;
                        let dst = row + (ch * k + ky) * k;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out[dst + kx] = xs[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * oh * ow, cols), out).unwrap()
}

/// Adjoint of [`im2col`]: scatters-and-adds patches back onto an image.
fn col2im(cols: ArrayView2<f64>, shape: (usize, usize, usize, usize), g: ConvGeometry) -> Array4<f64> {
    let (n, c, h, w) = shape;
    let (oh, ow) = (g.output_size(h), g.output_size(w));
    let k = g.kernel;
    let ncols = c * k * k;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().unwrap();
    let mut out = vec![0.0; n * c * h * w];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * ncols;
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = base + iy as usize * w;
                        let src = row + (ch * k + ky) * k;
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out[dst + ix as usize] += cs[src + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).unwrap()
}

/// `[n, o, oh, ow]` -> `[n*oh*ow, o]`
fn nchw_to_rows(y: ArrayView4<f64>) -> Array2<f64> {
    let (n, o, oh, ow) = y.dim();
    let p = y.permuted_axes([0, 2, 3, 1]);
    let p = p.as_standard_layout().into_owned();
    p.into_shape_with_order((n * oh * ow, o)).unwrap()
}

/// `[n*oh*ow, o]` -> `[n, o, oh, ow]`
fn rows_to_nchw(rows: Array2<f64>, n: usize, oh: usize, ow: usize) -> Array4<f64> {
    let o = rows.ncols();
    let r = rows.into_shape_with_order((n, oh, ow, o)).unwrap();
    r.permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned()
}

fn weight_matrix(w: ArrayView4<f64>) -> Array2<f64> {
    let (o, c, k, _) = w.dim();
    w.as_standard_layout().into_owned().into_shape_with_order((o, c * k * k)).unwrap()
}

pub(crate) fn conv_raw(x: &Array, w: &Array, g: ConvGeometry) -> Array {
    let x = view4(x);
    let w = view4(w);
    let (n, c, h, wd) = x.dim();
    assert_eq!(w.dim().1, c, "conv: input has {c} channels, weight expects {}", w.dim().1);
    let cols = im2col(x, g);
    let wm = weight_matrix(w);
    let rows = cols.dot(&wm.t());
    rows_to_nchw(rows, n, g.output_size(h), g.output_size(wd)).into_dyn()
}

pub(crate) fn conv_input_grad_raw(gy: &Array, w: &Array, hw: (usize, usize), g: ConvGeometry) -> Array {
    let gy = view4(gy);
    let w = view4(w);
    let (n, o, _, _) = gy.dim();
    let (wo, c, _, _) = w.dim();
    assert_eq!(o, wo, "conv adjoint: {o} channels against weight with {wo} outputs");
    let rows = nchw_to_rows(gy);
    let cols = rows.dot(&weight_matrix(w));
    col2im(cols.view(), (n, c, hw.0, hw.1), g).into_dyn()
}

pub(crate) fn conv_weight_grad_raw(x: &Array, gy: &Array, g: ConvGeometry) -> Array {
    let x = view4(x);
    let gy = view4(gy);
    let c = x.dim().1;
    let o = gy.dim().1;
    let cols = im2col(x, g);
    let rows = nchw_to_rows(gy);
    let wm = rows.t().dot(&cols);
    wm.into_shape_with_order(IxDyn(&[o, c, g.kernel, g.kernel])).unwrap()
}

struct ConvOp {
    geom: ConvGeometry,
}
impl Op for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        let (x, w) = (&p[0], &p[1]);
        let hw = (x.shape()[2], x.shape()[3]);
        vec![Some(conv_input_grad(g, w, hw, self.geom)), Some(conv_weight_grad(x, g, self.geom))]
    }
}

struct ConvInputGradOp {
    geom: ConvGeometry,
}
impl Op for ConvInputGradOp {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        let (gy, w) = (&p[0], &p[1]);
        vec![Some(conv2d(g, w, self.geom)), Some(conv_weight_grad(g, gy, self.geom))]
    }
}

struct ConvWeightGradOp {
    geom: ConvGeometry,
}
impl Op for ConvWeightGradOp {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, _out: &Tensor, g: &Tensor, p: &[Tensor]) -> Vec<Option<Tensor>> {
        let (x, gy) = (&p[0], &p[1]);
        let hw = (x.shape()[2], x.shape()[3]);
        vec![Some(conv_input_grad(gy, g, hw, self.geom)), Some(conv2d(x, g, self.geom))]
    }
}

/// Cross-correlation of `x: [n, c, h, w]` with `w: [o, c, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, geom: ConvGeometry) -> Tensor {
    let v = conv_raw(x.value(), w.value(), geom);
    Tensor::from_op(v, ConvOp { geom }, vec![x.clone(), w.clone()])
}

/// Gradient of [`conv2d`] with respect to its input, for an input of spatial
/// size `hw`.
pub fn conv_input_grad(gy: &Tensor, w: &Tensor, hw: (usize, usize), geom: ConvGeometry) -> Tensor {
    let v = conv_input_grad_raw(gy.value(), w.value(), hw, geom);
    Tensor::from_op(v, ConvInputGradOp { geom }, vec![gy.clone(), w.clone()])
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv_weight_grad(x: &Tensor, gy: &Tensor, geom: ConvGeometry) -> Tensor {
    let v = conv_weight_grad_raw(x.value(), gy.value(), geom);
    Tensor::from_op(v, ConvWeightGradOp { geom }, vec![x.clone(), gy.clone()])
}

/// Transposed convolution of `x: [n, i, h, w]` with `w: [i, o, k, k]`,
/// producing `[n, o, h', w']` with `h' = (h - 1) * stride + k - 2 * padding`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, geom: ConvGeometry) -> Tensor {
    let hw = (geom.transposed_size(x.shape()[2]), geom.transposed_size(x.shape()[3]));
    conv_input_grad(x, w, hw, geom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, g: ConvGeometry) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (o, _, k, _) = w.dim();
        let (oh, ow) = (g.output_size(h), g.output_size(wd));
        let mut y = Array4::zeros((n, o, oh, ow));
        for b in 0..n {
            for oc in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (i * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (j * g.stride + kx) as isize - g.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x[[b, ic, iy as usize, ix as usize]] * w[[oc, ic, ky, kx]];
                                    }
                                }
                            }
                        }
                        y[[b, oc, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: (usize, usize, usize, usize), scale: f64) -> Array4<f64> {
        let mut i = 0.0_f64;
        Array4::from_shape_fn(shape, |_| {
            i += 1.0;
            ((i * 0.7311).sin() * scale * 1000.0).round() / 1000.0
        })
    }

    #[test]
    fn matches_direct_summation() {
        let g = ConvGeometry::new(4, 2, 1);
        let x = ramp((2, 3, 8, 8), 1.0);
        let w = ramp((5, 3, 4, 4), 0.5);
        let fast = conv_raw(&x.clone().into_dyn(), &w.clone().into_dyn(), g);
        let slow = naive_conv(&x, &w, g);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identities_hold() {
        // <conv(x,w), gy> = <x, conv_input_grad(gy,w)> = <w, conv_weight_grad(x,gy)>
        let g = ConvGeometry::new(3, 1, 1);
        let x = ramp((2, 2, 5, 5), 1.0).into_dyn();
        let w = ramp((3, 2, 3, 3), 0.3).into_dyn();
        let gy = ramp((2, 3, 5, 5), 0.9).into_dyn();
        let y = conv_raw(&x, &w, g);
        let lhs: f64 = (&y * &gy).sum();
        let dx = conv_input_grad_raw(&gy, &w, (5, 5), g);
        let dw = conv_weight_grad_raw(&x, &gy, g);
        assert!((lhs - (&x * &dx).sum()).abs() < 1e-10);
        assert!((lhs - (&w * &dw).sum()).abs() < 1e-10);
    }

    #[test]
    fn transposed_doubles_resolution() {
        let g = ConvGeometry::new(4, 2, 1);
        let x = Tensor::constant(ramp((1, 4, 3, 3), 1.0).into_dyn());
        let w = Tensor::constant(ramp((4, 2, 4, 4), 1.0).into_dyn());
        let y = conv_transpose2d(&x, &w, g);
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
    }
}
