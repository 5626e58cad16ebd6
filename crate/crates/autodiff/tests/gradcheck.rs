use autodiff::{conv2d, conv_transpose2d, grad, no_grad, Array, ConvGeometry, Tensor};
use ndarray::IxDyn;

fn pseudo(shape: &[usize], seed: f64) -> Array {
    let mut i = 0.0;
    Array::from_shape_fn(IxDyn(shape), |_| {
        i += 1.0;
        (i * 0.618 + seed).sin()
    })
}

/// Central-difference gradient of a scalar function of one array.
fn numeric_grad(f: &dyn Fn(&Array) -> f64, x: &Array, h: f64) -> Array {
    let mut g = Array::zeros(x.raw_dim());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.as_slice_mut().unwrap()[i];
        xp.as_slice_mut().unwrap()[i] = orig + h;
        let fp = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig - h;
        let fm = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig;
        g.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * h);
    }
    g
}

fn assert_close(analytic: &Array, numeric: &Array, rel: f64) {
    let scale = numeric.iter().fold(1e-3_f64, |m, v| m.max(v.abs()));
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        assert!((a - n).abs() <= rel * scale, "analytic {a} vs numeric {n} (scale {scale})");
    }
}

fn check_unary(f: impl Fn(&Tensor) -> Tensor, x: Array) {
    let eval = |v: &Array| no_grad(|| f(&Tensor::constant(v.clone())).sum_all().item());
    let xt = Tensor::variable(x.clone());
    let g = grad(&f(&xt).sum_all(), &[&xt], false).remove(0);
    assert_close(g.value(), &numeric_grad(&eval, &x, 1e-5), 1e-6);
}

#[test]
fn elementwise_and_reduction_gradients() {
    let x = pseudo(&[3, 4], 0.3).mapv(|v| v + 1.5);
    let c = Tensor::constant(pseudo(&[4], 1.1));
    check_unary(|t| t.mul(t).add(&c), x.clone());
    check_unary(|t| t.div(&t.sum_axes(&[1])), x.clone());
    check_unary(|t| t.sqrt().exp().ln(), x.clone());
    check_unary(|t| t.tanh().scale(3.0).add_scalar(1.0), x.clone());
    check_unary(|t| t.sub(&c).leaky_relu(0.2), x.clone());
    check_unary(|t| t.softmax().ln(), x.clone());
    check_unary(|t| t.matmul(&t.t()), x.clone());
    check_unary(|t| t.mean_axes(&[0]).broadcast_to(&[5, 4]).reshape(&[20]).square(), x.clone());
    check_unary(|t| Tensor::concat(&[t.clone(), t.scale(2.0)], 1).narrow(1, 2, 4).square(), x);
}

#[test]
fn convolution_gradients() {
    let g = ConvGeometry::new(4, 2, 1);
    let w = Tensor::constant(pseudo(&[3, 2, 4, 4], 0.2));
    let x = pseudo(&[2, 2, 6, 6], 0.9);
    check_unary(|t| conv2d(t, &w, g).square(), x.clone());

    let xc = Tensor::constant(x);
    check_unary(|t| conv2d(&xc, t, g).square(), pseudo(&[3, 2, 4, 4], 0.2));

    let wt = Tensor::constant(pseudo(&[2, 3, 4, 4], 0.5));
    check_unary(|t| conv_transpose2d(t, &wt, g).square(), pseudo(&[1, 2, 3, 3], 0.1));
}

/// Second-order check: the gradient of a gradient penalty with respect to
/// parameters against finite differences of the penalty itself.
#[test]
fn gradient_of_input_gradient_norm() {
    let geom = ConvGeometry::new(4, 2, 1);
    let x = Tensor::constant(pseudo(&[2, 2, 8, 8], 0.4));
    let w2 = Tensor::constant(pseudo(&[1, 3], 0.8));

    let penalty = |w: &Tensor| -> Tensor {
        let xi = Tensor::variable(x.value().clone());
        let h = conv2d(&xi, w, geom);
        let h = h.sub(&h.mean_axes(&[2, 3])).leaky_relu(0.2).tanh();
        let pooled = h.mean_axes(&[2, 3]).reshape(&[2, 3]);
        let score = pooled.matmul(&w2.t()).sum_all();
        let gx = grad(&score, &[&xi], true).remove(0);
        let norm = gx.square().sum_axes(&[1, 2, 3]).sqrt();
        norm.add_scalar(-1.0).square().mean_all()
    };

    let w0 = pseudo(&[3, 2, 4, 4], 0.7);
    let wv = Tensor::variable(w0.clone());
    let analytic = grad(&penalty(&wv), &[&wv], false).remove(0);
    let numeric = numeric_grad(&|w: &Array| penalty(&Tensor::variable(w.clone())).item(), &w0, 1e-5);
    assert_close(analytic.value(), &numeric, 1e-5);
}

#[test]
fn unreachable_inputs_get_zeros() {
    let a = Tensor::variable(pseudo(&[3], 0.0));
    let b = Tensor::variable(pseudo(&[2], 0.0));
    let out = a.square().sum_all();
    let g = grad(&out, &[&a, &b], false);
    assert_eq!(g[1].to_vec(), vec![0.0, 0.0]);
}

#[test]
fn no_grad_records_nothing() {
    let a = Tensor::variable(pseudo(&[3], 0.0));
    let out = no_grad(|| a.square());
    assert!(!out.requires_grad());
}
