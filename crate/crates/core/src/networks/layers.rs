//! Parameterised building blocks. Each `init_*` registers arrays under a
//! name prefix; the matching forward function reads them back from a
//! [`Bound`].

use autodiff::{conv2d, conv_transpose2d, ConvGeometry, Tensor};
use rand::Rng;

use super::params::{Bound, ParamSet};

pub const DOWN: ConvGeometry = ConvGeometry { kernel: 4, stride: 2, padding: 1 };
pub const UP: ConvGeometry = ConvGeometry { kernel: 4, stride: 2, padding: 1 };
pub const SAME3: ConvGeometry = ConvGeometry { kernel: 3, stride: 1, padding: 1 };

const NORM_EPS: f64 = 1e-5;
pub const LEAK: f64 = 0.2;

pub fn init_conv<R: Rng>(p: &mut ParamSet, name: &str, c_in: usize, c_out: usize, g: ConvGeometry, rng: &mut R) {
    let fan_in = c_in * g.kernel * g.kernel;
    p.init_normal(&format!("{name}.weight"), &[c_out, c_in, g.kernel, g.kernel], (2.0 / fan_in as f64).sqrt(), rng);
    p.init_zeros(&format!("{name}.bias"), &[c_out]);
}

pub fn conv(b: &Bound, name: &str, x: &Tensor, g: ConvGeometry) -> Tensor {
    let w = b.get(&format!("{name}.weight"));
    let bias = b.get(&format!("{name}.bias"));
    let out_ch = bias.shape()[0];
    conv2d(x, w, g).add(&bias.reshape(&[1, out_ch, 1, 1]))
}

pub fn init_conv_transpose<R: Rng>(
    p: &mut ParamSet,
    name: &str,
    c_in: usize,
    c_out: usize,
    g: ConvGeometry,
    rng: &mut R,
) {
    // each output pixel sees (k / stride)^2 taps per input channel
    let taps = (g.kernel / g.stride).max(1).pow(2);
    let fan_in = c_in * taps;
    p.init_normal(&format!("{name}.weight"), &[c_in, c_out, g.kernel, g.kernel], (2.0 / fan_in as f64).sqrt(), rng);
    p.init_zeros(&format!("{name}.bias"), &[c_out]);
}

pub fn conv_transpose(b: &Bound, name: &str, x: &Tensor, g: ConvGeometry) -> Tensor {
    let w = b.get(&format!("{name}.weight"));
    let bias = b.get(&format!("{name}.bias"));
    let out_ch = bias.shape()[0];
    conv_transpose2d(x, w, g).add(&bias.reshape(&[1, out_ch, 1, 1]))
}

pub fn init_linear<R: Rng>(p: &mut ParamSet, name: &str, n_in: usize, n_out: usize, rng: &mut R) {
    p.init_normal(&format!("{name}.weight"), &[n_in, n_out], (1.0 / n_in as f64).sqrt(), rng);
    p.init_zeros(&format!("{name}.bias"), &[n_out]);
}

/// `x: [n, in] -> [n, out]`
pub fn linear(b: &Bound, name: &str, x: &Tensor) -> Tensor {
    let w = b.get(&format!("{name}.weight"));
    let bias = b.get(&format!("{name}.bias"));
    x.matmul(w).add(bias)
}

/// Per-sample, per-channel normalisation over the spatial axes, without a
/// learned affine.
pub fn instance_norm(x: &Tensor) -> Tensor {
    let centered = x.sub(&x.mean_axes(&[2, 3]));
    let var = centered.square().mean_axes(&[2, 3]);
    centered.div(&var.add_scalar(NORM_EPS).sqrt())
}

/// Global average pooling `[n, c, h, w] -> [n, c]`.
pub fn global_pool(x: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    x.mean_axes(&[2, 3]).reshape(&[n, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]);
        let y = instance_norm(&x);
        let v = y.value();
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).map(|i| v[[0, c, i / 2, i % 2]]).collect();
            let m: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn conv_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        init_conv(&mut p, "c", 3, 8, DOWN, &mut rng);
        init_conv_transpose(&mut p, "t", 8, 3, UP, &mut rng);
        let b = p.bind(false);
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        let h = conv(&b, "c", &x, DOWN);
        assert_eq!(h.shape(), &[2, 8, 8, 8]);
        assert_eq!(conv_transpose(&b, "t", &h, UP).shape(), &[2, 3, 16, 16]);
    }
}
