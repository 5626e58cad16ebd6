//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use autodiff::{conv2d, grad, Array, ConvGeometry, Tensor};
use face_aging::config::TrainingConfig;
use face_aging::data::toy::ToyRenderer;
use face_aging::data::LabeledSample;
use face_aging::decomposition::decompose_batch;
use face_aging::losses;
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    Array::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Central differences with step `h` of a scalar function of one array.
pub fn numeric_grad(f: &dyn Fn(&Array) -> f64, x: &Array, h: f64) -> Array {
    let mut g = Array::zeros(x.raw_dim());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.as_slice().unwrap()[i];
        xp.as_slice_mut().unwrap()[i] = orig + h;
        let fp = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig - h;
        let fm = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig;
        g.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest absolute difference relative to the largest numeric component.
pub fn relative_error(analytic: &Array, numeric: &Array) -> f64 {
    let scale = numeric.iter().fold(1e-8_f64, |m, v| m.max(v.abs()));
    let worst = analytic.iter().zip(numeric).fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    worst / scale
}

/// Analytic vs central-difference gradient of `f` at `x`.
pub fn gradient_error(f: &dyn Fn(&Tensor) -> Tensor, x: &Array) -> f64 {
    let eval = |v: &Array| f(&Tensor::constant(v.clone())).item();
    let xt = Tensor::variable(x.clone());
    let g = grad(&f(&xt), &[&xt], false).remove(0);
    relative_error(g.value(), &numeric_grad(&eval, x, 1e-5))
}

fn unit_rows(a: &Array) -> Array {
    let mut out = a.clone();
    for mut row in out.outer_iter_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / n);
    }
    out
}

/// Finite-difference checks for every loss term, named as in the loss
/// report. Returns `(term, relative error)`.
pub fn loss_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let mut out = Vec::new();

    // adv: critic loss with penalty, differentiated w.r.t. critic weights
    let real = Tensor::constant(random_array(&[n, 2, 4, 4], &mut rng));
    let fake = Tensor::constant(random_array(&[n, 2, 4, 4], &mut rng));
    let mix: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let w0 = random_array(&[3, 2, 3, 3], &mut rng);
    let v = Tensor::constant(random_array(&[1, 3], &mut rng));
    let geo = ConvGeometry::new(3, 2, 1);
    let adv = |w: &Tensor| {
        let critic = |x: &Tensor| -> face_aging::Result<Tensor> {
            let h = conv2d(x, w, geo).tanh().mean_axes(&[2, 3]).reshape(&[x.shape()[0], 3]);
            Ok(h.mul(&v).sum_axes(&[1]).reshape(&[x.shape()[0]]))
        };
        let penalty = losses::gradient_penalty(&critic, &real, &fake, &mix).unwrap();
        let rs = critic(&real).unwrap();
        let fs = critic(&fake).unwrap();
        losses::wasserstein_critic_loss(&rs, &fs, &penalty, 10.0).unwrap()
    };
    out.push(("adv", gradient_error(&adv, &w0)));

    let scores = random_array(&[n], &mut rng);
    out.push(("adv_g", gradient_error(&|s| losses::generator_adversarial_term(s).unwrap(), &scores)));

    let target = Tensor::constant(random_array(&[n, 1], &mut rng));
    let pred = random_array(&[n, 1], &mut rng);
    out.push(("reg", gradient_error(&|p| losses::age_regression_loss(p, &target).unwrap(), &pred)));

    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let logits = random_array(&[n, 3], &mut rng);
    let cls = |l: &Tensor| losses::identity_classification_loss(&l.softmax(), &labels).unwrap();
    out.push(("cls", gradient_error(&cls, &logits)));

    let est = random_array(&[n, 1], &mut rng);
    out.push(("age", gradient_error(&|e| losses::fake_age_error_loss(e, &target).unwrap(), &est)));

    // id: through the decomposition, as in training
    let original = Tensor::constant(unit_rows(&random_array(&[n, 6], &mut rng)));
    let z = random_array(&[n, 6], &mut rng);
    let id = |z: &Tensor| {
        let (_, dir) = decompose_batch(z, 1e-8);
        losses::identity_preservation_loss(&original, &dir).unwrap()
    };
    out.push(("id", gradient_error(&id, &z)));

    let x = Tensor::constant(random_array(&[n, 3, 4, 4], &mut rng));
    let y = random_array(&[n, 3, 4, 4], &mut rng);
    out.push(("recon", gradient_error(&|y| losses::pixel_mse(y, &x).unwrap(), &y)));

    // cycle: a second translation applied before comparing with the input
    let wc = Tensor::constant(random_array(&[3, 3, 3, 3], &mut rng).mapv(|v| v * 0.3));
    let cycle = |y: &Tensor| {
        let back = conv2d(y, &wc, ConvGeometry::new(3, 1, 1)).tanh();
        losses::pixel_mse(&back, &x).unwrap()
    };
    out.push(("cycle", gradient_error(&cycle, &y)));
    out
}

/// The toy corpus used by the training tests: `ids` identities with
/// `per_id` evenly spaced ages, rendered at 32x32.
pub fn toy(ids: usize, per_id: usize) -> Vec<LabeledSample> {
    face_aging::data::toy::generate_toy_corpus(7, ids, per_id, 32).unwrap()
}

/// Held-out renders of the training identities at ages drawn from `seed`.
pub fn held_out(ids: usize, count: usize, seed: u64) -> Vec<LabeledSample> {
    let r = ToyRenderer::new(7, ids, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let age = 16.0 + 61.0 * rng.random::<f64>();
            LabeledSample { image: r.render(i % ids, age).unwrap(), identity: i % ids, age }
        })
        .collect()
}

/// The toy preset with a smaller batch and narrower heads, for tests that
/// only exercise plumbing.
pub fn small_config() -> TrainingConfig {
    let mut c = TrainingConfig::toy();
    c.batch_size = 4;
    c.base_width = 8;
    c.channels = 32;
    c.head_hidden = 16;
    c
}
