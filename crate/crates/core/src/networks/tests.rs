use super::*;
use crate::config::TrainingConfig;
use autodiff::grad;
use ndarray::Array3;

fn toy_bundle(classes: usize) -> (TrainingConfig, NetworkBundle) {
    let cfg = TrainingConfig::toy();
    let nets = NetworkBundle::new(&cfg, classes);
    (cfg, nets)
}

fn probe(r: usize, phase: f64) -> ImageTensor {
    ImageTensor::new(Array3::from_shape_fn((3, r, r), |(c, y, x)| {
        ((c as f64 + 1.0) * 0.37 * y as f64 + 0.21 * x as f64 + phase).sin() * 0.8
    }))
    .unwrap()
}

#[test]
fn toy_encoder_shapes() {
    let (_, nets) = toy_bundle(4);
    let (z, skips) = encode(&nets.generator_encoder, &probe(32, 0.0)).unwrap();
    assert_eq!(z.channels(), 64);
    assert_eq!(skips.levels(), 3);
    assert_eq!(skips.0[0].shape(), &[1, 16, 16, 16]);
    assert_eq!(skips.0[2].shape(), &[1, 64, 4, 4]);
}

#[test]
fn full_scale_encoder_shapes() {
    let cfg = TrainingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::new(&cfg.level_widths(), 128, &mut rng);
    let (z, skips) = encode(&enc, &probe(128, 0.3)).unwrap();
    assert_eq!(z.channels(), 256);
    assert_eq!(skips.levels(), 4);
}

#[test]
fn wrong_resolution_is_rejected() {
    let (_, nets) = toy_bundle(4);
    let err = encode(&nets.generator_encoder, &probe(64, 0.0)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch(_)));
}

#[test]
fn decode_is_bounded_and_deterministic() {
    let (_, nets) = toy_bundle(4);
    let (z, skips) = encode(&nets.generator_encoder, &probe(32, 0.5)).unwrap();
    let d = crate::decomposition::decompose(&z, 1e-8).unwrap();
    let age = AgeCondition { chronological: 46.5, normalized: 0.0 };
    let a = decode(&nets.generator_decoder, d.identity_basis(), &age, &skips).unwrap();
    let b = decode(&nets.generator_decoder, d.identity_basis(), &age, &skips).unwrap();
    assert_eq!(a.resolution(), 32);
    assert_eq!(a, b);
}

#[test]
fn decode_rejects_missing_skips() {
    let (_, nets) = toy_bundle(4);
    let (z, skips) = encode(&nets.generator_encoder, &probe(32, 0.5)).unwrap();
    let d = crate::decomposition::decompose(&z, 1e-8).unwrap();
    let age = AgeCondition { chronological: 46.5, normalized: 0.0 };
    let short = SkipStack(skips.0[..1].to_vec());
    assert!(matches!(decode(&nets.generator_decoder, d.identity_basis(), &age, &short), Err(Error::ShapeMismatch(_))));
}

#[test]
fn output_range_holds_for_extreme_parameters() {
    let (_, mut nets) = toy_bundle(4);
    for (_, v) in nets.generator_decoder.params.iter_mut() {
        v.mapv_inplace(|w| w * 50.0 + 3.0);
    }
    let out = nets.generator().translate(&[probe(32, 0.1)], &[1.0]).unwrap();
    assert!(out[0].pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn heads_shapes_and_simplex() {
    let (_, nets) = toy_bundle(4);
    let preds = regress_age(&nets.generator_age_head, &[5.0, 0.0, 1.5]);
    assert_eq!(preds.len(), 3);
    assert!(preds.iter().all(|p| p.is_finite()));

    let mut u = vec![0.0; 64];
    u[3] = 1.0;
    let p = classify_identity(&nets.generator_id_head, &u);
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|&v| v >= 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(p, classify_identity(&nets.generator_id_head, &u));

    let z = LatentFeature::new(vec![0.5; 64]).unwrap();
    assert!(criticize(&nets.critic_head, &z).is_finite());
}

#[test]
fn critic_has_finite_pixel_gradients() {
    let (_, nets) = toy_bundle(4);
    let b = nets.bind(Side::Neither);
    let x = autodiff::Tensor::variable(image::stack(&[probe(32, 0.0), probe(32, 1.0)]).unwrap().value().clone());
    let scores = nets.critic_score(&b, &x).unwrap();
    assert_eq!(scores.shape(), &[2]);
    let g = grad(&scores.sum_all(), &[&x], false).remove(0);
    assert!(g.value().iter().all(|v| v.is_finite()));
    assert!(g.value().iter().any(|v| *v != 0.0));
}

#[test]
fn sides_do_not_share_parameters() {
    let (_, mut nets) = toy_bundle(4);
    let x = probe(32, 0.2);
    let xt = image::stack(std::slice::from_ref(&x)).unwrap();
    let d_before = no_grad(|| nets.critic_score(&nets.bind(Side::Neither), &xt).unwrap().item());
    let g_before = nets.generator().translate(std::slice::from_ref(&x), &[0.3]).unwrap();

    for set in nets.sets_mut()[..4].iter_mut() {
        for (_, v) in set.iter_mut() {
            v.mapv_inplace(|w| w + 0.1);
        }
    }
    let d_after = no_grad(|| nets.critic_score(&nets.bind(Side::Neither), &xt).unwrap().item());
    assert_eq!(d_before.to_bits(), d_after.to_bits());

    for set in nets.sets_mut()[4..].iter_mut() {
        for (_, v) in set.iter_mut() {
            v.mapv_inplace(|w| w - 0.1);
        }
    }
    for set in nets.sets_mut()[..4].iter_mut() {
        for (_, v) in set.iter_mut() {
            v.mapv_inplace(|w| w - 0.1);
        }
    }
    let g_after = nets.generator().translate(std::slice::from_ref(&x), &[0.3]).unwrap();
    // only float rounding from +0.1-0.1 can differ
    assert!(g_before[0].mse(&g_after[0]) < 1e-20);
}

#[test]
fn sequence_matches_individual_translation() {
    let (_, nets) = toy_bundle(4);
    let x = probe(32, 0.7);
    let ages = [-1.0, 0.0, 0.5];
    let seq = nets.generator().translate_sequence(&x, &ages).unwrap();
    for (a, img) in ages.iter().zip(&seq) {
        let one = nets.generator().translate(std::slice::from_ref(&x), &[*a]).unwrap();
        assert!(one[0].mse(img) < 1e-24);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (cfg, nets) = toy_bundle(5);
    let mut ck = checkpoint::Checkpoint::new(cfg);
    ck.put_networks(&nets);
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = checkpoint::Checkpoint::read_from(&mut buf.as_slice()).unwrap();
    let restored = back.networks().unwrap();
    assert_eq!(restored, nets);
    let x = probe(32, 0.9);
    let a = nets.generator().translate(std::slice::from_ref(&x), &[0.25]).unwrap();
    let b = restored.generator().translate(std::slice::from_ref(&x), &[0.25]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(checkpoint::Checkpoint::read_from(&mut &b"NOTACKPT"[..]).is_err());
}
