mod common;

use face_aging::data::DatasetStats;
use face_aging::losses::pixel_mse;
use face_aging::training::{read_history, train, Batch, RunDir, TrainingState};
use face_aging::{image, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn state(cfg: face_aging::config::TrainingConfig, samples: &[face_aging::data::LabeledSample]) -> TrainingState {
    TrainingState::new(cfg, DatasetStats::from_samples(samples).unwrap()).unwrap()
}

fn first_batch(st: &TrainingState, samples: &[face_aging::data::LabeledSample]) -> Batch {
    let idx: Vec<usize> = (0..st.config.batch_size).map(|i| i * 3 % samples.len()).collect();
    Batch::from_samples(samples, &idx, &st.stats).unwrap()
}

#[test]
fn discriminator_step_is_finite_and_isolated() {
    let samples = common::toy(4, 8);
    let mut st = state(common::small_config(), &samples);
    let batch = first_batch(&st, &samples);
    let g_before = st.networks.generator_checksum();
    let d_before = st.networks.discriminator_checksum();
    let r = st.discriminator_step(&batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(r.all_finite());
    assert_eq!(st.networks.generator_checksum(), g_before);
    assert_ne!(st.networks.discriminator_checksum(), d_before);
}

#[test]
fn discriminator_total_without_auxiliary_weights_is_adv() {
    let samples = common::toy(4, 8);
    let mut cfg = common::small_config();
    cfg.lambda_reg_d = 0.0;
    cfg.lambda_cls_d = 0.0;
    let mut st = state(cfg, &samples);
    let batch = first_batch(&st, &samples);
    let r = st.discriminator_step(&batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(r.total_d.to_bits(), r.adv.to_bits());
}

#[test]
fn generator_step_is_finite_and_isolated() {
    let samples = common::toy(4, 8);
    let mut st = state(common::small_config(), &samples);
    let batch = first_batch(&st, &samples);
    let g_before = st.networks.generator_checksum();
    let d_before = st.networks.discriminator_checksum();
    let r = st.generator_step(&batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(r.all_finite());
    assert_eq!(st.networks.discriminator_checksum(), d_before);
    assert_ne!(st.networks.generator_checksum(), g_before);
}

#[test]
fn generator_with_only_reconstruction_weight() {
    let samples = common::toy(4, 8);
    let mut cfg = common::small_config();
    for k in ["lambda_reg_g", "lambda_cls_g", "lambda_age", "lambda_id", "lambda_cycle"] {
        cfg.set(k, "0").unwrap();
    }
    let mut st = state(cfg, &samples);
    let batch = first_batch(&st, &samples);
    let images = image::unstack(&batch.images).unwrap();
    let recon = st.networks.generator().translate(&images, &batch.ages).unwrap();
    let expected = pixel_mse(&image::stack(&recon).unwrap(), &batch.images).unwrap().item();
    let r = st.generator_step(&batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!((r.recon - expected).abs() < 1e-12, "{} vs {expected}", r.recon);
    assert!((r.total_g - r.adv - st.config.lambda_recon * expected).abs() < 1e-12);
}

#[test]
fn tiny_batches_and_broken_parameters_are_rejected() {
    let samples = common::toy(2, 4);
    let mut st = state(common::small_config(), &samples);
    let one = Batch::from_samples(&samples, &[0], &st.stats).unwrap();
    assert!(st.discriminator_step(&one, &mut ChaCha8Rng::seed_from_u64(0)).is_err());

    for (_, v) in st.networks.discriminator_encoder.params.iter_mut() {
        v.fill(f64::NAN);
    }
    let batch = first_batch(&st, &samples);
    match st.discriminator_step(&batch, &mut ChaCha8Rng::seed_from_u64(0)) {
        Err(Error::NonFiniteLoss { step, dump, .. }) => {
            assert_eq!(step, 1);
            assert!(dump.contains("total_d="));
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn reconstruction_improves_over_two_hundred_steps() {
    let samples = common::toy(4, 16);
    let mut st = state(face_aging::config::TrainingConfig::toy(), &samples);
    let first = st.iterate(&samples).unwrap().generator.recon;
    train(&mut st, &samples, 200, None).unwrap();
    let last = st.history.last().unwrap().generator.recon;
    assert_eq!(st.history.len(), 200);
    assert!(last < first, "recon {first} -> {last}");
}

#[test]
fn ten_step_run_then_resume_from_step_five() {
    let samples = common::toy(4, 8);
    let mut cfg = common::small_config();
    cfg.total_steps = 10;
    cfg.checkpoint_every = 5;
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path(), &cfg).unwrap();
    let mut full = state(cfg.clone(), &samples);
    train(&mut full, &samples, 10, Some(&run)).unwrap();
    assert_eq!(full.history.len(), 10);
    assert!(run.checkpoint_path(5).is_file() && run.checkpoint_path(10).is_file());
    assert_eq!(read_history(&run.history_path()).unwrap(), full.history);
    assert!(dir.path().join("config.txt").is_file());
    assert!(run.sample_path(10).is_file());

    let mut resumed = TrainingState::load(&run.checkpoint_path(5)).unwrap();
    assert_eq!(resumed.step, 5);
    train(&mut resumed, &samples, 10, None).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed, full);
}

#[test]
fn seeded_runs_are_identical() {
    let samples = common::toy(4, 8);
    let mut a = state(common::small_config(), &samples);
    let mut b = state(common::small_config(), &samples);
    train(&mut a, &samples, 4, None).unwrap();
    train(&mut b, &samples, 4, None).unwrap();
    assert_eq!(a.history, b.history);
    let mut cfg = common::small_config();
    cfg.seed = 1;
    let mut c = state(cfg, &samples);
    train(&mut c, &samples, 4, None).unwrap();
    assert_ne!(a.history, c.history);
}
