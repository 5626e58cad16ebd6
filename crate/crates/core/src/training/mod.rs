//! Alternating discriminator/generator optimisation, run directories,
//! checkpointing and resumption.

mod history;
mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use autodiff::{grad, no_grad, Array, Tensor};
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderRoute, TrainingConfig};
use crate::data::{normalize_age, sample_target_age, BatchIterator, DatasetStats, LabeledSample};
use crate::decomposition::decompose_batch;
use crate::error::{Error, Result};
use crate::image::{self, horizontal_strip};
use crate::losses::{self, LossReport, LossWeights, Term};
use crate::networks::checkpoint::Checkpoint;
use crate::networks::{BoundBundle, NetworkBundle, Side, SET_NAMES};

pub use history::{read_history, write_history, HistoryRow, COLUMNS};
pub use optim::Adam;

/// Stream offset separating per-step training randomness from the streams
/// used for parameter initialisation.
const STEP_STREAM_BASE: u64 = 1 << 32;

/// A batch ready for the networks.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, 3, r, r]`
    pub images: Tensor,
    pub identities: Vec<usize>,
    /// Normalised ages, `[n]`.
    pub ages: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[LabeledSample], indices: &[usize], stats: &DatasetStats) -> Result<Self> {
        let picked: Vec<&LabeledSample> = indices.iter().map(|&i| &samples[i]).collect();
        let images: Vec<_> = picked.iter().map(|s| s.image.clone()).collect();
        Ok(Self {
            images: image::stack(&images)?,
            identities: picked.iter().map(|s| s.identity).collect(),
            ages: picked.iter().map(|s| normalize_age(s.age, stats)).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

/// Everything needed to continue a run exactly where it stopped.
///
/// Per-step randomness is derived from `(config.seed, step)`, so no random
/// generator state has to be carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub config: TrainingConfig,
    pub stats: DatasetStats,
    pub networks: NetworkBundle,
    pub discriminator_optimizer: Adam,
    pub generator_optimizer: Adam,
    pub history: Vec<HistoryRow>,
}

fn column(v: &[f64]) -> Tensor {
    Tensor::from_vec(&[v.len(), 1], v.to_vec())
}

fn nonfinite(term: &str, step: u64, report: &LossReport) -> Error {
    let dump = report.terms().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    Error::NonFiniteLoss { term: term.to_string(), step, dump }
}

fn check_report(report: &LossReport, step: u64) -> Result<()> {
    match report.terms().iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(nonfinite(name, step, report)),
        None => Ok(()),
    }
}

/// Gradients of `total` with respect to every parameter of the bound sets,
/// keyed `<set>/<param>`. Any non-finite gradient aborts the step.
fn collect_grads(
    total: &Tensor,
    sets: &[&crate::networks::Bound],
    names: &[&str],
    step: u64,
    report: &LossReport,
) -> Result<BTreeMap<String, Array>> {
    let mut keys = Vec::new();
    let mut leaves = Vec::new();
    for (set, set_name) in sets.iter().zip(names) {
        for (name, t) in set.iter() {
            keys.push(format!("{set_name}/{name}"));
            leaves.push(t);
        }
    }
    let grads = grad(total, &leaves, false);
    let mut out = BTreeMap::new();
    for (key, g) in keys.into_iter().zip(grads) {
        if g.value().iter().any(|v| !v.is_finite()) {
            return Err(nonfinite(&format!("gradient of {key}"), step, report));
        }
        out.insert(key, g.value().clone());
    }
    Ok(out)
}

impl TrainingState {
    pub fn new(config: TrainingConfig, stats: DatasetStats) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let networks = NetworkBundle::new(&config, stats.identity_count);
        let adam = || Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2);
        Ok(Self {
            step: 0,
            discriminator_optimizer: adam(),
            generator_optimizer: adam(),
            networks,
            stats,
            config,
            history: Vec::new(),
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::from_config(&self.config)
    }

    /// Random generator for iteration `step` (counting from 0).
    pub fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(STEP_STREAM_BASE + step);
        rng
    }

    fn translate_frozen(&self, b: &BoundBundle, images: &Tensor, ages: &[f64]) -> Result<Tensor> {
        let eps = self.config.degeneracy_epsilon;
        let nets = &self.networks;
        let (z, skips) = nets.generator_encoder.forward(&b.generator_encoder, images)?;
        let (_, id) = decompose_batch(&z, eps);
        let a = Tensor::from_vec(&[ages.len()], ages.to_vec());
        nets.generator_decoder.forward(&b.generator_decoder, &id, &a, &skips)
    }

    /// One critic update: fakes at per-image target ages from the frozen
    /// generator, Wasserstein loss with gradient penalty on real/fake
    /// interpolates, and the age/identity heads on real images through the
    /// discriminator encoder. Only discriminator-side parameters change.
    pub fn discriminator_step<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::InvalidConfig("discriminator steps need a batch of at least 2".into()));
        }
        let targets: Vec<f64> = (0..n).map(|_| sample_target_age(rng, &self.stats).normalized).collect();
        let mix: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let eps = self.config.degeneracy_epsilon;
        let w = self.weights();
        let step = self.step + 1;

        let (report, grads) = {
            let nets = &self.networks;
            let b = nets.bind(Side::Discriminator);
            let fake = no_grad(|| self.translate_frozen(&b, &batch.images, &targets))?.detach();
            let real = &batch.images;

            let (z_real, _) = nets.discriminator_encoder.forward(&b.discriminator_encoder, real)?;
            let real_scores = nets.critic_head.forward(&b.critic_head, &z_real);
            let fake_scores = nets.critic_score(&b, &fake)?;
            let critic = |x: &Tensor| nets.critic_score(&b, x);
            let penalty = losses::gradient_penalty(&critic, real, &fake, &mix)?;
            let adv = losses::wasserstein_critic_loss(&real_scores, &fake_scores, &penalty, self.config.gamma_gp)?;

            let (age_basis, id_basis) = decompose_batch(&z_real, eps);
            let age_pred = nets.discriminator_age_head.forward(&b.discriminator_age_head, &age_basis);
            let reg = losses::age_regression_loss(&age_pred, &column(&batch.ages))?;
            let probs = nets.discriminator_id_head.forward(&b.discriminator_id_head, &id_basis);
            let cls = losses::identity_classification_loss(&probs, &batch.identities)?;

            let total = losses::discriminator_objective(Term(adv.clone()), Term(reg.clone()), Term(cls.clone()), &w).0;
            let report = LossReport {
                adv: adv.item(),
                reg: reg.item(),
                cls: cls.item(),
                total_d: total.item(),
                ..Default::default()
            };
            check_report(&report, step)?;
            let grads = collect_grads(&total, &b.discriminator_sets(), &SET_NAMES[4..], step, &report)?;
            (report, grads)
        };
        let [_, _, _, _, enc, critic, age, id] = self.networks.sets_mut();
        let mut sets = [(SET_NAMES[4], enc), (SET_NAMES[5], critic), (SET_NAMES[6], age), (SET_NAMES[7], id)];
        self.discriminator_optimizer.step(&mut sets, &grads);
        Ok(report)
    }

    /// One generator update over all generator terms with the discriminator
    /// frozen. Only generator-side parameters change.
    pub fn generator_step<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let targets: Vec<f64> = (0..n).map(|_| sample_target_age(rng, &self.stats).normalized).collect();
        let eps = self.config.degeneracy_epsilon;
        let w = self.weights();
        let step = self.step + 1;

        let (report, grads) = {
            let nets = &self.networks;
            let b = nets.bind(Side::Generator);
            let real = &batch.images;
            let own_age = Tensor::from_vec(&[n], batch.ages.clone());
            let target_age = Tensor::from_vec(&[n], targets.clone());

            let (z, skips) = nets.generator_encoder.forward(&b.generator_encoder, real)?;
            let (age_basis, id_basis) = decompose_batch(&z, eps);
            let translated = nets.generator_decoder.forward(&b.generator_decoder, &id_basis, &target_age, &skips)?;
            let reconstructed = nets.generator_decoder.forward(&b.generator_decoder, &id_basis, &own_age, &skips)?;

            let (z_t, skips_t) = nets.generator_encoder.forward(&b.generator_encoder, &translated)?;
            let (age_basis_t, id_basis_t) = decompose_batch(&z_t, eps);
            let cycled = nets.generator_decoder.forward(&b.generator_decoder, &id_basis_t, &own_age, &skips_t)?;

            let (z_d_fake, _) = nets.discriminator_encoder.forward(&b.discriminator_encoder, &translated)?;
            let adv = losses::generator_adversarial_term(&nets.critic_head.forward(&b.critic_head, &z_d_fake))?;

            let age_pred = nets.generator_age_head.forward(&b.generator_age_head, &age_basis);
            let reg = losses::age_regression_loss(&age_pred, &column(&batch.ages))?;
            let probs = nets.generator_id_head.forward(&b.generator_id_head, &id_basis);
            let cls = losses::identity_classification_loss(&probs, &batch.identities)?;

            let fake_age_pred = match self.config.age_loss_encoder {
                EncoderRoute::Discriminator => {
                    let (a, _) = decompose_batch(&z_d_fake, eps);
                    nets.discriminator_age_head.forward(&b.discriminator_age_head, &a)
                }
                EncoderRoute::Generator => nets.generator_age_head.forward(&b.generator_age_head, &age_basis_t),
            };
            let age = losses::fake_age_error_loss(&fake_age_pred, &column(&targets))?;

            let id = match self.config.id_loss_encoder {
                EncoderRoute::Generator => losses::identity_preservation_loss(&id_basis, &id_basis_t)?,
                EncoderRoute::Discriminator => {
                    let (z_d_real, _) = nets.discriminator_encoder.forward(&b.discriminator_encoder, real)?;
                    let (_, id_real) = decompose_batch(&z_d_real, eps);
                    let (_, id_fake) = decompose_batch(&z_d_fake, eps);
                    losses::identity_preservation_loss(&id_real, &id_fake)?
                }
            };
            let recon = losses::pixel_mse(&reconstructed, real)?;
            let cycle = losses::pixel_mse(&cycled, real)?;

            let total = losses::generator_objective(
                Term(adv.clone()),
                Term(reg.clone()),
                Term(cls.clone()),
                Term(age.clone()),
                Term(id.clone()),
                Term(recon.clone()),
                Term(cycle.clone()),
                &w,
            )
            .0;
            let report = LossReport {
                adv: adv.item(),
                reg: reg.item(),
                cls: cls.item(),
                age: age.item(),
                id: id.item(),
                recon: recon.item(),
                cycle: cycle.item(),
                total_g: total.item(),
                ..Default::default()
            };
            check_report(&report, step)?;
            let grads = collect_grads(&total, &b.generator_sets(), &SET_NAMES[..4], step, &report)?;
            (report, grads)
        };
        let [enc, dec, age, id, ..] = self.networks.sets_mut();
        let mut sets = [(SET_NAMES[0], enc), (SET_NAMES[1], dec), (SET_NAMES[2], age), (SET_NAMES[3], id)];
        self.generator_optimizer.step(&mut sets, &grads);
        Ok(report)
    }

    /// Runs `d_steps_per_g` discriminator steps and one generator step,
    /// records the history row and advances the step counter.
    pub fn iterate(&mut self, samples: &[LabeledSample]) -> Result<HistoryRow> {
        let k = self.config.d_steps_per_g as u64;
        let batches = BatchIterator::new(samples.len(), self.config.batch_size, self.config.seed, true)?;
        let mut rng = self.step_rng(self.step);
        let mut d_report = LossReport::default();
        let mut last = None;
        for sub in 0..k {
            let idx = batches.batch_at(self.step * k + sub).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{} samples cannot fill a batch of {}",
                    samples.len(),
                    self.config.batch_size
                ))
            })?;
            let batch = Batch::from_samples(samples, &idx, &self.stats)?;
            d_report = self.discriminator_step(&batch, &mut rng)?;
            last = Some(batch);
        }
        let batch = last.expect("d_steps_per_g >= 1");
        let g_report = self.generator_step(&batch, &mut rng)?;
        self.step += 1;
        let row = HistoryRow { step: self.step, discriminator: d_report, generator: g_report };
        self.history.push(row);
        Ok(row)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.clone());
        ck.put_networks(&self.networks);
        ck.meta.insert("step".into(), self.step.to_string());
        ck.meta.insert("age_min".into(), self.stats.age_min.to_string());
        ck.meta.insert("age_max".into(), self.stats.age_max.to_string());
        ck.meta.insert("sample_count".into(), self.stats.sample_count.to_string());
        for (prefix, opt) in [("adam_d", &self.discriminator_optimizer), ("adam_g", &self.generator_optimizer)] {
            ck.meta.insert(format!("{prefix}_t"), opt.t.to_string());
            for (k, v) in &opt.m {
                ck.arrays.insert(format!("{prefix}.m/{k}"), v.clone());
            }
            for (k, v) in &opt.v {
                ck.arrays.insert(format!("{prefix}.v/{k}"), v.clone());
            }
        }
        let flat: Vec<f64> =
            self.history.iter().flat_map(|r| std::iter::once(r.step as f64).chain(r.values())).collect();
        let rows = self.history.len();
        ck.arrays.insert(
            "history".into(),
            Array::from_shape_vec(IxDyn(&[rows, COLUMNS.len()]), flat).expect("history row width"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let networks = ck.networks()?;
        let stats = DatasetStats {
            age_min: ck.meta_parse("age_min")?,
            age_max: ck.meta_parse("age_max")?,
            identity_count: ck.meta_parse("identity_count")?,
            sample_count: ck.meta_parse("sample_count")?,
        };
        let c = &ck.config;
        let mut optimizers = Vec::new();
        for prefix in ["adam_d", "adam_g"] {
            let mut opt = Adam::new(c.learning_rate, c.adam_beta1, c.adam_beta2);
            opt.t = ck.meta_parse(&format!("{prefix}_t"))?;
            for (k, v) in &ck.arrays {
                if let Some(rest) = k.strip_prefix(&format!("{prefix}.m/")) {
                    opt.m.insert(rest.to_string(), v.clone());
                } else if let Some(rest) = k.strip_prefix(&format!("{prefix}.v/")) {
                    opt.v.insert(rest.to_string(), v.clone());
                }
            }
            optimizers.push(opt);
        }
        let generator_optimizer = optimizers.pop().unwrap();
        let discriminator_optimizer = optimizers.pop().unwrap();
        let hist = ck.arrays.get("history").ok_or_else(|| Error::CheckpointFormat("missing history".into()))?;
        if hist.ndim() != 2 || hist.shape()[1] != COLUMNS.len() {
            return Err(Error::CheckpointFormat(format!("history has shape {:?}", hist.shape())));
        }
        let history = hist
            .outer_iter()
            .map(|row| {
                let row: Vec<f64> = row.iter().copied().collect();
                HistoryRow::from_values(row[0] as u64, &row[1..])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            step: ck.meta_parse("step")?,
            config: ck.config.clone(),
            stats,
            networks,
            discriminator_optimizer,
            generator_optimizer,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `runs/<name>/{config.txt, history.csv, checkpoints/, samples/}`
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Creates the layout and echoes the effective configuration.
    pub fn create(root: &Path, config: &TrainingConfig) -> Result<Self> {
        for sub in ["checkpoints", "samples"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
        }
        let cfg = root.join("config.txt");
        std::fs::write(&cfg, config.to_text()).map_err(|e| Error::io(format!("writing {}", cfg.display()), e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn history_path(&self) -> PathBuf {
        self.root.join("history.csv")
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:06}.ckpt"))
    }

    pub fn sample_path(&self, step: u64) -> PathBuf {
        self.root.join("samples").join(format!("step_{step:06}.png"))
    }

    /// The checkpoint with the highest step number, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let dir = std::fs::read_dir(self.root.join("checkpoints")).ok()?;
        dir.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "ckpt")).max()
    }

    fn write_sample(&self, state: &TrainingState, probe: &LabeledSample) -> Result<()> {
        let ages = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let frames = state.networks.generator().translate_sequence(&probe.image, &ages)?;
        let mut all = vec![probe.image.clone()];
        all.extend(frames);
        let path = self.sample_path(state.step);
        horizontal_strip(&all)?
            .save(&path)
            .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
    }
}

/// Trains until `state.step == until`, checkpointing every
/// `checkpoint_every` steps and at the end. With a run directory the
/// history CSV and a sample strip are refreshed at every checkpoint.
pub fn train(state: &mut TrainingState, samples: &[LabeledSample], until: u64, run: Option<&RunDir>) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let every = state.config.checkpoint_every.max(1);
    let persist = |state: &TrainingState| -> Result<()> {
        if let Some(run) = run {
            state.save(&run.checkpoint_path(state.step))?;
            write_history(&run.history_path(), &state.history)?;
            run.write_sample(state, &samples[0])?;
        }
        Ok(())
    };
    while state.step < until {
        let row = state.iterate(samples)?;
        if state.step.is_multiple_of(every) {
            persist(state)?;
        }
        if state.step.is_multiple_of(100) || state.step == until {
            log::info!(
                "step {} total_d {:.4} total_g {:.4} recon {:.5}",
                row.step,
                row.discriminator.total_d,
                row.generator.total_g,
                row.generator.recon
            );
        }
    }
    if !state.step.is_multiple_of(every) {
        persist(state)?;
    }
    Ok(())
}

/// Fresh state for `samples` followed by [`train`] up to `config.total_steps`.
pub fn train_new(config: TrainingConfig, samples: &[LabeledSample], run: Option<&RunDir>) -> Result<TrainingState> {
    let stats = DatasetStats::from_samples(samples)?;
    let until = config.total_steps;
    let mut state = TrainingState::new(config, stats)?;
    train(&mut state, samples, until, run)?;
    Ok(state)
}
