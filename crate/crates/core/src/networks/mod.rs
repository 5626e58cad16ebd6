//! Generator (U-Net encoder/decoder), discriminator (encoder + critic) and the
//! age/identity heads that sit on the decomposed latent.
//!
//! Generator and discriminator each own a separate encoder, age head and
//! identity head; nothing is shared across the two sides.

pub mod checkpoint;
mod layers;
mod params;

use autodiff::{no_grad, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::decomposition::{decompose_batch, LatentFeature};
use crate::error::{Error, Result};
use crate::image::{self, ImageTensor};

pub use layers::LEAK;
pub use params::{Bound, ParamSet};

use layers::{DOWN, SAME3, UP};

/// A chronological age together with its `[-1, 1]` encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeCondition {
    pub chronological: f64,
    pub normalized: f64,
}

/// Per-level encoder feature maps, shallowest first.
#[derive(Debug, Clone)]
pub struct SkipStack(pub Vec<Tensor>);

impl SkipStack {
    pub fn levels(&self) -> usize {
        self.0.len()
    }
}

/// Strided convolutional encoder ending in global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    widths: Vec<usize>,
    resolution: usize,
    pub params: ParamSet,
}

impl Encoder {
    pub fn new(widths: &[usize], resolution: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let mut c_in = 3;
        for (i, &w) in widths.iter().enumerate() {
            layers::init_conv(&mut params, &format!("down{i}"), c_in, w, DOWN, rng);
            c_in = w;
        }
        Self { widths: widths.to_vec(), resolution, params }
    }

    pub fn channels(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// `x: [n, 3, r, r]` to the pooled latent `[n, C]` and every level's map.
    ///
    /// The first and last levels are left unnormalised: the first sees raw
    /// pixels, and the last must keep its magnitude since the pooled norm is
    /// the age basis.
    pub fn forward(&self, b: &Bound, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::ShapeMismatch(format!(
                "encoder configured for [n, 3, {r}, {r}], got {s:?}",
                r = self.resolution
            )));
        }
        let last = self.levels() - 1;
        let mut h = x.clone();
        let mut skips = Vec::with_capacity(self.levels());
        for i in 0..self.levels() {
            h = layers::conv(b, &format!("down{i}"), &h, DOWN);
            if i > 0 && i < last {
                h = layers::instance_norm(&h);
            }
            h = h.leaky_relu(LEAK);
            skips.push(h.clone());
        }
        Ok((layers::global_pool(&h), skips))
    }
}

/// Upsampling decoder fed with the identity basis (broadcast spatially) and a
/// constant age plane, with skip connections from the shallowest
/// `skip_levels` encoder levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    widths: Vec<usize>,
    resolution: usize,
    skip_levels: usize,
    pub params: ParamSet,
}

impl Decoder {
    pub fn new(widths: &[usize], resolution: usize, skip_levels: usize, rng: &mut ChaCha8Rng) -> Self {
        let levels = widths.len();
        let mut params = ParamSet::new();
        let mut c_in = widths[levels - 1] + 1;
        for step in 0..levels {
            if step + 1 == levels {
                layers::init_conv_transpose(&mut params, &format!("up{step}"), c_in, 3, UP, rng);
                break;
            }
            let level = levels - 2 - step;
            let out = widths[level];
            layers::init_conv_transpose(&mut params, &format!("up{step}"), c_in, out, UP, rng);
            let merged = if level < skip_levels { out + widths[level] } else { out };
            layers::init_conv(&mut params, &format!("fuse{step}"), merged, out, SAME3, rng);
            c_in = out;
        }
        Self { widths: widths.to_vec(), resolution, skip_levels, params }
    }

    pub fn skip_levels(&self) -> usize {
        self.skip_levels
    }

    fn bottleneck(&self) -> usize {
        self.resolution >> self.widths.len()
    }

    /// `identity_basis: [n, C]`, `age: [n]` normalised ages, skips as
    /// produced by [`Encoder::forward`]. Output `[n, 3, r, r]` in `[-1, 1]`.
    pub fn forward(&self, b: &Bound, identity_basis: &Tensor, age: &Tensor, skips: &[Tensor]) -> Result<Tensor> {
        let levels = self.widths.len();
        let c = self.widths[levels - 1];
        let n = identity_basis.shape()[0];
        if identity_basis.shape() != [n, c] {
            return Err(Error::ShapeMismatch(format!(
                "identity basis must be [n, {c}], got {:?}",
                identity_basis.shape()
            )));
        }
        if age.shape() != [n] {
            return Err(Error::ShapeMismatch(format!("age must be [{n}], got {:?}", age.shape())));
        }
        if skips.len() < self.skip_levels {
            return Err(Error::ShapeMismatch(format!(
                "decoder needs {} skip levels, got {}",
                self.skip_levels,
                skips.len()
            )));
        }
        let s = self.bottleneck();
        let id_map = identity_basis.reshape(&[n, c, 1, 1]).broadcast_to(&[n, c, s, s]);
        let age_map = age.reshape(&[n, 1, 1, 1]).broadcast_to(&[n, 1, s, s]);
        let mut h = Tensor::concat(&[id_map, age_map], 1);
        for step in 0..levels {
            h = layers::conv_transpose(b, &format!("up{step}"), &h, UP);
            if step + 1 == levels {
                return Ok(h.tanh());
            }
            h = h.relu();
            let level = levels - 2 - step;
            if level < self.skip_levels {
                let skip = &skips[level];
                if skip.shape()[0] != n || skip.shape()[2..] != h.shape()[2..] || skip.shape()[1] != self.widths[level]
                {
                    return Err(Error::ShapeMismatch(format!(
                        "skip level {level} has shape {:?}, decoder expects [{n}, {}, {}, {}]",
                        skip.shape(),
                        self.widths[level],
                        h.shape()[2],
                        h.shape()[3]
                    )));
                }
                h = Tensor::concat(&[h, skip.clone()], 1);
            }
            h = layers::conv(b, &format!("fuse{step}"), &h, SAME3).relu();
        }
        unreachable!("loop returns at the last level")
    }
}

/// Fully connected head on the scalar age basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeHead {
    pub params: ParamSet,
}

impl AgeHead {
    pub fn new(hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        layers::init_linear(&mut params, "fc0", 1, hidden, rng);
        layers::init_linear(&mut params, "fc1", hidden, 1, rng);
        Self { params }
    }

    /// `[n, 1] -> [n, 1]` predicted normalised age.
    pub fn forward(&self, b: &Bound, age_basis: &Tensor) -> Tensor {
        let h = layers::linear(b, "fc0", age_basis).leaky_relu(LEAK);
        layers::linear(b, "fc1", &h)
    }
}

/// Fully connected identity classifier on the unit identity basis.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityHead {
    classes: usize,
    pub params: ParamSet,
}

impl IdentityHead {
    pub fn new(channels: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        layers::init_linear(&mut params, "fc0", channels, hidden, rng);
        layers::init_linear(&mut params, "fc1", hidden, classes, rng);
        Self { classes, params }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[n, C] -> [n, K]` class probabilities.
    pub fn forward(&self, b: &Bound, identity_basis: &Tensor) -> Tensor {
        let h = layers::linear(b, "fc0", identity_basis).leaky_relu(LEAK);
        layers::linear(b, "fc1", &h).softmax()
    }
}

/// Single linear layer from the pooled discriminator latent to a score.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticHead {
    pub params: ParamSet,
}

impl CriticHead {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        layers::init_linear(&mut params, "fc", channels, 1, rng);
        Self { params }
    }

    /// `[n, C] -> [n]`
    pub fn forward(&self, b: &Bound, z: &Tensor) -> Tensor {
        let n = z.shape()[0];
        layers::linear(b, "fc", z).reshape(&[n])
    }
}

/// Names of the eight parameter sets, generator side first.
pub const SET_NAMES: [&str; 8] = [
    "generator_encoder",
    "generator_decoder",
    "generator_age_head",
    "generator_id_head",
    "discriminator_encoder",
    "critic_head",
    "discriminator_age_head",
    "discriminator_id_head",
];

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBundle {
    pub generator_encoder: Encoder,
    pub generator_decoder: Decoder,
    pub generator_age_head: AgeHead,
    pub generator_id_head: IdentityHead,
    pub discriminator_encoder: Encoder,
    pub critic_head: CriticHead,
    pub discriminator_age_head: AgeHead,
    pub discriminator_id_head: IdentityHead,
}

impl NetworkBundle {
    pub fn new(cfg: &TrainingConfig, identity_count: usize) -> Self {
        let widths = cfg.level_widths();
        // one independent stream per component so adding a layer to one
        // does not reshuffle the others
        let mut streams = (0..8u64).map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(1000 + i);
            r
        });
        let mut next = || streams.next().unwrap();
        Self {
            generator_encoder: Encoder::new(&widths, cfg.resolution, &mut next()),
            generator_decoder: Decoder::new(&widths, cfg.resolution, cfg.skip_levels, &mut next()),
            generator_age_head: AgeHead::new(cfg.head_hidden, &mut next()),
            generator_id_head: IdentityHead::new(cfg.channels, cfg.head_hidden, identity_count, &mut next()),
            discriminator_encoder: Encoder::new(&widths, cfg.resolution, &mut next()),
            critic_head: CriticHead::new(cfg.channels, &mut next()),
            discriminator_age_head: AgeHead::new(cfg.head_hidden, &mut next()),
            discriminator_id_head: IdentityHead::new(cfg.channels, cfg.head_hidden, identity_count, &mut next()),
        }
    }

    pub fn sets(&self) -> [&ParamSet; 8] {
        [
            &self.generator_encoder.params,
            &self.generator_decoder.params,
            &self.generator_age_head.params,
            &self.generator_id_head.params,
            &self.discriminator_encoder.params,
            &self.critic_head.params,
            &self.discriminator_age_head.params,
            &self.discriminator_id_head.params,
        ]
    }

    pub fn sets_mut(&mut self) -> [&mut ParamSet; 8] {
        [
            &mut self.generator_encoder.params,
            &mut self.generator_decoder.params,
            &mut self.generator_age_head.params,
            &mut self.generator_id_head.params,
            &mut self.discriminator_encoder.params,
            &mut self.critic_head.params,
            &mut self.discriminator_age_head.params,
            &mut self.discriminator_id_head.params,
        ]
    }

    pub fn generator_checksum(&self) -> u64 {
        self.sets()[..4].iter().fold(0, |h, s| h.rotate_left(7) ^ s.checksum())
    }

    pub fn discriminator_checksum(&self) -> u64 {
        self.sets()[4..].iter().fold(0, |h, s| h.rotate_left(7) ^ s.checksum())
    }

    pub fn generator(&self) -> Generator<'_> {
        Generator {
            encoder: &self.generator_encoder,
            decoder: &self.generator_decoder,
            epsilon: crate::decomposition::DEFAULT_EPSILON,
        }
    }

    /// Binds all eight sets; only the chosen side is trainable.
    pub fn bind(&self, train: Side) -> BoundBundle {
        let g = train == Side::Generator;
        let d = train == Side::Discriminator;
        BoundBundle {
            generator_encoder: self.generator_encoder.params.bind(g),
            generator_decoder: self.generator_decoder.params.bind(g),
            generator_age_head: self.generator_age_head.params.bind(g),
            generator_id_head: self.generator_id_head.params.bind(g),
            discriminator_encoder: self.discriminator_encoder.params.bind(d),
            critic_head: self.critic_head.params.bind(d),
            discriminator_age_head: self.discriminator_age_head.params.bind(d),
            discriminator_id_head: self.discriminator_id_head.params.bind(d),
        }
    }

    /// End-to-end critic `D(x) = critic(pool(Enc_D(x)))` on bound parameters.
    pub fn critic_score(&self, b: &BoundBundle, x: &Tensor) -> Result<Tensor> {
        let (z, _) = self.discriminator_encoder.forward(&b.discriminator_encoder, x)?;
        Ok(self.critic_head.forward(&b.critic_head, &z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
    /// Everything frozen (inference).
    Neither,
}

pub struct BoundBundle {
    pub generator_encoder: Bound,
    pub generator_decoder: Bound,
    pub generator_age_head: Bound,
    pub generator_id_head: Bound,
    pub discriminator_encoder: Bound,
    pub critic_head: Bound,
    pub discriminator_age_head: Bound,
    pub discriminator_id_head: Bound,
}

impl BoundBundle {
    pub fn generator_sets(&self) -> [&Bound; 4] {
        [&self.generator_encoder, &self.generator_decoder, &self.generator_age_head, &self.generator_id_head]
    }

    pub fn discriminator_sets(&self) -> [&Bound; 4] {
        [&self.discriminator_encoder, &self.critic_head, &self.discriminator_age_head, &self.discriminator_id_head]
    }
}

/// Frozen generator view used for translation at inference time.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub encoder: &'a Encoder,
    pub decoder: &'a Decoder,
    pub epsilon: f64,
}

impl Generator<'_> {
    pub fn resolution(&self) -> usize {
        self.encoder.resolution()
    }

    /// Translates each image to its paired normalised age.
    pub fn translate(&self, images: &[ImageTensor], normalized_ages: &[f64]) -> Result<Vec<ImageTensor>> {
        if images.len() != normalized_ages.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} target ages",
                images.len(),
                normalized_ages.len()
            )));
        }
        no_grad(|| {
            let x = image::stack(images)?;
            let eb = self.encoder.params.bind(false);
            let db = self.decoder.params.bind(false);
            let (z, skips) = self.encoder.forward(&eb, &x)?;
            let (_, id) = decompose_batch(&z, self.epsilon);
            let age = Tensor::from_vec(&[images.len()], normalized_ages.to_vec());
            let out = self.decoder.forward(&db, &id, &age, &skips)?;
            image::unstack(&out)
        })
    }

    /// Encodes `x` once and decodes it at every age, sharing the identity
    /// basis and skips across the whole sequence.
    pub fn translate_sequence(&self, x: &ImageTensor, normalized_ages: &[f64]) -> Result<Vec<ImageTensor>> {
        if normalized_ages.is_empty() {
            return Ok(Vec::new());
        }
        no_grad(|| {
            let (latent, skips) = encode(self.encoder, x)?;
            let z = Tensor::from_vec(&[1, latent.channels()], latent.values().to_vec());
            let (_, id) = decompose_batch(&z, self.epsilon);
            let k = normalized_ages.len();
            let c = latent.channels();
            let id = id.broadcast_to(&[k, c]);
            let skips: Vec<Tensor> = skips
                .0
                .iter()
                .map(|s| {
                    let mut shape = s.shape().to_vec();
                    shape[0] = k;
                    s.broadcast_to(&shape)
                })
                .collect();
            let age = Tensor::from_vec(&[k], normalized_ages.to_vec());
            let db = self.decoder.params.bind(false);
            let out = self.decoder.forward(&db, &id, &age, &skips)?;
            image::unstack(&out)
        })
    }
}

/// Encodes a single image into its pooled latent and per-level maps.
pub fn encode(encoder: &Encoder, x: &ImageTensor) -> Result<(LatentFeature, SkipStack)> {
    no_grad(|| {
        let t = image::stack(std::slice::from_ref(x))?;
        let (z, skips) = encoder.forward(&encoder.params.bind(false), &t)?;
        Ok((LatentFeature::new(z.to_vec())?, SkipStack(skips)))
    })
}

/// Decodes one identity basis at one age using a single image's skips.
pub fn decode(decoder: &Decoder, identity_basis: &[f64], age: &AgeCondition, skips: &SkipStack) -> Result<ImageTensor> {
    no_grad(|| {
        let id = Tensor::from_vec(&[1, identity_basis.len()], identity_basis.to_vec());
        let a = Tensor::from_vec(&[1], vec![age.normalized]);
        let out = decoder.forward(&decoder.params.bind(false), &id, &a, &skips.0)?;
        Ok(image::unstack(&out)?.remove(0))
    })
}

/// Predicted normalised age for each age basis value.
pub fn regress_age(head: &AgeHead, age_basis: &[f64]) -> Vec<f64> {
    if age_basis.is_empty() {
        return Vec::new();
    }
    no_grad(|| {
        let x = Tensor::from_vec(&[age_basis.len(), 1], age_basis.to_vec());
        head.forward(&head.params.bind(false), &x).to_vec()
    })
}

/// Identity probabilities for one unit-norm identity basis.
pub fn classify_identity(head: &IdentityHead, identity_basis: &[f64]) -> Vec<f64> {
    no_grad(|| {
        let x = Tensor::from_vec(&[1, identity_basis.len()], identity_basis.to_vec());
        head.forward(&head.params.bind(false), &x).to_vec()
    })
}

/// Critic score of one pooled discriminator latent.
pub fn criticize(head: &CriticHead, z: &LatentFeature) -> f64 {
    no_grad(|| {
        let x = Tensor::from_vec(&[1, z.channels()], z.values().to_vec());
        head.forward(&head.params.bind(false), &x).item()
    })
}

#[cfg(test)]
mod tests;
