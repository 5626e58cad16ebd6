//! Training configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which network's encoder (and matching head) scores a translated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderRoute {
    Generator,
    Discriminator,
}

impl EncoderRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderRoute::Generator => "generator",
            EncoderRoute::Discriminator => "discriminator",
        }
    }
}

impl FromStr for EncoderRoute {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generator" => Ok(EncoderRoute::Generator),
            "discriminator" => Ok(EncoderRoute::Discriminator),
            other => Err(format!("expected `generator` or `discriminator`, got `{other}`")),
        }
    }
}

/// Every knob of a training run. Defaults reproduce the published setup where
/// it states one; the rest are conventional WGAN-GP choices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lambda_reg_d: f64,
    pub lambda_reg_g: f64,
    pub lambda_cls_d: f64,
    pub lambda_cls_g: f64,
    pub lambda_age: f64,
    pub lambda_id: f64,
    pub lambda_recon: f64,
    pub lambda_cycle: f64,
    pub gamma_gp: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub d_steps_per_g: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub resolution: usize,
    /// Pooled latent width `C`.
    pub channels: usize,
    /// Width of the first encoder level; doubles per level up to `channels`.
    pub base_width: usize,
    pub skip_levels: usize,
    pub head_hidden: usize,
    pub age_loss_encoder: EncoderRoute,
    pub id_loss_encoder: EncoderRoute,
    pub checkpoint_every: u64,
    pub degeneracy_epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_reg_d: 0.001,
            lambda_reg_g: 0.001,
            lambda_cls_d: 0.1,
            lambda_cls_g: 0.1,
            lambda_age: 0.02,
            lambda_id: 1.0,
            lambda_recon: 10.0,
            lambda_cycle: 10.0,
            gamma_gp: 10.0,
            learning_rate: 1e-4,
            batch_size: 16,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            d_steps_per_g: 1,
            total_steps: 100_000,
            seed: 0,
            resolution: 128,
            channels: 256,
            base_width: 32,
            skip_levels: 2,
            head_hidden: 64,
            age_loss_encoder: EncoderRoute::Discriminator,
            id_loss_encoder: EncoderRoute::Generator,
            checkpoint_every: 1000,
            degeneracy_epsilon: crate::decomposition::DEFAULT_EPSILON,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lambda_reg_d",
    "lambda_reg_g",
    "lambda_cls_d",
    "lambda_cls_g",
    "lambda_age",
    "lambda_id",
    "lambda_recon",
    "lambda_cycle",
    "gamma_gp",
    "learning_rate",
    "batch_size",
    "adam_beta1",
    "adam_beta2",
    "d_steps_per_g",
    "total_steps",
    "seed",
    "resolution",
    "channels",
    "base_width",
    "skip_levels",
    "head_hidden",
    "age_loss_encoder",
    "id_loss_encoder",
    "checkpoint_every",
    "degeneracy_epsilon",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| Error::InvalidConfig(format!("{key}={value}: {e}")))
}

impl TrainingConfig {
    /// Desk-scale preset: 32x32 images, three encoder levels, `C = 64`.
    pub fn toy() -> Self {
        Self { resolution: 32, channels: 64, base_width: 16, ..Self::default() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda_reg_d" => self.lambda_reg_d = parse(key, value)?,
            "lambda_reg_g" => self.lambda_reg_g = parse(key, value)?,
            "lambda_cls_d" => self.lambda_cls_d = parse(key, value)?,
            "lambda_cls_g" => self.lambda_cls_g = parse(key, value)?,
            "lambda_age" => self.lambda_age = parse(key, value)?,
            "lambda_id" => self.lambda_id = parse(key, value)?,
            "lambda_recon" => self.lambda_recon = parse(key, value)?,
            "lambda_cycle" => self.lambda_cycle = parse(key, value)?,
            "gamma_gp" => self.gamma_gp = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "d_steps_per_g" => self.d_steps_per_g = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "resolution" => self.resolution = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "base_width" => self.base_width = parse(key, value)?,
            "skip_levels" => self.skip_levels = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "age_loss_encoder" => self.age_loss_encoder = parse(key, value)?,
            "id_loss_encoder" => self.id_loss_encoder = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "degeneracy_epsilon" => self.degeneracy_epsilon = parse(key, value)?,
            _ => return Err(Error::UnknownKey { key: key.to_string(), valid: KEYS.to_vec() }),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda_reg_d" => self.lambda_reg_d.to_string(),
            "lambda_reg_g" => self.lambda_reg_g.to_string(),
            "lambda_cls_d" => self.lambda_cls_d.to_string(),
            "lambda_cls_g" => self.lambda_cls_g.to_string(),
            "lambda_age" => self.lambda_age.to_string(),
            "lambda_id" => self.lambda_id.to_string(),
            "lambda_recon" => self.lambda_recon.to_string(),
            "lambda_cycle" => self.lambda_cycle.to_string(),
            "gamma_gp" => self.gamma_gp.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "d_steps_per_g" => self.d_steps_per_g.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "seed" => self.seed.to_string(),
            "resolution" => self.resolution.to_string(),
            "channels" => self.channels.to_string(),
            "base_width" => self.base_width.to_string(),
            "skip_levels" => self.skip_levels.to_string(),
            "head_hidden" => self.head_hidden.to_string(),
            "age_loss_encoder" => self.age_loss_encoder.as_str().to_string(),
            "id_loss_encoder" => self.id_loss_encoder.as_str().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "degeneracy_epsilon" => self.degeneracy_epsilon.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_text(&text)
    }

    /// Every key, one per line, in canonical order. `f64` values use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap());
        }
        out
    }

    /// Encoder level count implied by `base_width` doubling up to `channels`.
    pub fn levels(&self) -> usize {
        let mut w = self.base_width.max(1);
        let mut n = 1;
        while w < self.channels {
            w *= 2;
            n += 1;
        }
        n
    }

    /// Channel width of each encoder level, ending at `channels`.
    pub fn level_widths(&self) -> Vec<usize> {
        let levels = self.levels();
        (0..levels).map(|i| if i + 1 == levels { self.channels } else { self.base_width << i }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let lambdas = [
            ("lambda_reg_d", self.lambda_reg_d),
            ("lambda_reg_g", self.lambda_reg_g),
            ("lambda_cls_d", self.lambda_cls_d),
            ("lambda_cls_g", self.lambda_cls_g),
            ("lambda_age", self.lambda_age),
            ("lambda_id", self.lambda_id),
            ("lambda_recon", self.lambda_recon),
            ("lambda_cycle", self.lambda_cycle),
            ("gamma_gp", self.gamma_gp),
        ];
        for (k, v) in lambdas {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be a finite non-negative number, got {v}"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be >= 1".into());
        }
        if self.base_width == 0 || self.channels < self.base_width {
            return bad("channels must be >= base_width > 0".into());
        }
        let levels = self.levels();
        if self.base_width << (levels - 1) != self.channels {
            return bad(format!(
                "channels ({}) must equal base_width ({}) times a power of two",
                self.channels, self.base_width
            ));
        }
        if !self.resolution.is_multiple_of(1 << levels) || self.resolution >> levels == 0 {
            return bad(format!("resolution {} not divisible by 2^{levels}", self.resolution));
        }
        if self.skip_levels > levels {
            return bad(format!("skip_levels {} exceeds encoder depth {levels}", self.skip_levels));
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        if !(self.degeneracy_epsilon > 0.0) {
            return bad("degeneracy_epsilon must be positive".into());
        }
        Ok(())
    }
}
