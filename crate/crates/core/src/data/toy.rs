//! Procedural "faces" whose age and identity are known in closed form.
//!
//! Channel 0 carries a central disc whose radius is affine in age. Channels 1
//! and 2 carry three Gaussian blobs each, placed once per identity on a ring
//! outside the largest disc. Every channel also gets a global brightness
//! offset that is affine in age. Geometry is expressed in units of
//! `resolution / 32` pixels so 32 and 64 pixel corpora look alike.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, LabeledSample, SampleDescriptor};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const AGE_MIN: f64 = 16.0;
pub const AGE_MAX: f64 = 77.0;
/// Disc radius at `AGE_MIN` and `AGE_MAX`, in 32-pixel units.
pub const RADIUS_MIN: f64 = 3.0;
pub const RADIUS_MAX: f64 = 9.0;
/// Disc intensity above the background.
pub const DISC_AMPLITUDE: f64 = 0.8;
/// Background brightness at `AGE_MIN` and `AGE_MAX`.
pub const BRIGHTNESS_MIN: f64 = -0.5;
pub const BRIGHTNESS_MAX: f64 = -0.4;
/// Pixels closer to the centre than this (32-pixel units) may be touched by
/// the disc; identity comparisons and background estimates look outside it.
pub const MASK_RADIUS: f64 = RADIUS_MAX + 2.0;

const BLOBS_PER_CHANNEL: usize = 3;
const SUPERSAMPLE: usize = 8;

fn age_fraction(age: f64) -> f64 {
    (age - AGE_MIN) / (AGE_MAX - AGE_MIN)
}

/// Disc radius for `age`, in 32-pixel units.
pub fn disc_radius(age: f64) -> f64 {
    RADIUS_MIN + (RADIUS_MAX - RADIUS_MIN) * age_fraction(age)
}

/// Inverse of [`disc_radius`].
pub fn age_from_radius(radius: f64) -> f64 {
    AGE_MIN + (AGE_MAX - AGE_MIN) * (radius - RADIUS_MIN) / (RADIUS_MAX - RADIUS_MIN)
}

pub fn brightness(age: f64) -> f64 {
    BRIGHTNESS_MIN + (BRIGHTNESS_MAX - BRIGHTNESS_MIN) * age_fraction(age)
}

pub fn check_resolution(resolution: usize) -> Result<()> {
    match resolution {
        32 | 64 => Ok(()),
        r => Err(Error::InvalidResolution(r)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Blob {
    channel: usize,
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
}

/// The fixed blob layout of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPattern {
    blobs: Vec<Blob>,
}

impl IdentityPattern {
    /// Drawn from `seed` on a stream private to `identity`, so patterns do
    /// not depend on how many identities are generated.
    pub fn new(seed: u64, identity: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(identity as u64);
        let mut blobs = Vec::new();
        for channel in 1..=2 {
            // evenly spaced angles with jitter keep blobs of one channel apart
            let offset = rng.random::<f64>() * 2.0 * PI;
            for k in 0..BLOBS_PER_CHANNEL {
                let jitter = (rng.random::<f64>() - 0.5) * 0.7;
                let angle = offset + jitter + 2.0 * PI * k as f64 / BLOBS_PER_CHANNEL as f64;
                let dist = 12.5 + 2.5 * rng.random::<f64>();
                let sigma = 1.5 + rng.random::<f64>();
                let magnitude = 0.3 + 0.15 * rng.random::<f64>();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                blobs.push(Blob {
                    channel,
                    cx: dist * angle.cos(),
                    cy: dist * angle.sin(),
                    sigma,
                    amplitude: sign * magnitude,
                });
            }
        }
        Self { blobs }
    }
}

/// Renders samples for a fixed seed and resolution.
#[derive(Debug, Clone)]
pub struct ToyRenderer {
    seed: u64,
    resolution: usize,
    patterns: Vec<IdentityPattern>,
}

impl ToyRenderer {
    pub fn new(seed: u64, identities: usize, resolution: usize) -> Result<Self> {
        check_resolution(resolution)?;
        let patterns = (0..identities).map(|i| IdentityPattern::new(seed, i)).collect();
        Ok(Self { seed, resolution, patterns })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn identities(&self) -> usize {
        self.patterns.len()
    }

    pub fn render(&self, identity: usize, age: f64) -> Result<ImageTensor> {
        let pattern =
            self.patterns.get(identity).ok_or(Error::InvalidLabel { label: identity, classes: self.patterns.len() })?;
        if !(AGE_MIN..=AGE_MAX).contains(&age) {
            return Err(Error::OutOfRangeAge { age, min: AGE_MIN, max: AGE_MAX });
        }
        Ok(render(pattern, age, self.resolution))
    }
}

/// Centre-relative coordinates of pixel `(y, x)` in 32-pixel units.
fn coords(y: usize, x: usize, resolution: usize) -> (f64, f64) {
    let unit = resolution as f64 / 32.0;
    let half = resolution as f64 / 2.0;
    ((x as f64 + 0.5 - half) / unit, (y as f64 + 0.5 - half) / unit)
}

fn disc_coverage(px: f64, py: f64, radius: f64, unit: f64) -> f64 {
    let d = (px * px + py * py).sqrt();
    let half_diag = 0.75 / unit;
    if d + half_diag <= radius {
        return 1.0;
    }
    if d - half_diag >= radius {
        return 0.0;
    }
    let step = 1.0 / (SUPERSAMPLE as f64 * unit);
    let mut inside = 0;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let qx = px + (sx as f64 + 0.5) * step - 0.5 / unit;
            let qy = py + (sy as f64 + 0.5) * step - 0.5 / unit;
            if qx * qx + qy * qy <= radius * radius {
                inside += 1;
            }
        }
    }
    inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn render(pattern: &IdentityPattern, age: f64, resolution: usize) -> ImageTensor {
    let unit = resolution as f64 / 32.0;
    let b = brightness(age);
    let radius = disc_radius(age);
    let pixels = Array3::from_shape_fn((3, resolution, resolution), |(c, y, x)| {
        let (px, py) = coords(y, x, resolution);
        let v = if c == 0 {
            DISC_AMPLITUDE * disc_coverage(px, py, radius, unit)
        } else {
            pattern
                .blobs
                .iter()
                .filter(|bl| bl.channel == c)
                .map(|bl| {
                    let d2 = (px - bl.cx).powi(2) + (py - bl.cy).powi(2);
                    bl.amplitude * (-d2 / (2.0 * bl.sigma * bl.sigma)).exp()
                })
                .sum()
        };
        (b + v).clamp(-1.0, 1.0)
    });
    ImageTensor::new(pixels).expect("toy renders are square and in range")
}

/// `samples_per_identity` renders per identity at ages evenly spaced over
/// `[16, 77]` (a single sample sits at the midpoint), identity-major order.
pub fn generate_toy_corpus(
    seed: u64,
    n_identities: usize,
    samples_per_identity: usize,
    resolution: usize,
) -> Result<Vec<LabeledSample>> {
    let renderer = ToyRenderer::new(seed, n_identities, resolution)?;
    let mut out = Vec::with_capacity(n_identities * samples_per_identity);
    for identity in 0..n_identities {
        for j in 0..samples_per_identity {
            let age = toy_age(j, samples_per_identity);
            out.push(LabeledSample { image: renderer.render(identity, age)?, identity, age });
        }
    }
    Ok(out)
}

fn toy_age(j: usize, per_identity: usize) -> f64 {
    if per_identity == 1 {
        return 0.5 * (AGE_MIN + AGE_MAX);
    }
    AGE_MIN + (AGE_MAX - AGE_MIN) * j as f64 / (per_identity - 1) as f64
}

/// Writes every sample as a PNG next to a `manifest.csv` in `dir` and returns
/// the manifest path. Identity keys are `id00`, `id01`, ...
pub fn materialize(samples: &[LabeledSample], dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let path = dir.join(format!("id{:02}_{i:04}.png", s.identity));
        s.image.save_png(&path)?;
        rows.push(SampleDescriptor {
            path,
            identity: s.identity,
            identity_key: format!("id{:02}", s.identity),
            age: s.age,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Disc measurement of a (possibly generated) toy-like image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscMeasurement {
    /// Mean of channel 0 outside the mask.
    pub background: f64,
    /// Standard deviation of channel 0 outside the mask.
    pub background_spread: f64,
    /// Radius in 32-pixel units recovered from the excess area of channel 0.
    pub radius: f64,
}

/// Recovers the disc radius from the integrated excess intensity of channel
/// 0 inside the mask, which is robust to soft or blurred edges.
pub fn measure_disc(image: &ImageTensor) -> DiscMeasurement {
    let r = image.resolution();
    let unit = r as f64 / 32.0;
    let p = image.pixels();
    let mut outside = Vec::new();
    let mut inside = Vec::new();
    for y in 0..r {
        for x in 0..r {
            let (px, py) = coords(y, x, r);
            let v = p[[0, y, x]];
            if (px * px + py * py).sqrt() > MASK_RADIUS {
                outside.push(v);
            } else {
                inside.push(v);
            }
        }
    }
    let n = outside.len() as f64;
    let background = outside.iter().sum::<f64>() / n;
    let spread = (outside.iter().map(|v| (v - background).powi(2)).sum::<f64>() / n).sqrt();
    let excess: f64 = inside.iter().map(|v| (v - background) / DISC_AMPLITUDE).sum();
    let area = excess.max(0.0) / (unit * unit);
    DiscMeasurement { background, background_spread: spread, radius: (area / PI).sqrt() }
}

/// Mean-centred channels 1 and 2 outside the disc mask, flattened.
pub fn identity_signature(image: &ImageTensor) -> Vec<f64> {
    let r = image.resolution();
    let p = image.pixels();
    let mut sig = Vec::new();
    for c in 1..=2 {
        let start = sig.len();
        for y in 0..r {
            for x in 0..r {
                let (px, py) = coords(y, x, r);
                if (px * px + py * py).sqrt() > MASK_RADIUS {
                    sig.push(p[[c, y, x]]);
                }
            }
        }
        let mean = sig[start..].iter().sum::<f64>() / (sig.len() - start) as f64;
        for v in &mut sig[start..] {
            *v -= mean;
        }
    }
    sig
}
