use super::VerifierClient;
use crate::data::toy::{self, BRIGHTNESS_MAX, BRIGHTNESS_MIN};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Reference client for toy renderings. Age comes from inverting the disc
/// radius; verification is the cosine similarity of the identity channels
/// with the disc region masked out.
#[derive(Debug, Clone, Copy)]
pub struct ToyOracle {
    /// Largest tolerated spread of the background in the age channel.
    pub max_background_spread: f64,
    /// Slack around the rendered brightness range.
    pub brightness_slack: f64,
}

impl Default for ToyOracle {
    fn default() -> Self {
        Self { max_background_spread: 0.15, brightness_slack: 0.15 }
    }
}

impl ToyOracle {
    fn gate(&self, image: &ImageTensor) -> Result<toy::DiscMeasurement> {
        let r = image.resolution();
        if toy::check_resolution(r).is_err() {
            return Err(Error::NotToyImage(format!("resolution {r} is not a toy resolution")));
        }
        let m = toy::measure_disc(image);
        if m.background_spread > self.max_background_spread {
            return Err(Error::NotToyImage(format!("background spread {:.3} too large", m.background_spread)));
        }
        let lo = BRIGHTNESS_MIN - self.brightness_slack;
        let hi = BRIGHTNESS_MAX + self.brightness_slack;
        if !(lo..=hi).contains(&m.background) {
            return Err(Error::NotToyImage(format!("background level {:.3} outside [{lo}, {hi}]", m.background)));
        }
        Ok(m)
    }
}

impl VerifierClient for ToyOracle {
    fn name(&self) -> &str {
        "toy-oracle"
    }

    fn estimate_age(&self, image: &ImageTensor) -> Result<f64> {
        let m = self.gate(image)?;
        Ok(toy::age_from_radius(m.radius).clamp(toy::AGE_MIN, toy::AGE_MAX))
    }

    fn verify(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        if a.resolution() != b.resolution() {
            return Err(Error::ShapeMismatch(format!(
                "cannot compare {0}x{0} with {1}x{1}",
                a.resolution(),
                b.resolution()
            )));
        }
        self.gate(a)?;
        self.gate(b)?;
        let (sa, sb) = (toy::identity_signature(a), toy::identity_signature(b));
        let dot: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
        let na = sa.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = sb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok((100.0 * dot / (na * nb)).clamp(0.0, 100.0))
    }
}
