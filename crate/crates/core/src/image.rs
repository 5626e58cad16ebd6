use std::path::Path;

use autodiff::Tensor;
use image::{imageops::FilterType, RgbImage};
use ndarray::{s, Array3, Array4, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A square RGB image with values in `[-1, 1]`, stored channel-first
/// (`[3, h, w]`) to match the network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f64>,
}

impl ImageTensor {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 || h != w || h == 0 {
            return Err(Error::ShapeMismatch(format!("expected [3, s, s] pixels, got [{c}, {h}, {w}]")));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::ShapeMismatch(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { pixels })
    }

    pub fn resolution(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    /// 8-bit RGB in, `v / 127.5 - 1` out.
    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let mut px = Array3::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                px[[c, y as usize, x as usize]] = p.0[c] as f64 / 127.5 - 1.0;
            }
        }
        Self::new(px)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let n = self.resolution() as u32;
        RgbImage::from_fn(n, n, |x, y| {
            let mut rgb = [0u8; 3];
            for (c, v) in rgb.iter_mut().enumerate() {
                let p = self.pixels[[c, y as usize, x as usize]];
                *v = ((p + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
            image::Rgb(rgb)
        })
    }

    /// Decodes a PNG/JPEG file, resizing to `resolution` when it differs.
    pub fn load(path: &Path, resolution: usize) -> Result<Self> {
        let img =
            image::open(path).map_err(|e| Error::ImageDecode { path: path.to_path_buf(), message: e.to_string() })?;
        let mut rgb = img.to_rgb8();
        if rgb.width() as usize != resolution || rgb.height() as usize != resolution {
            rgb = image::imageops::resize(&rgb, resolution as u32, resolution as u32, FilterType::Triangle);
        }
        Self::from_rgb8(&rgb)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::ImageDecode { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Hex SHA-256 of the exact pixel bits; the key for cached client queries.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.resolution() as u64).to_le_bytes());
        for v in self.pixels.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Mean squared pixel difference.
    pub fn mse(&self, other: &ImageTensor) -> f64 {
        let d = &self.pixels - &other.pixels;
        d.mapv(|v| v * v).mean().unwrap_or(0.0)
    }
}

/// Stacks images into an `[n, 3, h, w]` constant tensor.
pub fn stack(images: &[ImageTensor]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::EmptyBatch);
    };
    let r = first.resolution();
    let mut out = Array4::zeros((images.len(), 3, r, r));
    for (i, img) in images.iter().enumerate() {
        if img.resolution() != r {
            return Err(Error::ShapeMismatch(format!("image {i} has resolution {}, batch uses {r}", img.resolution())));
        }
        out.slice_mut(s![i, .., .., ..]).assign(&img.pixels);
    }
    Ok(Tensor::constant(out.into_dyn()))
}

/// Splits an `[n, 3, h, w]` tensor back into images, clipping to `[-1, 1]`.
pub fn unstack(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let v = t
        .value()
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::ShapeMismatch(format!("expected [n, 3, h, w], got {:?}", t.shape())))?;
    v.axis_iter(Axis(0)).map(|img| ImageTensor::new(img.mapv(|p| p.clamp(-1.0, 1.0)))).collect()
}

/// Concatenates equally sized images left to right.
pub fn horizontal_strip(images: &[ImageTensor]) -> Result<RgbImage> {
    let Some(first) = images.first() else {
        return Err(Error::EmptyBatch);
    };
    let r = first.resolution() as u32;
    let mut out = RgbImage::new(r * images.len() as u32, r);
    for (i, img) in images.iter().enumerate() {
        image::imageops::replace(&mut out, &img.to_rgb8(), (i as u32 * r) as i64, 0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut px = Array3::zeros((3, 4, 4));
        px[[0, 0, 0]] = 1.5;
        assert!(ImageTensor::new(px).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_within_quantization() {
        let px = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| ((c + y * 3 + x) as f64 / 30.0) * 2.0 - 1.0);
        let img = ImageTensor::new(px).unwrap();
        let back = ImageTensor::from_rgb8(&img.to_rgb8()).unwrap();
        assert!(img.pixels().iter().zip(back.pixels()).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0 + 1e-12));
    }

    #[test]
    fn stack_unstack() {
        let a = ImageTensor::new(Array3::from_elem((3, 4, 4), 0.25)).unwrap();
        let b = ImageTensor::new(Array3::from_elem((3, 4, 4), -0.5)).unwrap();
        let t = stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4, 4]);
        assert_eq!(unstack(&t).unwrap(), vec![a, b]);
    }

    #[test]
    fn hashes_differ_for_different_pixels() {
        let a = ImageTensor::new(Array3::from_elem((3, 4, 4), 0.25)).unwrap();
        let b = ImageTensor::new(Array3::from_elem((3, 4, 4), 0.26)).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
