//! Small synthetic datasets for desk-scale experiments.

use crate::dataset::{LabeledDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::derive_stream;
use crate::tensor::ImageTensor;

/// Two linearly separable classes in the plane, stored as `1×1×2` images.
///
/// Points have margin at least `0.3` from a rotated separating line.
pub fn separable_points(n: usize, seed: u64, split: Split) -> LabeledDataset {
    let mut r = derive_stream(seed, "separable", 0);
    let items = (0..n)
        .map(|i| {
            let y = i % 2;
            let sign = if y == 0 { -1.0 } else { 1.0 };
            let a = sign * r.uniform_in(0.3, 1.0);
            let b = r.uniform_in(-1.0, 1.0);
            let x0 = (0.8 * a - 0.6 * b) as f32;
            let x1 = (0.6 * a + 0.8 * b) as f32;
            let img = ImageTensor::new(1, 1, 2, vec![x0, x1]).expect("finite");
            Sample::new(format!("{split}-{i:05}"), img, y)
        })
        .collect();
    LabeledDataset::new(items, 2, split).expect("valid labels")
}

/// Gray images with one bright class-specific blob, optionally with a dark
/// square planted in every image of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub classes: usize,
    pub size: usize,
    pub per_class: usize,
    /// Std of the additive pixel noise.
    pub noise: f64,
    pub background: f64,
    /// Peak height of the blob above the background.
    pub blob_amplitude: f64,
    pub blob_radius: f64,
    /// `(class, side)`: that class also carries a black square of this side at a random spot.
    pub dark_square: Option<(usize, usize)>,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            classes: 3,
            size: 16,
            per_class: 100,
            noise: 0.1,
            background: 0.5,
            blob_amplitude: 0.5,
            blob_radius: 2.0,
            dark_square: None,
        }
    }
}

impl BlobConfig {
    /// Three classes where class 2 also shows an 8×8 black square, the same
    /// shape as a black occluder covering a quarter of the image.
    pub fn planted_confound(per_class: usize) -> Self {
        BlobConfig {
            per_class,
            dark_square: Some((2, 8)),
            ..Self::default()
        }
    }

    /// Blob centers spaced evenly on a circle around the image center.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let rad = self.size as f64 / 4.0;
        (0..self.classes)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / self.classes as f64;
                (c + rad * t.sin(), c + rad * t.cos())
            })
            .collect()
    }

    pub fn generate(&self, split: Split, seed: u64) -> Result<LabeledDataset> {
        if self.classes < 2 || self.size == 0 || self.per_class == 0 {
            return Err(Error::param("need >= 2 classes, positive size and per_class"));
        }
        if let Some((k, side)) = self.dark_square {
            if k >= self.classes || side == 0 || side > self.size {
                return Err(Error::param("dark square class or side out of range"));
            }
        }
        let s = self.size;
        let centers = self.centers();
        let mut items = Vec::with_capacity(self.classes * self.per_class);
        for i in 0..self.classes * self.per_class {
            let label = i % self.classes;
            let mut r = derive_stream(seed, &format!("blob-{split}"), i as u64);
            let (cy, cx) = centers[label];
            let (jy, jx) = (r.uniform_in(-1.0, 1.0), r.uniform_in(-1.0, 1.0));
            let mut px = vec![0f32; s * s];
            for y in 0..s {
                for x in 0..s {
                    let d2 = (y as f64 - cy - jy).powi(2) + (x as f64 - cx - jx).powi(2);
                    let bump = self.blob_amplitude * (-d2 / (2.0 * self.blob_radius * self.blob_radius)).exp();
                    px[y * s + x] = (self.background + bump + self.noise * r.normal()) as f32;
                }
            }
            if let Some((k, side)) = self.dark_square {
                if k == label {
                    let y0 = r.below(s - side + 1);
                    let x0 = r.below(s - side + 1);
                    for y in y0..y0 + side {
                        px[y * s + x0..y * s + x0 + side].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
            let img = ImageTensor::new(1, s, s, px)?;
            items.push(Sample::new(format!("{split}-{i:05}"), img, label));
        }
        LabeledDataset::new(items, self.classes, split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let cfg = BlobConfig::planted_confound(10);
        let a = cfg.generate(Split::Train, 1).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, cfg.generate(Split::Train, 1).unwrap());
        assert_ne!(a, cfg.generate(Split::Train, 2).unwrap());
        let dark = |s: &Sample| s.image.data().iter().filter(|&&v| v == 0.0).count();
        for s in a.items() {
            if s.label == 2 {
                assert_eq!(dark(s), 64);
            } else {
                assert_eq!(dark(s), 0);
            }
        }
    }

    #[test]
    fn separable_points_alternate_labels() {
        let d = separable_points(6, 0, Split::Train);
        let labels: Vec<_> = d.items().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);
    }
}
