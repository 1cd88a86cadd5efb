//! Labeled image sets and the synthetic orientation task.
//!
//! Fixture file (little-endian): `"ALDS" | version u32 = 1 | count u32 | channels u32 |
//! height u32 | width u32 | classes u32 | train_count u32 | count × c × h × w f32 |
//! count × u16 labels`. The first `train_count` samples form the training split.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DecodeError, Error, Result};
use crate::scalar::Scalar;
use crate::sparse_conv::FeatureMap;

pub const DATASET_MAGIC: [u8; 4] = *b"ALDS";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    images: Vec<FeatureMap<T>>,
    labels: Vec<usize>,
    classes: usize,
    train_len: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(images: Vec<FeatureMap<T>>, labels: Vec<usize>, classes: usize, train_len: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dimension(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if train_len > images.len() {
            return Err(Error::Dimension("training split larger than the dataset".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!("label {l} outside {classes} classes")));
        }
        if let Some(first) = images.first() {
            let dims = (first.channels(), first.height(), first.width());
            if images.iter().any(|im| (im.channels(), im.height(), im.width()) != dims) {
                return Err(Error::Dimension("images differ in shape".into()));
            }
        }
        Ok(Self { images, labels, classes, train_len })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image(&self, i: usize) -> &FeatureMap<T> {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|im| (im.channels(), im.height(), im.width()))
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.train_len
    }

    pub fn validation_indices(&self) -> std::ops::Range<usize> {
        self.train_len..self.images.len()
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            images: self
                .images
                .iter()
                .map(|im| {
                    FeatureMap::new(
                        im.channels(),
                        im.height(),
                        im.width(),
                        im.values().iter().map(|v| U::of(v.as_f64())).collect(),
                    )
                    .expect("same dims")
                })
                .collect(),
            labels: self.labels.clone(),
            classes: self.classes,
            train_len: self.train_len,
        }
    }
}

/// Deterministic 1×16×16 images of oriented stripes: class `k` has orientation
/// `π·k/classes`, with random phase, frequency jitter, contrast and additive noise.
/// Labels are balanced (counts differ by at most one) and 20% of the samples, rounded
/// down, are held out for validation.
pub fn make_synthetic_task(seed: u64, classes: usize, samples: usize) -> Result<LabeledDataset<f32>> {
    if classes < 2 {
        return Err(Error::Domain("at least two classes are required".into()));
    }
    const SIDE: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let images = labels
        .iter()
        .map(|&label| {
            let angle = PI * label as f64 / classes as f64 + rng.gen_range(-0.08..0.08);
            let (dy, dx) = angle.sin_cos();
            let freq = rng.gen_range(0.55..0.8);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let contrast = rng.gen_range(0.7..1.2);
            FeatureMap::from_fn(1, SIDE, SIDE, |_, y, x| {
                let t = (x as f64 - 7.5) * dx + (y as f64 - 7.5) * dy;
                let noise: f64 = rng.gen_range(-0.45..0.45);
                (contrast * (freq * t + phase).sin() + noise) as f32
            })
        })
        .collect();
    let train_len = samples - samples / 5;
    LabeledDataset::new(images, labels, classes, train_len)
}

impl LabeledDataset<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.dims().unwrap_or((0, 0, 0));
        let mut out = Vec::new();
        out.extend_from_slice(&DATASET_MAGIC);
        for v in [DATASET_VERSION as usize, self.len(), c, h, w, self.classes, self.train_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for im in &self.images {
            for v in im.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != DATASET_MAGIC {
            let mut found = [0u8; 4];
            found[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
            return Err(DecodeError::BadMagic { expected: DATASET_MAGIC, found }.into());
        }
        if bytes.len() < 32 {
            return Err(DecodeError::Truncated { offset: bytes.len(), needed: 32 - bytes.len() }.into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != DATASET_VERSION as usize {
            return Err(DecodeError::Version(word(0) as u32).into());
        }
        let (count, c, h, w, classes, train_len) = (word(1), word(2), word(3), word(4), word(5), word(6));
        let pixels = c.checked_mul(h).and_then(|v| v.checked_mul(w));
        let expected = pixels
            .and_then(|p| p.checked_mul(count))
            .and_then(|p| p.checked_mul(4))
            .and_then(|p| p.checked_add(count * 2 + 32))
            .ok_or_else(|| DecodeError::Invalid("dataset dimensions overflow".into()))?;
        if bytes.len() < expected {
            return Err(DecodeError::Truncated { offset: bytes.len(), needed: expected - bytes.len() }.into());
        }
        if bytes.len() > expected {
            return Err(DecodeError::Trailing(bytes.len() - expected).into());
        }
        let pixels = pixels.unwrap();
        let body = &bytes[32..32 + count * pixels * 4];
        let images = body
            .chunks_exact(pixels * 4)
            .map(|chunk| {
                let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                FeatureMap::new(c, h, w, values)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| DecodeError::Invalid(e.to_string()))?;
        let labels = bytes[32 + count * pixels * 4..]
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        Self::new(images, labels, classes, train_len).map_err(|e| DecodeError::Invalid(e.to_string()).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = make_synthetic_task(3, 4, 50).unwrap().to_bytes();
        let b = make_synthetic_task(3, 4, 50).unwrap().to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic_task(4, 4, 50).unwrap().to_bytes());
    }

    #[test]
    fn balanced_labels() {
        let d = make_synthetic_task(1, 3, 100).unwrap();
        let mut counts = [0usize; 3];
        for &l in d.labels() {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(d.train_indices(), 0..80);
        assert_eq!(d.validation_indices(), 80..100);
    }

    #[test]
    fn needs_two_classes() {
        assert!(make_synthetic_task(1, 1, 10).is_err());
    }

    #[test]
    fn fixture_roundtrip_and_errors() {
        let d = make_synthetic_task(9, 4, 12).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 32 + 12 * 256 * 4 + 12 * 2);
        assert_eq!(LabeledDataset::from_bytes(&bytes).unwrap(), d);
        assert!(matches!(LabeledDataset::from_bytes(&bytes[..100]), Err(Error::Decode(DecodeError::Truncated { .. }))));
        assert!(matches!(LabeledDataset::from_bytes(b"ALCS"), Err(Error::Decode(DecodeError::BadMagic { .. }))));
        let mut bad_label = bytes.clone();
        let n = bad_label.len();
        bad_label[n - 2] = 9;
        assert!(LabeledDataset::from_bytes(&bad_label).is_err());
    }
}
