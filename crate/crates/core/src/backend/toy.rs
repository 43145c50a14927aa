//! Analytic toy encoder and centroid classifier heads.
//!
//! The toy embedding has 12 dimensions: the mean RGB of the region, an 8-bin
//! hue histogram of the region (45 degree bins starting at red, achromatic
//! pixels counted in no bin, values are fractions of region pixels) and the
//! region's area fraction. The region is the `alpha > 0` part of a 4-channel
//! image or the whole of a 3-channel image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClassifierHead, Encoder, EncoderDescriptor};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::BinaryMask;
use crate::maskops::{apply_mask, ApplicationMode, AppliedImage};
use crate::prob::Embedding;
use crate::sample::LabeledSample;

pub const TOY_DIM: usize = 12;
pub const HUE_BINS: usize = 8;
/// Pixels with `max(rgb) - min(rgb)` below this have no hue.
pub const ACHROMATIC_CHROMA: f32 = 0.08;

/// Hue in degrees `[0, 360)`, or `None` for achromatic pixels.
pub fn hue_degrees(rgb: [f32; 3]) -> Option<f64> {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma < ACHROMATIC_CHROMA as f64 {
        return None;
    }
    let h = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    Some((h * 60.0).rem_euclid(360.0))
}

pub fn hue_bin(hue: f64) -> usize {
    ((hue / (360.0 / HUE_BINS as f64)) as usize).min(HUE_BINS - 1)
}

/// Toy features of an image; see the module docs for the layout.
pub fn toy_features(image: &ImageTensor) -> Embedding {
    let (h, w) = image.dims();
    let alpha = (image.channels() == 4).then(|| image.plane(3));
    let mut sum = [0f64; 3];
    let mut hist = [0u64; HUE_BINS];
    let mut n = 0u64;
    for r in 0..h {
        for c in 0..w {
            if let Some(a) = alpha {
                if a[r * w + c] <= 0.0 {
                    continue;
                }
            }
            let px = image.rgb(r, c);
            for k in 0..3 {
                sum[k] += px[k] as f64;
            }
            if let Some(hue) = hue_degrees(px) {
                hist[hue_bin(hue)] += 1;
            }
            n += 1;
        }
    }
    let mut v = Vec::with_capacity(TOY_DIM);
    let denom = n.max(1) as f64;
    v.extend(sum.iter().map(|s| (s / denom) as f32));
    v.extend(hist.iter().map(|&k| (k as f64 / denom) as f32));
    v.push((n as f64 / (h * w) as f64) as f32);
    Embedding::new(v).expect("finite features")
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    descriptor: EncoderDescriptor,
}

impl ToyEncoder {
    pub fn new() -> Self {
        Self {
            descriptor: EncoderDescriptor {
                name: "toy".into(),
                dim: TOY_DIM,
                accepts_alpha: true,
            },
        }
    }
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder for ToyEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn embed(&self, _sample_id: &str, applied: &AppliedImage) -> Result<Embedding> {
        Ok(toy_features(&applied.image))
    }
}

fn unit(v: &[f32]) -> Vec<f64> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter()
        .map(|&x| if n > 0.0 { x as f64 / n } else { 0.0 })
        .collect()
}

fn centroids(features: &[(usize, &Embedding)], n_classes: usize) -> Result<Vec<Vec<f32>>> {
    let dim = features
        .first()
        .map(|(_, e)| e.dim())
        .ok_or_else(|| Error::InvalidInput("no training features".into()))?;
    let mut sums = vec![vec![0f64; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (label, e) in features {
        if *label >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {label} outside [0, {n_classes})"
            )));
        }
        if e.dim() != dim {
            return Err(Error::InvalidInput(
                "training features differ in dim".into(),
            ));
        }
        for (s, u) in sums[*label].iter_mut().zip(unit(e.values())) {
            *s += u;
        }
        counts[*label] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::InvalidInput(format!(
            "no training features for class {c}"
        )));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, k)| s.into_iter().map(|x| (x / k as f64) as f32).collect())
        .collect())
}

/// Head whose class embeddings are the means of the L2-normalised features
/// of each class.
pub fn fit_centroid_head(
    features: &[(usize, Embedding)],
    n_classes: usize,
    temperature: f64,
) -> Result<ClassifierHead> {
    let refs: Vec<(usize, &Embedding)> = features.iter().map(|(l, e)| (*l, e)).collect();
    ClassifierHead::new(&centroids(&refs, n_classes)?, temperature, None)
}

/// `members` centroid heads, each fitted on a per-class bootstrap resample.
pub fn bootstrap_heads(
    features: &[(usize, Embedding)],
    n_classes: usize,
    members: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<ClassifierHead>> {
    let mut by_class: Vec<Vec<&Embedding>> = vec![Vec::new(); n_classes];
    for (l, e) in features {
        if *l >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {l} outside [0, {n_classes})"
            )));
        }
        by_class[*l].push(e);
    }
    (0..members)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut sample = Vec::with_capacity(features.len());
            for (c, items) in by_class.iter().enumerate() {
                for _ in 0..items.len() {
                    sample.push((c, items[rng.gen_range(0..items.len())]));
                }
            }
            ClassifierHead::new(&centroids(&sample, n_classes)?, temperature, None)
        })
        .collect()
}

/// Toy features of each sample's whole image after applying `mode` with a
/// full mask, paired with the sample label.
pub fn training_features(
    samples: &[LabeledSample],
    mode: &ApplicationMode,
) -> Result<Vec<(usize, Embedding)>> {
    samples
        .par_iter()
        .map(|s| {
            let image = s.image.load()?;
            let full = BinaryMask::full(image.height(), image.width());
            let applied = apply_mask(mode, &image, &full, None)?;
            Ok((s.label, toy_features(&applied.image)))
        })
        .collect::<Result<Vec<_>>>()
}

/// Centroid heads over unmasked training images: a single full fit when
/// `members == 1`, per-class bootstrap fits otherwise.
pub fn fit_toy_heads(
    samples: &[LabeledSample],
    n_classes: usize,
    mode: &ApplicationMode,
    members: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<ClassifierHead>> {
    let features = training_features(samples, mode)?;
    match members {
        0 => Err(Error::Config("ensemble needs at least one member".into())),
        1 => Ok(vec![fit_centroid_head(&features, n_classes, temperature)?]),
        m => bootstrap_heads(&features, n_classes, m, temperature, seed),
    }
}
