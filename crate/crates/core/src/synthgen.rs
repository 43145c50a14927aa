//! Procedural spurious-correlation scenes with exact ground truth.
//!
//! Each image holds one foreground shape whose colour defines the class, a
//! solid background that matches the class's own background colour with
//! probability `correlation`, and a few achromatic distractor shapes that
//! never touch the foreground. Shapes are rasterised without anti-aliasing,
//! so the ground-truth masks are exact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::manifest::{write_dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::image::{quantize_u8, ImageTensor};
use crate::mask::{BBox, BinaryMask, MaskSet, MaskSource};
use crate::metrics::InstanceSegmentation;
use crate::sample::LabeledSample;

/// A colour in HSV, hue in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    pub hue: f64,
    pub sat: f64,
    pub val: f64,
}

impl Hsv {
    pub fn to_rgb(self) -> [f32; 3] {
        let h = self.hue.rem_euclid(360.0) / 60.0;
        let c = self.val * self.sat;
        let x = c * (1.0 - (h % 2.0 - 1.0).abs());
        let (r, g, b) = match h as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = self.val - c;
        [r + m, g + m, b + m].map(|v| v.clamp(0.0, 1.0) as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPalette {
    pub foreground: Hsv,
    pub background: Hsv,
}

/// Per-sample colour perturbation, uniform in `[-x, x]` per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub hue: f64,
    pub sat: f64,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub palette: Vec<ClassPalette>,
    pub jitter: Jitter,
    /// Probability that a sample's background is its own class's background.
    pub correlation: f64,
    /// Inclusive range of foreground extents in pixels.
    pub object_size: (usize, usize),
    /// Inclusive range of the number of distractors.
    pub distractors: (usize, usize),
    /// Inclusive range of distractor extents in pixels.
    pub distractor_size: (usize, usize),
    /// Largest dilation/erosion radius applied to candidate masks.
    pub mask_noise: usize,
    pub seed: u64,
}

/// Evenly spaced class hues centred in the toy encoder's hue bins, with each
/// background hue 60 degrees past its foreground hue.
pub fn default_palette(n_classes: usize) -> Vec<ClassPalette> {
    (0..n_classes)
        .map(|c| {
            let hue = 22.5 + 360.0 * c as f64 / n_classes as f64;
            ClassPalette {
                foreground: Hsv {
                    hue,
                    sat: 0.85,
                    val: 0.9,
                },
                background: Hsv {
                    hue: hue + 60.0,
                    sat: 0.7,
                    val: 0.8,
                },
            }
        })
        .collect()
}

impl SynthSpec {
    /// Two classes on 64x64 images, fully correlated backgrounds.
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self::with_classes(n_samples, 2, seed)
    }

    pub fn with_classes(n_samples: usize, n_classes: usize, seed: u64) -> Self {
        Self {
            n_samples,
            height: 64,
            width: 64,
            n_classes,
            palette: default_palette(n_classes),
            jitter: Jitter {
                hue: 8.0,
                sat: 0.08,
                val: 0.08,
            },
            correlation: 1.0,
            object_size: (32, 48),
            distractors: (0, 3),
            distractor_size: (6, 12),
            mask_noise: 2,
            seed,
        }
    }

    pub fn with_correlation(mut self, rho: f64) -> Self {
        self.correlation = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad(format!("correlation {} outside [0, 1]", self.correlation));
        }
        if self.height < 16 || self.width < 16 {
            return bad("synthetic images must be at least 16x16".into());
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.palette.len() != self.n_classes {
            return bad(format!(
                "palette has {} entries for {} classes",
                self.palette.len(),
                self.n_classes
            ));
        }
        let side = self.height.min(self.width);
        for (name, (lo, hi)) in [
            ("object", self.object_size),
            ("distractor", self.distractor_size),
        ] {
            if lo < 3 || lo > hi {
                return bad(format!("{name} size range {lo}..={hi} is invalid"));
            }
            if hi > side {
                return bad(format!(
                    "{name} size {hi} does not fit a {side}-pixel image"
                ));
            }
        }
        if self.distractors.0 > self.distractors.1 {
            return bad("distractor count range is inverted".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class-{c}")).collect()
    }
}

/// Per-sample seed derived from the master seed (SplitMix64 finaliser).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Rectangle,
    Circle,
    Triangle,
}

const SHAPES: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Circle, ShapeKind::Triangle];

/// Rasterise a shape filling the `h x w` box at (`row0`, `col0`).
fn rasterize(
    kind: ShapeKind,
    dims: (usize, usize),
    row0: usize,
    col0: usize,
    h: usize,
    w: usize,
) -> BinaryMask {
    let (hf, wf) = (h as f64, w as f64);
    BinaryMask::from_fn(dims.0, dims.1, |r, c| {
        if r < row0 || c < col0 || r >= row0 + h || c >= col0 + w {
            return false;
        }
        let y = (r - row0) as f64 + 0.5;
        let x = (c - col0) as f64 + 0.5;
        match kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Circle => {
                let (dy, dx) = ((y - hf / 2.0) / (hf / 2.0), (x - wf / 2.0) / (wf / 2.0));
                dy * dy + dx * dx <= 1.0
            }
            // apex at the top centre, base along the bottom row
            ShapeKind::Triangle => (x - wf / 2.0).abs() <= wf / 2.0 * y / hf,
        }
    })
}

/// One generated scene.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub sample: LabeledSample,
    pub image: ImageTensor,
    pub gt_seg: InstanceSegmentation,
    /// Noisy versions of every instance mask plus the background complement,
    /// in shuffled order.
    pub candidates: MaskSet,
    pub bg_class: usize,
    pub shape: ShapeKind,
}

fn jittered(rng: &mut ChaCha8Rng, base: Hsv, j: &Jitter) -> [f32; 3] {
    let mut u = |a: f64| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
    let c = Hsv {
        hue: base.hue + u(j.hue),
        sat: (base.sat + u(j.sat)).clamp(0.0, 1.0),
        val: (base.val + u(j.val)).clamp(0.0, 1.0),
    };
    // snap to the 8-bit grid so PNG storage is lossless
    c.to_rgb().map(|v| quantize_u8(v) as f32 / 255.0)
}

fn place(rng: &mut ChaCha8Rng, dims: (usize, usize), size: (usize, usize)) -> (ShapeKind, BBox) {
    let kind = *SHAPES.choose(rng).expect("non-empty");
    let h = rng.gen_range(size.0..=size.1);
    let w = rng.gen_range(size.0..=size.1);
    let row0 = rng.gen_range(0..=dims.0 - h);
    let col0 = rng.gen_range(0..=dims.1 - w);
    (
        kind,
        BBox {
            row0,
            col0,
            row1: row0 + h,
            col1: col0 + w,
        },
    )
}

const DISTRACTOR_TRIES: usize = 50;
const FG_MARGIN: usize = 5;

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthSample> {
    let seed = derive_seed(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let dims = (spec.height, spec.width);

    let label = index % spec.n_classes;
    let bg_class = if rng.gen_bool(spec.correlation) {
        label
    } else {
        let k = rng.gen_range(0..spec.n_classes - 1);
        if k >= label {
            k + 1
        } else {
            k
        }
    };
    let bg = jittered(&mut rng, spec.palette[bg_class].background, &spec.jitter);
    let fg = jittered(&mut rng, spec.palette[label].foreground, &spec.jitter);

    let (shape, slot) = place(&mut rng, dims, spec.object_size);
    let fg_mask = rasterize(
        shape,
        dims,
        slot.row0,
        slot.col0,
        slot.height(),
        slot.width(),
    );
    let fg_box = fg_mask.bbox().expect("shapes of extent >= 3 are non-empty");

    let n_distractors = rng.gen_range(spec.distractors.0..=spec.distractors.1);
    let keep_out = fg_box.expanded(FG_MARGIN);
    let mut boxes: Vec<BBox> = Vec::new();
    let mut distractors: Vec<(BinaryMask, [f32; 3])> = Vec::new();
    for _ in 0..n_distractors {
        for _ in 0..DISTRACTOR_TRIES {
            let (kind, b) = place(&mut rng, dims, spec.distractor_size);
            if b.intersects(&keep_out) || boxes.iter().any(|o| o.intersects(&b)) {
                continue;
            }
            let level = if rng.gen_bool(0.5) {
                rng.gen_range(0.15..0.35)
            } else {
                rng.gen_range(0.65..0.9)
            };
            let gray = quantize_u8(level) as f32 / 255.0;
            boxes.push(b);
            distractors.push((
                rasterize(kind, dims, b.row0, b.col0, b.height(), b.width()),
                [gray; 3],
            ));
            break;
        }
    }

    let plane = dims.0 * dims.1;
    let mut data = vec![0f32; 3 * plane];
    let mut labels = vec![0u16; plane];
    for i in 0..plane {
        let (r, c) = (i / dims.1, i % dims.1);
        let mut color = bg;
        if fg_mask.get(r, c) {
            color = fg;
            labels[i] = 1;
        }
        for (k, (m, col)) in distractors.iter().enumerate() {
            if m.get(r, c) {
                color = *col;
                labels[i] = k as u16 + 2;
            }
        }
        for ch in 0..3 {
            data[ch * plane + i] = color[ch];
        }
    }
    let image = ImageTensor::new(3, dims.0, dims.1, data)?;
    let gt_seg = InstanceSegmentation::new(dims.0, dims.1, labels)?;
    let gt_masks = gt_seg.to_mask_set();

    let radius = spec.mask_noise as i64;
    let mut candidates: Vec<BinaryMask> = gt_masks
        .masks
        .iter()
        .map(|m| {
            let r = noise_rng.gen_range(-radius..=radius);
            match r.cmp(&0) {
                std::cmp::Ordering::Greater => m.dilate(r as usize),
                std::cmp::Ordering::Less => m.erode((-r) as usize),
                std::cmp::Ordering::Equal => m.clone(),
            }
        })
        .collect();
    let objects = gt_masks
        .masks
        .iter()
        .try_fold(BinaryMask::empty(dims.0, dims.1), |acc, m| acc.union(m))?;
    candidates.push(objects.complement());
    candidates.shuffle(&mut noise_rng);

    let mut sample = LabeledSample::new(format!("{index:06}"), image.clone(), label);
    sample.group = Some(label * spec.n_classes + bg_class);
    sample.gt_bbox = Some(fg_box);
    sample.gt_masks = Some(gt_masks);
    sample.fg_instance = Some(0);
    Ok(SynthSample {
        sample,
        image,
        gt_seg,
        candidates: MaskSet::new(candidates, MaskSource::Synthetic)?,
        bg_class,
        shape,
    })
}

/// Generate `spec.n_samples` scenes; output depends only on the spec.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    (0..spec.n_samples)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

/// Common split (`correlation = 1`) and counter split (`correlation = 0`,
/// independent seed) with the same class balance.
pub fn counter_split(spec: &SynthSpec) -> Result<(Vec<SynthSample>, Vec<SynthSample>)> {
    let common = generate(&spec.clone().with_correlation(1.0))?;
    let mut counter_spec = spec.clone().with_correlation(0.0);
    counter_spec.seed = derive_seed(spec.seed, u64::MAX);
    Ok((common, generate(&counter_spec)?))
}

/// Write scenes in the on-disk interchange format and return the manifest path.
pub fn write_synth_dataset(
    root: &std::path::Path,
    manifest_name: &str,
    spec: &SynthSpec,
    samples: &[SynthSample],
) -> Result<std::path::PathBuf> {
    let records: Vec<SampleRecord> = samples
        .iter()
        .map(|s| SampleRecord {
            id: &s.sample.id,
            image: &s.image,
            candidates: Some(&s.candidates),
            gt_seg: Some(&s.gt_seg),
            gt_bbox: s.sample.gt_bbox,
            label: s.sample.label,
            group: s.sample.group,
            fg_instance: Some(1),
        })
        .collect();
    write_dataset(root, manifest_name, &spec.class_names(), &records)
}
