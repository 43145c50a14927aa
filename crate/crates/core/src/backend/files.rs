//! Mask generators and encoders backed by precomputed data.

use std::collections::HashMap;
use std::path::PathBuf;

use super::manifest::Dataset;
use super::oce::EmbeddingTable;
use super::{embedding_key, Encoder, EncoderDescriptor, GeneratorDescriptor, MaskGenerator};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{MaskSet, MaskSource};
use crate::maskops::AppliedImage;
use crate::prob::Embedding;
use crate::sample::LabeledSample;

/// Returns no masks; every sample falls back to the whole image.
#[derive(Debug, Clone)]
pub struct NoMasks {
    descriptor: GeneratorDescriptor,
}

impl NoMasks {
    pub fn new() -> Self {
        Self {
            descriptor: GeneratorDescriptor {
                name: "none".into(),
                source: MaskSource::Synthetic,
            },
        }
    }
}

impl Default for NoMasks {
    fn default() -> Self {
        Self::new()
    }
}

impl MaskGenerator for NoMasks {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate(&self, _sample: &LabeledSample, _image: &ImageTensor) -> Result<MaskSet> {
        Ok(MaskSet::empty(MaskSource::Synthetic))
    }
}

/// The sample's own ground-truth instance masks.
#[derive(Debug, Clone)]
pub struct GroundTruthMasks {
    descriptor: GeneratorDescriptor,
}

impl GroundTruthMasks {
    pub fn new() -> Self {
        Self {
            descriptor: GeneratorDescriptor {
                name: "ground-truth".into(),
                source: MaskSource::GroundTruth,
            },
        }
    }
}

impl Default for GroundTruthMasks {
    fn default() -> Self {
        Self::new()
    }
}

impl MaskGenerator for GroundTruthMasks {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate(&self, sample: &LabeledSample, image: &ImageTensor) -> Result<MaskSet> {
        let set = sample
            .gt_masks
            .clone()
            .ok_or_else(|| Error::InvalidInput("sample has no ground-truth masks".into()))?;
        set.ensure_dims(image.dims())?;
        Ok(set)
    }
}

/// Mask sets held in memory, keyed by sample id.
#[derive(Debug, Clone)]
pub struct PrecomputedMasks {
    descriptor: GeneratorDescriptor,
    sets: HashMap<String, MaskSet>,
}

impl PrecomputedMasks {
    pub fn new(
        name: impl Into<String>,
        source: MaskSource,
        sets: HashMap<String, MaskSet>,
    ) -> Self {
        Self {
            descriptor: GeneratorDescriptor {
                name: name.into(),
                source,
            },
            sets,
        }
    }
}

impl MaskGenerator for PrecomputedMasks {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate(&self, sample: &LabeledSample, image: &ImageTensor) -> Result<MaskSet> {
        let set = self.sets.get(&sample.id).cloned().ok_or_else(|| {
            Error::InvalidInput(format!("no precomputed masks for sample {:?}", sample.id))
        })?;
        set.ensure_dims(image.dims())?;
        Ok(set)
    }
}

/// Candidate masks read from each sample's `masks_dir` on demand.
#[derive(Debug, Clone)]
pub struct FileMasks {
    descriptor: GeneratorDescriptor,
    dirs: HashMap<String, (PathBuf, usize)>,
}

impl FileMasks {
    pub fn from_dataset(name: impl Into<String>, source: MaskSource, dataset: &Dataset) -> Self {
        let dirs = dataset
            .entries
            .iter()
            .filter_map(|e| {
                e.masks_dir
                    .clone()
                    .map(|d| (e.sample.id.clone(), (d, e.mask_count)))
            })
            .collect();
        Self {
            descriptor: GeneratorDescriptor {
                name: name.into(),
                source,
            },
            dirs,
        }
    }
}

impl MaskGenerator for FileMasks {
    fn descriptor(&self) -> &GeneratorDescriptor {
        &self.descriptor
    }

    fn generate(&self, sample: &LabeledSample, image: &ImageTensor) -> Result<MaskSet> {
        let Some((dir, count)) = self.dirs.get(&sample.id) else {
            return Err(Error::InvalidInput(format!(
                "sample {:?} has no masks_dir",
                sample.id
            )));
        };
        let mut masks = Vec::with_capacity(*count);
        for k in 0..*count {
            masks.push(super::io::read_mask_png(&dir.join(format!("{k}.png")))?);
        }
        let set = MaskSet::new(masks, self.descriptor.source)?;
        set.ensure_dims(image.dims())?;
        Ok(set)
    }
}

/// Replays exported embeddings keyed by `sample_id` or `sample_id/mask_index`.
#[derive(Debug, Clone)]
pub struct FileEncoder {
    descriptor: EncoderDescriptor,
    table: EmbeddingTable,
}

impl FileEncoder {
    pub fn new(name: impl Into<String>, table: EmbeddingTable, accepts_alpha: bool) -> Self {
        Self {
            descriptor: EncoderDescriptor {
                name: name.into(),
                dim: table.dim(),
                accepts_alpha,
            },
            table,
        }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }
}

impl Encoder for FileEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn embed(&self, sample_id: &str, applied: &AppliedImage) -> Result<Embedding> {
        let key = embedding_key(sample_id, applied.source_mask_index);
        let row = self.table.get(&key).ok_or(Error::EmbeddingNotFound(key))?;
        Embedding::new(row.to_vec())
    }
}
