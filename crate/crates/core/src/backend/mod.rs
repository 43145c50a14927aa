//! Mask generators, image encoders and classifier heads.
//!
//! Model inference lives behind the [`MaskGenerator`] and [`Encoder`] traits.
//! Two families of implementations ship here: file-backed ones that replay
//! exported masks and embeddings, and the analytic toy encoder used for
//! desk-scale experiments.

pub mod config;
pub mod files;
pub mod io;
pub mod manifest;
pub mod oce;
pub mod toy;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{MaskSet, MaskSource};
use crate::maskops::AppliedImage;
use crate::prob::{argmax, softmax, ClassProbabilities, Embedding};
use crate::sample::LabeledSample;

pub const DEFAULT_TEMPERATURE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDescriptor {
    pub name: String,
    pub source: MaskSource,
}

/// Produces candidate masks for an image.
pub trait MaskGenerator: Send + Sync {
    fn descriptor(&self) -> &GeneratorDescriptor;

    /// Candidate masks for `sample`, all with the dimensions of `image`.
    fn generate(&self, sample: &LabeledSample, image: &ImageTensor) -> Result<MaskSet>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    pub dim: usize,
    pub accepts_alpha: bool,
}

/// Row key of an embedding: `sample_id` for the whole image,
/// `sample_id/mask_index` for an applied candidate mask.
pub fn embedding_key(sample_id: &str, mask_index: Option<usize>) -> String {
    match mask_index {
        Some(k) => format!("{sample_id}/{k}"),
        None => sample_id.to_string(),
    }
}

/// Image encoder `ψ`.
pub trait Encoder: Send + Sync {
    fn descriptor(&self) -> &EncoderDescriptor;

    /// Raw embedding; callers go through [`Encoder::encode`].
    fn embed(&self, sample_id: &str, applied: &AppliedImage) -> Result<Embedding>;

    /// Embedding of an applied image, with capability and dimension checks.
    fn encode(&self, sample_id: &str, applied: &AppliedImage) -> Result<Embedding> {
        let desc = self.descriptor();
        if applied.image.channels() == 4 && !desc.accepts_alpha {
            return Err(Error::Config(format!(
                "encoder {} does not accept alpha-channel inputs",
                desc.name
            )));
        }
        let emb = self.embed(sample_id, applied)?;
        if emb.dim() != desc.dim {
            return Err(Error::InvalidInput(format!(
                "encoder {} produced dim {}, expected {}",
                desc.name,
                emb.dim(),
                desc.dim
            )));
        }
        Ok(emb)
    }
}

fn l2_normalized(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| x as f64 / norm).collect())
}

/// Zero-shot head: temperature-scaled cosine similarity to per-class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// Unit-norm rows, one per class.
    class_embeddings: Vec<Vec<f64>>,
    temperature: f64,
    group_map: Option<Vec<usize>>,
}

impl ClassifierHead {
    pub fn new(
        class_embeddings: &[Vec<f32>],
        temperature: f64,
        group_map: Option<Vec<usize>>,
    ) -> Result<Self> {
        if class_embeddings.len() < 2 {
            return Err(Error::Config(
                "classifier head needs at least two classes".into(),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let dim = class_embeddings[0].len();
        let mut rows = Vec::with_capacity(class_embeddings.len());
        for (c, row) in class_embeddings.iter().enumerate() {
            if row.len() != dim || dim == 0 {
                return Err(Error::Config(format!(
                    "class embedding {c} has dim {}, expected {dim}",
                    row.len()
                )));
            }
            rows.push(
                l2_normalized(row)
                    .ok_or_else(|| Error::Config(format!("class embedding {c} has zero norm")))?,
            );
        }
        if let Some(map) = &group_map {
            if map.len() != rows.len() {
                return Err(Error::Config(format!(
                    "group map has {} entries for {} classes",
                    map.len(),
                    rows.len()
                )));
            }
        }
        Ok(Self {
            class_embeddings: rows,
            temperature,
            group_map,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.class_embeddings[0].len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn group_map(&self) -> Option<&[usize]> {
        self.group_map.as_deref()
    }

    pub fn class_embeddings(&self) -> &[Vec<f64>] {
        &self.class_embeddings
    }

    /// `temperature · cos(emb, class_c)` for every class.
    pub fn logits(&self, emb: &Embedding) -> Result<Vec<f64>> {
        if emb.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "embedding dim {} != head dim {}",
                emb.dim(),
                self.dim()
            )));
        }
        let unit = l2_normalized(emb.values())
            .ok_or_else(|| Error::InvalidInput("embedding has zero norm".into()))?;
        Ok(self
            .class_embeddings
            .iter()
            .map(|row| self.temperature * row.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    pub fn classify(&self, emb: &Embedding) -> Result<ClassProbabilities> {
        softmax(&self.logits(emb)?)
    }

    /// Group of the fine-grained class with the highest score (logits or
    /// probabilities give the same answer).
    pub fn group_predict(&self, scores: &[f64]) -> Result<usize> {
        let map = self
            .group_map
            .as_ref()
            .ok_or_else(|| Error::Config("classifier head has no group map".into()))?;
        if scores.len() != map.len() {
            return Err(Error::InvalidInput(format!(
                "{} scores for {} classes",
                scores.len(),
                map.len()
            )));
        }
        Ok(map[argmax(scores)])
    }

    /// Label-space prediction: the group of the argmax class when a group map
    /// is present, else the argmax class itself.
    pub fn predict(&self, probs: &ClassProbabilities) -> usize {
        let c = probs.argmax();
        match &self.group_map {
            Some(map) => map[c],
            None => c,
        }
    }
}

#[derive(Clone)]
pub struct EnsembleMember {
    pub encoder: Arc<dyn Encoder>,
    pub head: ClassifierHead,
}

impl std::fmt::Debug for EnsembleMember {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnsembleMember")
            .field("encoder", self.encoder.descriptor())
            .field("classes", &self.head.num_classes())
            .finish()
    }
}

/// `M` (encoder, head) pairs over a shared class set.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    members: Vec<EnsembleMember>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
        let classes = first.head.num_classes();
        let groups = first.head.group_map().map(<[usize]>::to_vec);
        for (i, m) in members.iter().enumerate() {
            if m.head.num_classes() != classes {
                return Err(Error::Config(format!(
                    "member {i} has {} classes, member 0 has {classes}",
                    m.head.num_classes()
                )));
            }
            if m.head.group_map().map(<[usize]>::to_vec) != groups {
                return Err(Error::Config(format!(
                    "member {i} has a different group map"
                )));
            }
            let d = m.encoder.descriptor().dim;
            if d != m.head.dim() {
                return Err(Error::Config(format!(
                    "member {i}: encoder dim {d} != head dim {}",
                    m.head.dim()
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn single(encoder: Arc<dyn Encoder>, head: ClassifierHead) -> Result<Self> {
        Self::new(vec![EnsembleMember { encoder, head }])
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.members[0].head.num_classes()
    }

    pub fn group_map(&self) -> Option<&[usize]> {
        self.members[0].head.group_map()
    }

    /// Number of labels predictions range over.
    pub fn num_labels(&self) -> usize {
        match self.group_map() {
            Some(map) => map.iter().max().map_or(0, |g| g + 1),
            None => self.num_classes(),
        }
    }
}
