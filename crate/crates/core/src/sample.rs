//! Labeled samples and lazily resolved image references.

use std::path::PathBuf;
use std::sync::Arc;

use crate::backend::io;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{BBox, BinaryMask, MaskSet};

/// Either an image already in memory or a PNG on disk (optionally checksummed).
#[derive(Debug, Clone)]
pub enum ImageSource {
    InMemory(Arc<ImageTensor>),
    File {
        path: PathBuf,
        sha256: Option<String>,
    },
}

impl ImageSource {
    pub fn load(&self) -> Result<Arc<ImageTensor>> {
        match self {
            ImageSource::InMemory(img) => Ok(Arc::clone(img)),
            ImageSource::File { path, sha256 } => {
                if let Some(expected) = sha256 {
                    io::verify_sha256(path, expected)?;
                }
                io::read_rgb_png(path).map(Arc::new)
            }
        }
    }
}

impl From<ImageTensor> for ImageSource {
    fn from(img: ImageTensor) -> Self {
        ImageSource::InMemory(Arc::new(img))
    }
}

/// One evaluation sample: image, label `y`, optional group and ground truth.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub image: ImageSource,
    pub label: usize,
    pub group: Option<usize>,
    /// Ground-truth instance masks.
    pub gt_masks: Option<MaskSet>,
    /// Index into `gt_masks` of the labelled foreground object, when known.
    pub fg_instance: Option<usize>,
    pub gt_bbox: Option<BBox>,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, image: impl Into<ImageSource>, label: usize) -> Self {
        Self {
            id: id.into(),
            image: image.into(),
            label,
            group: None,
            gt_masks: None,
            fg_instance: None,
            gt_bbox: None,
        }
    }

    /// Ground-truth foreground mask: the designated instance if present,
    /// otherwise the bounding box rasterised onto the grid.
    pub fn gt_foreground_mask(&self, dims: (usize, usize)) -> Option<BinaryMask> {
        if let (Some(set), Some(i)) = (&self.gt_masks, self.fg_instance) {
            if let Some(m) = set.masks.get(i) {
                return Some(m.clone());
            }
        }
        self.gt_bbox
            .map(|b| BinaryMask::from_bbox(dims.0, dims.1, &b))
    }

    pub fn validate(&self, num_classes: usize, dims: (usize, usize)) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label {} outside [0, {num_classes})",
                self.label
            ))
            .for_sample(&self.id));
        }
        if let Some(b) = &self.gt_bbox {
            if b.is_empty() || !b.fits_within(dims.0, dims.1) {
                return Err(
                    Error::InvalidInput(format!("bbox {b:?} outside image bounds"))
                        .for_sample(&self.id),
                );
            }
        }
        if let Some(set) = &self.gt_masks {
            set.ensure_dims(dims).map_err(|e| e.for_sample(&self.id))?;
        }
        Ok(())
    }
}
