//! Training-free object-centric classification.
//!
//! An image is split into candidate object masks, each mask is applied to
//! the image and encoded, a foreground score picks the mask most likely to
//! hold the labelled object, and that object alone is classified. The crate
//! also carries the evaluation metrics used to study the approach and a
//! synthetic scene generator with exact ground truth.

pub mod backend;
pub mod error;
pub mod fgscore;
pub mod image;
pub mod mask;
pub mod maskops;
pub mod metrics;
pub mod pipeline;
pub mod prob;
pub mod sample;
pub mod synthgen;

pub use backend::{ClassifierHead, Encoder, EnsembleMember, EnsembleSpec, MaskGenerator};
pub use error::{Error, Result};
pub use fgscore::{roc_auc, score_mask, select_foreground, ScoredMask, ScoringStrategy};
pub use image::ImageTensor;
pub use mask::{iou, BBox, BinaryMask, MaskSet, MaskSource};
pub use maskops::{apply_mask, filter_masks, ApplicationMode, AppliedImage, FilterConfig};
pub use metrics::{fg_ari, mbo, InstanceSegmentation};
pub use pipeline::{occam_classify, run_benchmark, Fallback, OccamConfig, OccamOutput};
pub use prob::{entropy, softmax, ClassProbabilities, Embedding};
pub use sample::{ImageSource, LabeledSample};
