//! Foreground scores, foreground selection, and foreground-detection evaluation.
//!
//! All scores are oriented so that higher means "more likely the foreground
//! object". Entropy-based scores are negated here, once, so selection is
//! always an argmax.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{iou, BBox, BinaryMask};
use crate::prob::{entropy, ClassProbabilities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringStrategy {
    ClassAided,
    EnsembleEntropy,
    EnsembleConfidence,
    SingleConfidence,
    SingleEntropy,
    MaxProb,
    GroundTruthIou,
}

impl ScoringStrategy {
    pub const ALL: [ScoringStrategy; 7] = [
        ScoringStrategy::ClassAided,
        ScoringStrategy::EnsembleEntropy,
        ScoringStrategy::EnsembleConfidence,
        ScoringStrategy::SingleConfidence,
        ScoringStrategy::SingleEntropy,
        ScoringStrategy::MaxProb,
        ScoringStrategy::GroundTruthIou,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScoringStrategy::ClassAided => "class-aided",
            ScoringStrategy::EnsembleEntropy => "ensemble-entropy",
            ScoringStrategy::EnsembleConfidence => "ensemble-confidence",
            ScoringStrategy::SingleConfidence => "single-confidence",
            ScoringStrategy::SingleEntropy => "single-entropy",
            ScoringStrategy::MaxProb => "max-prob",
            ScoringStrategy::GroundTruthIou => "ground-truth-iou",
        }
    }

    /// Strategies that read ground truth and are therefore evaluation-only.
    pub fn needs_ground_truth(&self) -> bool {
        matches!(
            self,
            ScoringStrategy::ClassAided | ScoringStrategy::GroundTruthIou
        )
    }
}

impl fmt::Display for ScoringStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        let alias = match norm.as_str() {
            "ens-entropy" | "ens-h" => "ensemble-entropy",
            "ens-confidence" => "ensemble-confidence",
            "confidence" => "single-confidence",
            "entropy" => "single-entropy",
            "gt-iou" | "ground-truth" => "ground-truth-iou",
            other => other,
        };
        ScoringStrategy::ALL
            .iter()
            .find(|s| s.name() == alias)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown scoring strategy {s:?}")))
    }
}

/// Inputs beyond the class probabilities that some strategies need.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreAux<'a> {
    pub label: Option<usize>,
    /// Fine-grained class -> label group. When present, `label` is a group id
    /// and `p^y` is the total probability of the group's classes.
    pub group_map: Option<&'a [usize]>,
    pub gt_mask: Option<&'a BinaryMask>,
    pub candidate_mask: Option<&'a BinaryMask>,
}

fn label_probability(
    p: &ClassProbabilities,
    label: usize,
    group_map: Option<&[usize]>,
) -> Result<f64> {
    match group_map {
        Some(map) => {
            if map.len() != p.num_classes() {
                return Err(Error::InvalidInput(format!(
                    "group map covers {} classes, probabilities have {}",
                    map.len(),
                    p.num_classes()
                )));
            }
            Ok(map
                .iter()
                .zip(p.probs())
                .filter(|(&g, _)| g == label)
                .map(|(_, &v)| v)
                .sum())
        }
        None => {
            if label >= p.num_classes() {
                return Err(Error::InvalidInput(format!(
                    "label {label} outside [0, {})",
                    p.num_classes()
                )));
            }
            Ok(p.get(label))
        }
    }
}

/// Foreground score `g(x, m)` for one applied mask.
///
/// `members` holds one distribution per ensemble member. Single-model
/// strategies read member 0.
pub fn score_mask(
    strategy: ScoringStrategy,
    members: &[ClassProbabilities],
    aux: &ScoreAux<'_>,
) -> Result<f64> {
    if strategy == ScoringStrategy::GroundTruthIou {
        let gt = aux.gt_mask.ok_or(Error::MissingAuxiliary {
            strategy: "ground-truth-iou",
            missing: "a ground-truth mask",
        })?;
        let cand = aux.candidate_mask.ok_or(Error::MissingAuxiliary {
            strategy: "ground-truth-iou",
            missing: "the candidate mask",
        })?;
        return iou(cand, gt);
    }
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidInput("no member probabilities to score".into()))?;
    if members
        .iter()
        .any(|m| m.num_classes() != first.num_classes())
    {
        return Err(Error::InvalidInput(
            "ensemble members disagree on the class set".into(),
        ));
    }
    let m = members.len() as f64;
    let score = match strategy {
        ScoringStrategy::ClassAided => {
            let y = aux.label.ok_or(Error::MissingAuxiliary {
                strategy: "class-aided",
                missing: "a ground-truth label",
            })?;
            let mut total = 0.0;
            for p in members {
                total += label_probability(p, y, aux.group_map)?;
            }
            total / m
        }
        ScoringStrategy::EnsembleEntropy => -members.iter().map(entropy).sum::<f64>() / m,
        ScoringStrategy::EnsembleConfidence => ClassProbabilities::mean(members)?.max_prob(),
        ScoringStrategy::SingleConfidence | ScoringStrategy::MaxProb => first.max_prob(),
        ScoringStrategy::SingleEntropy => -entropy(first),
        ScoringStrategy::GroundTruthIou => unreachable!(),
    };
    Ok(score)
}

/// One candidate mask with its foreground score and per-member outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMask {
    pub mask_index: usize,
    pub score: f64,
    pub per_member_probs: Vec<ClassProbabilities>,
}

/// `mask_index` of the highest score; ties go to the lowest `mask_index`.
pub fn select_foreground(scored: &[ScoredMask]) -> Result<usize> {
    let mut best: Option<&ScoredMask> = None;
    for s in scored {
        if !s.score.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite foreground score for mask {}",
                s.mask_index
            )));
        }
        best = match best {
            None => Some(s),
            Some(b) if s.score > b.score || (s.score == b.score && s.mask_index < b.mask_index) => {
                Some(s)
            }
            keep => keep,
        };
    }
    best.map(|b| b.mask_index).ok_or(Error::NoCandidates)
}

/// A candidate mask of one sample, with its foreground score.
#[derive(Debug, Clone)]
pub struct FgCandidate {
    pub mask_index: usize,
    pub mask: BinaryMask,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FgSampleInput {
    pub sample_id: String,
    pub dims: (usize, usize),
    pub bbox: Option<BBox>,
    pub candidates: Vec<FgCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgRecord {
    pub sample_id: String,
    pub mask_index: usize,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FgDetectionDataset {
    pub records: Vec<FgRecord>,
}

impl FgDetectionDataset {
    pub fn labeled_scores(&self) -> Vec<(bool, f64)> {
        self.records
            .iter()
            .map(|r| (r.label == 1, r.score))
            .collect()
    }
}

/// Result of building the foreground/non-foreground dataset.
#[derive(Debug, Clone, Default)]
pub struct FgDatasetBuild {
    pub dataset: FgDetectionDataset,
    /// Samples without a bounding box.
    pub skipped_missing_bbox: Vec<String>,
    /// Samples with no candidate masks left.
    pub skipped_no_candidates: Vec<String>,
    /// Samples where every candidate had IoU 0 with the box; the positive was
    /// assigned to the first candidate by the tie-break.
    pub degenerate: Vec<String>,
}

/// Position (into `masks`) of the mask with the highest IoU against the box,
/// lowest position on ties, and whether every IoU was zero.
pub fn foreground_by_bbox(
    dims: (usize, usize),
    bbox: &BBox,
    masks: &[&BinaryMask],
) -> Result<(usize, bool)> {
    if masks.is_empty() {
        return Err(Error::NoCandidates);
    }
    let rect = BinaryMask::from_bbox(dims.0, dims.1, bbox);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, m) in masks.iter().enumerate() {
        let v = iou(m, &rect)?;
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok((best.0, best.1 == 0.0))
}

/// Label each candidate 1 if it best overlaps the ground-truth box, else 0.
pub fn build_fg_dataset(samples: &[FgSampleInput]) -> Result<FgDatasetBuild> {
    let mut out = FgDatasetBuild::default();
    for s in samples {
        let Some(bbox) = s.bbox else {
            log::warn!("sample {} has no bounding box; skipped", s.sample_id);
            out.skipped_missing_bbox.push(s.sample_id.clone());
            continue;
        };
        if s.candidates.is_empty() {
            out.skipped_no_candidates.push(s.sample_id.clone());
            continue;
        }
        let masks: Vec<&BinaryMask> = s.candidates.iter().map(|c| &c.mask).collect();
        let (pos, degenerate) =
            foreground_by_bbox(s.dims, &bbox, &masks).map_err(|e| e.for_sample(&s.sample_id))?;
        if degenerate {
            out.degenerate.push(s.sample_id.clone());
        }
        for (i, c) in s.candidates.iter().enumerate() {
            out.dataset.records.push(FgRecord {
                sample_id: s.sample_id.clone(),
                mask_index: c.mask_index,
                label: (i == pos) as u8,
                score: c.score,
            });
        }
    }
    if !out.skipped_missing_bbox.is_empty() {
        log::warn!(
            "{} samples skipped for missing bounding boxes",
            out.skipped_missing_bbox.len()
        );
    }
    Ok(out)
}

/// ROC curve as `(fpr, tpr)` points in ascending order plus its area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auroc: f64,
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// CSV with header `fpr,tpr`, ascending fpr.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr")?;
        for (f, t) in &self.points {
            writeln!(w, "{f},{t}")?;
        }
        Ok(())
    }
}

/// Threshold sweep over distinct scores with trapezoidal integration.
///
/// Tied scores move along the diagonal of their block, which credits ties
/// with one half, the same as the Mann-Whitney statistic.
pub fn roc_auc(records: &[(bool, f64)]) -> Result<RocCurve> {
    if let Some((_, s)) = records.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {s}")));
    }
    let pos = records.iter().filter(|(l, _)| *l).count() as u64;
    let neg = records.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AurocUndefined(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut sorted: Vec<(bool, f64)> = records.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));

    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].1;
        let (tp0, fp0) = (tp, fp);
        while i < sorted.len() && sorted[i].1 == threshold {
            if sorted[i].0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        auroc: twice_area as f64 / (2 * pos as u128 * neg as u128) as f64,
        points,
    })
}
