//! End-to-end OCCAM: generate masks, filter, apply, encode, score, select the
//! foreground mask and classify it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{EnsembleSpec, MaskGenerator};
use crate::error::{Error, Result};
use crate::fgscore::{score_mask, select_foreground, ScoreAux, ScoredMask, ScoringStrategy};
use crate::image::ImageTensor;
use crate::mask::{BinaryMask, MaskSet};
use crate::maskops::{apply_mask, filter_mask_indices, ApplicationMode, FilterConfig};
use crate::metrics::{GroupedResults, ResultRecord};
use crate::prob::ClassProbabilities;
use crate::sample::LabeledSample;

/// What to do when filtering leaves no candidate masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Classify the whole image as if it were a single mask.
    #[default]
    FullImageMask,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccamConfig {
    pub application_mode: ApplicationMode,
    pub scoring: ScoringStrategy,
    pub filter: FilterConfig,
    pub fallback: Fallback,
    /// Labels (and ground truth) may be consulted. Strategies that peek at
    /// them are refused unless this is set.
    pub evaluation_mode: bool,
    /// Classify with this member alone instead of the ensemble mean.
    pub final_member: Option<usize>,
}

impl OccamConfig {
    pub fn new(application_mode: ApplicationMode, scoring: ScoringStrategy) -> Self {
        Self {
            application_mode,
            scoring,
            filter: FilterConfig::default(),
            fallback: Fallback::default(),
            evaluation_mode: false,
            final_member: None,
        }
    }

    pub fn with_evaluation_mode(mut self, on: bool) -> Self {
        self.evaluation_mode = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.application_mode.validate()?;
        self.filter.validate()?;
        if self.scoring.needs_ground_truth() && !self.evaluation_mode {
            return Err(Error::Config(format!(
                "scoring strategy {} reads labels and is only available in evaluation mode",
                self.scoring
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccamOutput {
    pub final_probs: ClassProbabilities,
    /// Label-space prediction (group of the argmax class under a group map).
    pub predicted: usize,
    /// `None` when the fallback was used.
    pub selected_mask_index: Option<usize>,
    /// Every filtered candidate with its score, in candidate order. Empty
    /// when the fallback was used.
    pub all_scored: Vec<ScoredMask>,
    pub fallback_used: bool,
}

fn member_probs(
    sample: &LabeledSample,
    image: &ImageTensor,
    mask: &BinaryMask,
    index: Option<usize>,
    ens: &EnsembleSpec,
    mode: &ApplicationMode,
) -> Result<Vec<ClassProbabilities>> {
    let applied = apply_mask(mode, image, mask, index)?;
    ens.members()
        .iter()
        .map(|m| m.head.classify(&m.encoder.encode(&sample.id, &applied)?))
        .collect()
}

fn reduce(
    per_member: &[ClassProbabilities],
    final_member: Option<usize>,
) -> Result<ClassProbabilities> {
    match final_member {
        Some(i) => per_member
            .get(i)
            .cloned()
            .ok_or_else(|| Error::Config(format!("final member {i} outside the ensemble"))),
        None if per_member.len() == 1 => Ok(per_member[0].clone()),
        None => ClassProbabilities::mean(per_member),
    }
}

/// OCCAM for one sample, also returning the generated (unfiltered) masks.
pub fn occam_classify_detailed(
    sample: &LabeledSample,
    maskgen: &dyn MaskGenerator,
    ens: &EnsembleSpec,
    cfg: &OccamConfig,
    transform: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<(OccamOutput, MaskSet)> {
    let run = || -> Result<(OccamOutput, MaskSet)> {
        cfg.validate()?;
        let image = sample.image.load()?;
        let dims = image.dims();
        let masks = maskgen.generate(sample, &image)?;
        masks.ensure_dims(dims)?;
        let keep = filter_mask_indices(&masks, dims, &cfg.filter)?;
        let predict = |p: &ClassProbabilities| ens.members()[0].head.predict(p);

        if keep.is_empty() {
            if cfg.fallback == Fallback::Error {
                return Err(Error::NoCandidates);
            }
            let full = BinaryMask::full(dims.0, dims.1);
            let per = member_probs(sample, &image, &full, None, ens, &cfg.application_mode)?;
            let final_probs = reduce(&per, cfg.final_member)?;
            let out = OccamOutput {
                predicted: predict(&final_probs),
                final_probs,
                selected_mask_index: None,
                all_scored: Vec::new(),
                fallback_used: true,
            };
            return Ok((out, masks));
        }

        let gt_mask = if cfg.scoring == ScoringStrategy::GroundTruthIou {
            Some(
                sample
                    .gt_foreground_mask(dims)
                    .ok_or(Error::MissingAuxiliary {
                        strategy: "ground-truth-iou",
                        missing: "a ground-truth foreground mask",
                    })?,
            )
        } else {
            None
        };
        let mut all_scored = Vec::with_capacity(keep.len());
        for &k in &keep {
            let mask = &masks.masks[k];
            let per = member_probs(sample, &image, mask, Some(k), ens, &cfg.application_mode)?;
            let aux = ScoreAux {
                label: cfg.evaluation_mode.then_some(sample.label),
                group_map: ens.group_map(),
                gt_mask: gt_mask.as_ref(),
                candidate_mask: Some(mask),
            };
            let score = transform(score_mask(cfg.scoring, &per, &aux)?);
            all_scored.push(ScoredMask {
                mask_index: k,
                score,
                per_member_probs: per,
            });
        }
        let selected = select_foreground(&all_scored)?;
        let chosen = all_scored
            .iter()
            .find(|s| s.mask_index == selected)
            .expect("selected index comes from all_scored");
        let final_probs = reduce(&chosen.per_member_probs, cfg.final_member)?;
        let out = OccamOutput {
            predicted: predict(&final_probs),
            final_probs,
            selected_mask_index: Some(selected),
            all_scored,
            fallback_used: false,
        };
        Ok((out, masks))
    };
    run().map_err(|e| e.for_sample(&sample.id))
}

/// OCCAM with every foreground score passed through `transform` before
/// selection.
pub fn occam_classify_with(
    sample: &LabeledSample,
    maskgen: &dyn MaskGenerator,
    ens: &EnsembleSpec,
    cfg: &OccamConfig,
    transform: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<OccamOutput> {
    occam_classify_detailed(sample, maskgen, ens, cfg, transform).map(|(o, _)| o)
}

pub fn occam_classify(
    sample: &LabeledSample,
    maskgen: &dyn MaskGenerator,
    ens: &EnsembleSpec,
    cfg: &OccamConfig,
) -> Result<OccamOutput> {
    occam_classify_with(sample, maskgen, ens, cfg, &|s| s)
}

/// Outcome of running OCCAM over a dataset, ordered by sample id.
#[derive(Debug, Default)]
pub struct BenchmarkRun {
    pub results: GroupedResults,
    pub outputs: Vec<(LabelInfo, OccamOutput)>,
    pub errors: Vec<(String, Error)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelInfo {
    pub id: String,
    pub label: usize,
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditScore {
    pub mask: usize,
    pub score: f64,
}

/// One line of the per-sample audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub scores: Vec<AuditScore>,
    pub selected: Option<usize>,
    pub fallback: bool,
    pub predicted: usize,
    pub label: usize,
    pub group: Option<usize>,
}

impl BenchmarkRun {
    pub fn audit_records(&self) -> impl Iterator<Item = AuditRecord> + '_ {
        self.outputs.iter().map(|(info, o)| AuditRecord {
            id: info.id.clone(),
            scores: o
                .all_scored
                .iter()
                .map(|s| AuditScore {
                    mask: s.mask_index,
                    score: s.score,
                })
                .collect(),
            selected: o.selected_mask_index,
            fallback: o.fallback_used,
            predicted: o.predicted,
            label: info.label,
            group: info.group,
        })
    }

    /// JSON lines, one record per successfully processed sample.
    pub fn write_audit_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in self.audit_records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Run a closure on a pool of `threads` workers (0 picks rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// OCCAM over every sample. Failed samples are tallied in
/// [`BenchmarkRun::errors`] and excluded from the results.
pub fn run_benchmark(
    samples: &[LabeledSample],
    maskgen: &dyn MaskGenerator,
    ens: &EnsembleSpec,
    cfg: &OccamConfig,
    threads: usize,
) -> Result<BenchmarkRun> {
    cfg.validate()?;
    if samples.is_empty() {
        log::warn!("benchmark over an empty dataset");
        return Ok(BenchmarkRun::default());
    }
    let mut order: Vec<&LabeledSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let outcomes: Vec<Result<OccamOutput>> = with_threads(threads, || {
        order
            .par_iter()
            .map(|s| occam_classify(s, maskgen, ens, cfg))
            .collect()
    })?;

    let mut run = BenchmarkRun::default();
    for (s, outcome) in order.into_iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                run.results.records.push(ResultRecord {
                    sample_id: s.id.clone(),
                    predicted: o.predicted,
                    true_class: s.label,
                    group: s.group,
                });
                run.outputs.push((
                    LabelInfo {
                        id: s.id.clone(),
                        label: s.label,
                        group: s.group,
                    },
                    o,
                ));
            }
            Err(e) => {
                log::warn!("{e}");
                run.errors.push((s.id.clone(), e));
            }
        }
    }
    if !run.errors.is_empty() {
        log::warn!("{} of {} samples failed", run.errors.len(), samples.len());
    }
    Ok(run)
}
