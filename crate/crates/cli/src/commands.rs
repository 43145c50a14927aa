//! The experiment subcommands. Each one reads its inputs, writes its reports
//! under the output directory and returns the number of failures (per-sample
//! errors plus metrics that could not be computed).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use occam_core::backend::config::{
    head_table, EncoderConfig, EnsembleConfig, HeadConfig, MemberConfig,
};
use occam_core::backend::files::{FileMasks, GroundTruthMasks, NoMasks};
use occam_core::backend::manifest::{load_dataset_manifest, Dataset, DatasetEntry, LoadOptions};
use occam_core::backend::toy::fit_toy_heads;
use occam_core::fgscore::{build_fg_dataset, FgCandidate, FgSampleInput};
use occam_core::metrics::{accuracy, common_counter_gap, worst_group_accuracy, GroupAccuracy};
use occam_core::pipeline::{occam_classify_detailed, with_threads, BenchmarkRun};
use occam_core::synthgen::{
    counter_split, derive_seed, generate, write_synth_dataset, SynthSample, SynthSpec,
};
use occam_core::{
    fg_ari, mbo, roc_auc, run_benchmark, ApplicationMode, EnsembleSpec, Error, LabeledSample,
    MaskGenerator, MaskSource, OccamConfig, ScoringStrategy,
};

use crate::report::{pct, write_csv, write_json, write_report, Format};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Globals {
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskSourceArg {
    /// No masks: the whole image is classified (the baseline).
    None,
    /// Ground-truth instance masks from `gt_seg`.
    Gt,
    /// Candidate masks from each sample's `masks_dir`.
    Candidates,
}

impl MaskSourceArg {
    fn name(self) -> &'static str {
        match self {
            MaskSourceArg::None => "none",
            MaskSourceArg::Gt => "gt",
            MaskSourceArg::Candidates => "candidates",
        }
    }

    fn generator(self, ds: &Dataset) -> Box<dyn MaskGenerator> {
        match self {
            MaskSourceArg::None => Box::new(NoMasks::new()),
            MaskSourceArg::Gt => Box::new(GroundTruthMasks::new()),
            MaskSourceArg::Candidates => Box::new(FileMasks::from_dataset(
                "candidates",
                MaskSource::ExternalSegmenter,
                ds,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    GrayBgCrop,
    AlphaChannel,
}

impl ModeArg {
    fn mode(self, crop: usize) -> ApplicationMode {
        match self {
            ModeArg::GrayBgCrop => ApplicationMode::gray_crop(crop, crop),
            ModeArg::AlphaChannel => ApplicationMode::AlphaChannel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredSource {
    Candidates,
    Gt,
}

pub fn parse_strategy(s: &str) -> Result<ScoringStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Serialize)]
struct SampleFailure {
    id: String,
    error: String,
}

fn failures_of(ds: &Dataset) -> Vec<SampleFailure> {
    ds.errors
        .iter()
        .map(|e| SampleFailure {
            id: e.id.clone(),
            error: e.error.to_string(),
        })
        .collect()
}

fn run_failures(run: &BenchmarkRun) -> Vec<SampleFailure> {
    run.errors
        .iter()
        .map(|(id, e)| SampleFailure {
            id: id.clone(),
            error: e.to_string(),
        })
        .collect()
}

fn load(g: &Globals, manifest: &Path) -> Result<Dataset> {
    let opts = LoadOptions {
        data_root: g.data_root.clone(),
        fail_fast: false,
    };
    let mut ds = load_dataset_manifest(manifest, &opts)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    ds.entries.sort_by(|a, b| a.sample.id.cmp(&b.sample.id));
    Ok(ds)
}

fn load_ensemble(path: &Path, ds: &Dataset) -> Result<EnsembleSpec> {
    let cfg = EnsembleConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let ens = cfg
        .build(base)
        .with_context(|| format!("building ensemble {}", path.display()))?;
    if ens.num_labels() != ds.class_names.len() {
        bail!(
            "ensemble predicts {} labels but the manifest lists {} classes",
            ens.num_labels(),
            ds.class_names.len()
        );
    }
    Ok(ens)
}

fn samples_of(ds: &Dataset) -> Vec<LabeledSample> {
    ds.samples().cloned().collect()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Samples per split.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Probability that the background matches the object class.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Write a common split (rho = 1) and a counter split (rho = 0) instead.
    #[arg(long)]
    pub counter_split: bool,
}

#[derive(Serialize)]
struct SplitRow {
    split: String,
    manifest: String,
    n_samples: usize,
    matched_background: usize,
}

#[derive(Serialize)]
struct SynthReport {
    command: &'static str,
    seed: u64,
    classes: usize,
    /// `None` for the common/counter pair, whose correlations are fixed.
    rho: Option<f64>,
    splits: Vec<SplitRow>,
}

fn write_split(
    root: &Path,
    name: &str,
    spec: &SynthSpec,
    samples: &[SynthSample],
) -> Result<SplitRow> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    write_synth_dataset(root, "manifest.json", spec, samples)?;
    let manifest = if name == "all" {
        "manifest.json".to_string()
    } else {
        format!("{name}/manifest.json")
    };
    Ok(SplitRow {
        split: name.to_string(),
        manifest,
        n_samples: samples.len(),
        matched_background: samples
            .iter()
            .filter(|s| s.bg_class == s.sample.label)
            .count(),
    })
}

pub fn synth(g: &Globals, a: &SynthArgs) -> Result<usize> {
    let spec = SynthSpec::with_classes(a.n, a.classes, g.seed).with_correlation(a.rho);
    spec.validate()?;
    let splits = if a.counter_split {
        let (common, counter) = counter_split(&spec)?;
        vec![
            write_split(&g.out.join("common"), "common", &spec, &common)?,
            write_split(&g.out.join("counter"), "counter", &spec, &counter)?,
        ]
    } else {
        vec![write_split(&g.out, "all", &spec, &generate(&spec)?)?]
    };
    let report = SynthReport {
        command: "synth",
        seed: g.seed,
        classes: a.classes,
        rho: (!a.counter_split).then_some(a.rho),
        splits,
    };
    write_report(&g.out, "synth", &report, &report.splits, g.format)?;
    Ok(0)
}

// ---------------------------------------------------------------- fit-toy

#[derive(Debug, Args)]
pub struct FitToyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ensemble size; more than one member fits per-class bootstrap resamples.
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    #[arg(long, default_value_t = occam_core::backend::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Side of the square crop the training images are resized to.
    #[arg(long, default_value_t = 224)]
    pub crop: usize,
}

#[derive(Serialize)]
struct FitReport {
    command: &'static str,
    manifest: String,
    seed: u64,
    n_samples: usize,
    members: usize,
    temperature: f64,
    crop: usize,
    ensemble: &'static str,
    n_errors: usize,
    errors: Vec<SampleFailure>,
}

pub fn fit_toy(g: &Globals, a: &FitToyArgs) -> Result<usize> {
    let ds = load(g, &a.manifest)?;
    if ds.is_empty() {
        bail!("no loadable samples in {}", a.manifest.display());
    }
    let mode = ApplicationMode::gray_crop(a.crop, a.crop);
    let samples = samples_of(&ds);
    let heads = fit_toy_heads(
        &samples,
        ds.class_names.len(),
        &mode,
        a.members,
        a.temperature,
        g.seed,
    )?;
    let heads_dir = g.out.join("heads");
    fs::create_dir_all(&heads_dir).with_context(|| format!("creating {}", heads_dir.display()))?;
    let mut members = Vec::with_capacity(heads.len());
    for (k, head) in heads.iter().enumerate() {
        let rel = PathBuf::from(format!("heads/member-{k}.oce"));
        head_table(head, &ds.class_names)?.write(&g.out.join(&rel))?;
        members.push(MemberConfig {
            name: format!("toy-{k}"),
            encoder: EncoderConfig::Toy,
            head: HeadConfig {
                class_embeddings: rel,
                temperature: a.temperature,
                group_map: None,
            },
        });
    }
    EnsembleConfig { members }.save(&g.out.join("ensemble.json"))?;

    let errors = failures_of(&ds);
    let report = FitReport {
        command: "fit-toy",
        manifest: display(&a.manifest),
        seed: g.seed,
        n_samples: ds.len(),
        members: a.members,
        temperature: a.temperature,
        crop: a.crop,
        ensemble: "ensemble.json",
        n_errors: errors.len(),
        errors,
    };
    write_json(&g.out.join("fit-toy.json"), &report)?;
    Ok(report.n_errors)
}

// ---------------------------------------------------------------- discover-eval

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which masks play the role of the predicted segmentation.
    #[arg(long, value_enum, default_value_t = PredSource::Candidates)]
    pub pred_source: PredSource,
    /// Randomly permute each sample's predicted masks (seeded by --seed).
    #[arg(long)]
    pub shuffle: bool,
}

#[derive(Serialize)]
struct DiscoverRow {
    dataset: String,
    pred_source: &'static str,
    n_samples: usize,
    n_errors: usize,
    fg_ari: Option<f64>,
    mbo: Option<f64>,
}

#[derive(Serialize)]
struct DiscoverReport {
    command: &'static str,
    seed: u64,
    shuffle: bool,
    #[serde(flatten)]
    row: DiscoverRow,
    errors: Vec<SampleFailure>,
}

#[derive(Serialize)]
struct DiscoverSample {
    id: String,
    fg_ari: f64,
    mbo: f64,
}

fn discover_one(
    entry: &DatasetEntry,
    source: PredSource,
    shuffle: Option<u64>,
) -> occam_core::Result<(f64, f64)> {
    let gt = entry
        .gt_seg
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("no gt_seg for object discovery".into()))?;
    let mut pred = match source {
        PredSource::Gt => gt.to_mask_set(),
        PredSource::Candidates => {
            if entry.masks_dir.is_none() {
                return Err(Error::InvalidInput(
                    "no masks_dir for object discovery".into(),
                ));
            }
            entry.load_masks(MaskSource::ExternalSegmenter)?
        }
    };
    if let Some(seed) = shuffle {
        pred.masks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok((fg_ari(gt, &pred)?, mbo(gt, &pred)?))
}

pub fn discover_eval(g: &Globals, a: &DiscoverArgs) -> Result<usize> {
    let ds = load(g, &a.manifest)?;
    let outcomes: Vec<occam_core::Result<(f64, f64)>> = with_threads(g.threads, || {
        ds.entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let shuffle = a.shuffle.then(|| derive_seed(g.seed, i as u64));
                discover_one(e, a.pred_source, shuffle).map_err(|err| err.for_sample(&e.sample.id))
            })
            .collect()
    })?;

    let mut errors = failures_of(&ds);
    let mut per_sample = Vec::new();
    for (e, o) in ds.entries.iter().zip(outcomes) {
        match o {
            Ok((ari, bo)) => per_sample.push(DiscoverSample {
                id: e.sample.id.clone(),
                fg_ari: ari,
                mbo: bo,
            }),
            Err(err) => errors.push(SampleFailure {
                id: e.sample.id.clone(),
                error: err.to_string(),
            }),
        }
    }
    let mean = |f: fn(&DiscoverSample) -> f64| {
        (!per_sample.is_empty())
            .then(|| pct(per_sample.iter().map(f).sum::<f64>() / per_sample.len() as f64))
    };
    let row = DiscoverRow {
        dataset: display(&a.manifest),
        pred_source: match a.pred_source {
            PredSource::Candidates => "candidates",
            PredSource::Gt => "gt",
        },
        n_samples: per_sample.len(),
        n_errors: errors.len(),
        fg_ari: mean(|s| s.fg_ari),
        mbo: mean(|s| s.mbo),
    };
    let failures = errors.len() + usize::from(row.fg_ari.is_none());
    let report = DiscoverReport {
        command: "discover-eval",
        seed: g.seed,
        shuffle: a.shuffle,
        row,
        errors,
    };
    write_report(
        &g.out,
        "discover",
        &report,
        std::slice::from_ref(&report.row),
        g.format,
    )?;
    if g.format == Format::Csv {
        write_csv(&g.out.join("discover-samples.csv"), &per_sample)?;
    }
    Ok(failures)
}

// ---------------------------------------------------------------- fg-eval

#[derive(Debug, Args)]
pub struct FgEvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Ensemble config whose predictions feed the foreground scores.
    #[arg(long, visible_alias = "scores-from")]
    pub ensemble: PathBuf,
    #[arg(long, value_enum, default_value_t = MaskSourceArg::Candidates)]
    pub mask_source: MaskSourceArg,
    #[arg(long, value_enum, default_value_t = ModeArg::GrayBgCrop)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 224)]
    pub crop: usize,
    /// Comma-separated scoring strategies; all of them by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy: Vec<ScoringStrategy>,
}

#[derive(Serialize)]
struct FgRow {
    strategy: String,
    auroc: Option<f64>,
    n_candidates: usize,
    n_positive: usize,
    n_samples: usize,
    skipped_missing_bbox: usize,
    skipped_no_candidates: usize,
    degenerate: usize,
    n_errors: usize,
    roc_csv: Option<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FgReport {
    command: &'static str,
    manifest: String,
    mask_source: &'static str,
    mode: &'static str,
    seed: u64,
    rows: Vec<FgRow>,
    errors: Vec<SampleFailure>,
}

pub fn fg_eval(g: &Globals, a: &FgEvalArgs) -> Result<usize> {
    let ds = load(g, &a.manifest)?;
    let ens = load_ensemble(&a.ensemble, &ds)?;
    let maskgen = a.mask_source.generator(&ds);
    let mode = a.mode.mode(a.crop);
    let strategies = if a.strategy.is_empty() {
        ScoringStrategy::ALL.to_vec()
    } else {
        a.strategy.clone()
    };
    let dims: HashMap<&str, (usize, usize)> = ds
        .entries
        .iter()
        .map(|e| (e.sample.id.as_str(), e.dims))
        .collect();

    let mut errors = failures_of(&ds);
    let mut failures = errors.len();
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let cfg = OccamConfig::new(mode, strategy).with_evaluation_mode(true);
        cfg.validate()?;
        let outcomes: Vec<occam_core::Result<FgSampleInput>> = with_threads(g.threads, || {
            ds.entries
                .par_iter()
                .map(|e| {
                    let (out, masks) =
                        occam_classify_detailed(&e.sample, maskgen.as_ref(), &ens, &cfg, &|s| s)?;
                    Ok(FgSampleInput {
                        sample_id: e.sample.id.clone(),
                        dims: dims[e.sample.id.as_str()],
                        bbox: e.sample.gt_bbox,
                        candidates: out
                            .all_scored
                            .iter()
                            .map(|s| FgCandidate {
                                mask_index: s.mask_index,
                                mask: masks.masks[s.mask_index].clone(),
                                score: s.score,
                            })
                            .collect(),
                    })
                })
                .collect()
        })?;
        let mut inputs = Vec::with_capacity(outcomes.len());
        let mut n_errors = 0;
        for (e, o) in ds.entries.iter().zip(outcomes) {
            match o {
                Ok(i) => inputs.push(i),
                Err(err) => {
                    n_errors += 1;
                    errors.push(SampleFailure {
                        id: format!("{}@{strategy}", e.sample.id),
                        error: err.to_string(),
                    });
                }
            }
        }
        failures += n_errors;
        let build = build_fg_dataset(&inputs)?;
        let scores = build.dataset.labeled_scores();
        let mut row = FgRow {
            strategy: strategy.to_string(),
            auroc: None,
            n_candidates: scores.len(),
            n_positive: scores.iter().filter(|(l, _)| *l).count(),
            n_samples: inputs.len()
                - build.skipped_missing_bbox.len()
                - build.skipped_no_candidates.len(),
            skipped_missing_bbox: build.skipped_missing_bbox.len(),
            skipped_no_candidates: build.skipped_no_candidates.len(),
            degenerate: build.degenerate.len(),
            n_errors,
            roc_csv: None,
            error: None,
        };
        match roc_auc(&scores) {
            Ok(curve) => {
                let name = format!("roc-{strategy}.csv");
                let path = g.out.join(&name);
                let file = fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                curve.write_csv(std::io::BufWriter::new(file))?;
                row.auroc = Some(pct(curve.auroc));
                row.roc_csv = Some(name);
            }
            Err(e) => {
                failures += 1;
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    let report = FgReport {
        command: "fg-eval",
        manifest: display(&a.manifest),
        mask_source: a.mask_source.name(),
        mode: a.mode.mode(a.crop).name(),
        seed: g.seed,
        rows,
        errors,
    };
    write_report(&g.out, "fg-eval", &report, &report.rows, g.format)?;
    Ok(failures)
}

// ---------------------------------------------------------------- classify-eval

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, visible_alias = "scores-from")]
    pub ensemble: PathBuf,
    /// Comma-separated mask sources; `none` is the no-mask baseline.
    #[arg(long, visible_alias = "mask-model", value_enum, value_delimiter = ',', default_values_t = [MaskSourceArg::None, MaskSourceArg::Gt])]
    pub mask_source: Vec<MaskSourceArg>,
    /// Comma-separated mask application methods.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::GrayBgCrop])]
    pub mode: Vec<ModeArg>,
    /// Comma-separated foreground detectors.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_values_t = [ScoringStrategy::ClassAided])]
    pub strategy: Vec<ScoringStrategy>,
    #[arg(long, default_value_t = 224)]
    pub crop: usize,
    /// Classify with this ensemble member alone instead of the ensemble mean.
    #[arg(long)]
    pub final_member: Option<usize>,
    /// Deployment setting: labels are never consulted, so label-reading
    /// strategies are refused.
    #[arg(long)]
    pub deploy: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyRow {
    mode: &'static str,
    mask_source: &'static str,
    strategy: String,
    n_samples: usize,
    n_errors: usize,
    n_fallback: usize,
    accuracy: Option<f64>,
    wga: Option<f64>,
    worst_group: Option<usize>,
}

#[derive(Serialize)]
struct AccuracyEntry {
    #[serde(flatten)]
    row: AccuracyRow,
    audit: String,
    per_group: Option<BTreeMap<usize, GroupAccuracy>>,
}

#[derive(Serialize)]
struct ClassifyReport {
    command: &'static str,
    manifest: String,
    seed: u64,
    evaluation_mode: bool,
    final_member: Option<usize>,
    rows: Vec<AccuracyEntry>,
    errors: Vec<SampleFailure>,
}

/// One OCCAM configuration evaluated over a dataset.
struct Evaluated {
    row: AccuracyRow,
    per_group: Option<BTreeMap<usize, GroupAccuracy>>,
    run: BenchmarkRun,
    /// Requested metrics that could not be computed.
    metric_failures: usize,
}

/// One cell of the factor grid.
#[derive(Debug, Clone, Copy)]
struct Setting {
    source: MaskSourceArg,
    mode: ModeArg,
    crop: usize,
    /// `None` for the no-mask baseline.
    strategy: Option<ScoringStrategy>,
    evaluation_mode: bool,
    final_member: Option<usize>,
}

fn evaluate(g: &Globals, ds: &Dataset, ens: &EnsembleSpec, s: Setting) -> Result<Evaluated> {
    let Setting {
        source,
        mode,
        crop,
        strategy,
        evaluation_mode,
        final_member,
    } = s;
    // the baseline never scores a mask, so any strategy passes validation
    let scoring = strategy.unwrap_or(ScoringStrategy::MaxProb);
    let mut cfg = OccamConfig::new(mode.mode(crop), scoring).with_evaluation_mode(evaluation_mode);
    cfg.final_member = final_member;
    cfg.validate()?;
    let maskgen = source.generator(ds);
    let run = run_benchmark(&samples_of(ds), maskgen.as_ref(), ens, &cfg, g.threads)?;

    let acc = accuracy(&run.results).ok();
    let has_groups =
        !run.results.is_empty() && run.results.records.iter().all(|r| r.group.is_some());
    let wg = if has_groups {
        worst_group_accuracy(&run.results).ok()
    } else {
        None
    };
    let metric_failures = usize::from(acc.is_none()) + usize::from(has_groups && wg.is_none());
    let row = AccuracyRow {
        mode: cfg.application_mode.name(),
        mask_source: source.name(),
        strategy: strategy.map_or_else(|| "-".to_string(), |s| s.to_string()),
        n_samples: run.results.len(),
        n_errors: run.errors.len(),
        n_fallback: run.outputs.iter().filter(|(_, o)| o.fallback_used).count(),
        accuracy: acc.map(pct),
        wga: wg.as_ref().map(|w| pct(w.wga)),
        worst_group: wg.as_ref().map(|w| w.worst_group),
    };
    Ok(Evaluated {
        row,
        per_group: wg.map(|w| w.per_group),
        run,
        metric_failures,
    })
}

pub fn classify_eval(g: &Globals, a: &ClassifyArgs) -> Result<usize> {
    let ds = load(g, &a.manifest)?;
    let ens = load_ensemble(&a.ensemble, &ds)?;
    let audit_dir = g.out.join("audit");
    fs::create_dir_all(&audit_dir).with_context(|| format!("creating {}", audit_dir.display()))?;

    let mut errors = failures_of(&ds);
    let mut failures = errors.len();
    let mut rows = Vec::new();
    for &mode in &a.mode {
        for &source in &a.mask_source {
            let strategies: Vec<Option<ScoringStrategy>> = if source == MaskSourceArg::None {
                vec![None]
            } else {
                a.strategy.iter().copied().map(Some).collect()
            };
            for strategy in strategies {
                let setting = Setting {
                    source,
                    mode,
                    crop: a.crop,
                    strategy,
                    evaluation_mode: !a.deploy,
                    final_member: a.final_member,
                };
                let ev = evaluate(g, &ds, &ens, setting)?;
                let audit = format!(
                    "audit/{}_{}_{}.jsonl",
                    ev.row.mode, ev.row.mask_source, ev.row.strategy
                );
                let path = g.out.join(&audit);
                let file = fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                ev.run.write_audit_log(std::io::BufWriter::new(file))?;
                failures += ev.run.errors.len() + ev.metric_failures;
                errors.extend(run_failures(&ev.run));
                rows.push(AccuracyEntry {
                    row: ev.row,
                    audit,
                    per_group: ev.per_group,
                });
            }
        }
    }
    let report = ClassifyReport {
        command: "classify-eval",
        manifest: display(&a.manifest),
        seed: g.seed,
        evaluation_mode: !a.deploy,
        final_member: a.final_member,
        rows,
        errors,
    };
    let flat: Vec<AccuracyRow> = report.rows.iter().map(|r| r.row.clone()).collect();
    write_report(&g.out, "classify", &report, &flat, g.format)?;
    Ok(failures)
}

// ---------------------------------------------------------------- gap

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long, visible_alias = "manifest-common")]
    pub common: PathBuf,
    #[arg(long, visible_alias = "manifest-counter")]
    pub counter: PathBuf,
    #[arg(long, visible_alias = "scores-from")]
    pub ensemble: PathBuf,
    #[arg(long, visible_alias = "mask-model", value_enum, default_value_t = MaskSourceArg::Gt)]
    pub mask_source: MaskSourceArg,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModeArg::GrayBgCrop])]
    pub mode: Vec<ModeArg>,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_values_t = [ScoringStrategy::ClassAided])]
    pub strategy: Vec<ScoringStrategy>,
    #[arg(long, default_value_t = 224)]
    pub crop: usize,
    #[arg(long)]
    pub deploy: bool,
}

#[derive(Serialize)]
struct GapRow {
    mode: &'static str,
    mask_source: &'static str,
    strategy: String,
    acc_common: Option<f64>,
    acc_counter: Option<f64>,
    gap: Option<f64>,
    acc_common_fg: Option<f64>,
    acc_counter_fg: Option<f64>,
    gap_fg: Option<f64>,
    n_common: usize,
    n_counter: usize,
    n_errors: usize,
}

#[derive(Serialize)]
struct GapReportOut {
    command: &'static str,
    common: String,
    counter: String,
    seed: u64,
    rows: Vec<GapRow>,
    errors: Vec<SampleFailure>,
}

pub fn gap(g: &Globals, a: &GapArgs) -> Result<usize> {
    let common = load(g, &a.common)?;
    let counter = load(g, &a.counter)?;
    if common.class_names != counter.class_names {
        bail!("common and counter manifests use different class lists");
    }
    let ens = load_ensemble(&a.ensemble, &common)?;

    let mut errors = failures_of(&common);
    errors.extend(failures_of(&counter));
    let mut failures = errors.len();
    let mut rows = Vec::new();
    let mut run_pair = |source, mode, strategy, errors: &mut Vec<SampleFailure>| -> Result<_> {
        let setting = Setting {
            source,
            mode,
            crop: a.crop,
            strategy,
            evaluation_mode: !a.deploy,
            final_member: None,
        };
        let c = evaluate(g, &common, &ens, setting)?;
        let k = evaluate(g, &counter, &ens, setting)?;
        errors.extend(run_failures(&c.run));
        errors.extend(run_failures(&k.run));
        let gap = common_counter_gap(&c.run.results, &k.run.results).ok();
        failures += c.run.errors.len() + k.run.errors.len() + usize::from(gap.is_none());
        Ok((
            gap,
            c.run.results.len(),
            k.run.results.len(),
            c.run.errors.len() + k.run.errors.len(),
        ))
    };
    for &mode in &a.mode {
        let (base, _, _, base_errors) = run_pair(MaskSourceArg::None, mode, None, &mut errors)?;
        for &strategy in &a.strategy {
            let (fg, n_common, n_counter, n_errors) =
                run_pair(a.mask_source, mode, Some(strategy), &mut errors)?;
            rows.push(GapRow {
                mode: mode.mode(a.crop).name(),
                mask_source: a.mask_source.name(),
                strategy: strategy.to_string(),
                acc_common: base.map(|r| pct(r.acc_common)),
                acc_counter: base.map(|r| pct(r.acc_counter)),
                gap: base.map(|r| pct(r.gap)),
                acc_common_fg: fg.map(|r| pct(r.acc_common)),
                acc_counter_fg: fg.map(|r| pct(r.acc_counter)),
                gap_fg: fg.map(|r| pct(r.gap)),
                n_common,
                n_counter,
                n_errors: n_errors + base_errors,
            });
        }
    }
    let report = GapReportOut {
        command: "gap",
        common: display(&a.common),
        counter: display(&a.counter),
        seed: g.seed,
        rows,
        errors,
    };
    write_report(&g.out, "gap", &report, &report.rows, g.format)?;
    Ok(failures)
}
