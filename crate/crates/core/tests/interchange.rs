//! On-disk interchange: a synthetic split written as manifest + PNGs, and
//! per-mask embeddings written as `OCE1` tables, must replay exactly what the
//! in-memory pipeline computes.

use std::path::PathBuf;
use std::sync::Arc;

use occam_core::backend::config::{
    head_table, EncoderConfig, EnsembleConfig, HeadConfig, MemberConfig,
};
use occam_core::backend::files::{FileEncoder, FileMasks, GroundTruthMasks, PrecomputedMasks};
use occam_core::backend::manifest::{load_dataset_manifest, LoadOptions};
use occam_core::backend::oce::EmbeddingTable;
use occam_core::backend::toy::{fit_toy_heads, toy_features, ToyEncoder};
use occam_core::backend::{embedding_key, Encoder, EnsembleSpec, MaskGenerator};
use occam_core::synthgen::{generate, write_synth_dataset, SynthSpec};
use occam_core::{
    apply_mask, occam_classify, ApplicationMode, BinaryMask, Error, MaskSource, OccamConfig,
    ScoringStrategy,
};

const CROP: usize = 24;

fn mode() -> ApplicationMode {
    ApplicationMode::gray_crop(CROP, CROP)
}

#[test]
fn synthetic_split_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(24, 3).with_correlation(0.5);
    let scenes = generate(&spec).unwrap();
    let manifest = write_synth_dataset(dir.path(), "manifest.json", &spec, &scenes).unwrap();
    let ds = load_dataset_manifest(&manifest, &LoadOptions::default()).unwrap();
    assert!(ds.errors.is_empty());
    assert_eq!(ds.class_names, spec.class_names());
    assert_eq!(ds.len(), scenes.len());

    let files = FileMasks::from_dataset("files", MaskSource::Synthetic, &ds);
    let gt = GroundTruthMasks::new();
    for (entry, scene) in ds.entries.iter().zip(&scenes) {
        let s = &entry.sample;
        assert_eq!(s.id, scene.sample.id);
        assert_eq!(
            (s.label, s.group, s.gt_bbox),
            (scene.sample.label, scene.sample.group, scene.sample.gt_bbox)
        );
        assert_eq!(entry.dims, scene.image.dims());
        assert_eq!(entry.mask_count, scene.candidates.len());
        let image = s.image.load().unwrap();
        assert_eq!(*image, scene.image);
        assert_eq!(
            files.generate(s, &image).unwrap().masks,
            scene.candidates.masks
        );
        assert_eq!(entry.gt_seg.as_ref().unwrap(), &scene.gt_seg);
        assert_eq!(
            gt.generate(s, &image).unwrap().masks,
            scene.sample.gt_masks.as_ref().unwrap().masks
        );
        assert_eq!(s.fg_instance, Some(0));
    }
}

/// Export toy embeddings of every applied candidate plus the whole-image
/// fallback, the way an external exporter would.
fn export_embeddings(scenes: &[occam_core::synthgen::SynthSample]) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(occam_core::backend::toy::TOY_DIM);
    for s in scenes {
        let (h, w) = s.image.dims();
        let full = apply_mask(&mode(), &s.image, &BinaryMask::full(h, w), None).unwrap();
        table
            .push(
                embedding_key(&s.sample.id, None),
                toy_features(&full.image).values(),
            )
            .unwrap();
        for (k, m) in s.candidates.masks.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            let applied = apply_mask(&mode(), &s.image, m, Some(k)).unwrap();
            table
                .push(
                    embedding_key(&s.sample.id, Some(k)),
                    toy_features(&applied.image).values(),
                )
                .unwrap();
        }
    }
    table
}

#[test]
fn exported_embeddings_replay_the_in_memory_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = generate(&SynthSpec::new(60, 11)).unwrap();
    let test = generate(&SynthSpec::new(30, 12).with_correlation(0.0)).unwrap();
    let train_samples: Vec<_> = train.iter().map(|s| s.sample.clone()).collect();
    let head = fit_toy_heads(&train_samples, 2, &mode(), 1, 100.0, 0)
        .unwrap()
        .remove(0);

    let emb_path = dir.path().join("emb.oce");
    export_embeddings(&test).write(&emb_path).unwrap();
    let names = SynthSpec::new(1, 0).class_names();
    head_table(&head, &names)
        .unwrap()
        .write(&dir.path().join("classes.oce"))
        .unwrap();
    let cfg_path = dir.path().join("ensemble.json");
    EnsembleConfig {
        members: vec![MemberConfig {
            name: "exported".into(),
            encoder: EncoderConfig::File {
                embeddings: PathBuf::from("emb.oce"),
                accepts_alpha: false,
            },
            head: HeadConfig {
                class_embeddings: PathBuf::from("classes.oce"),
                temperature: 100.0,
                group_map: None,
            },
        }],
    }
    .save(&cfg_path)
    .unwrap();

    let replayed = EnsembleConfig::load(&cfg_path)
        .unwrap()
        .build(dir.path())
        .unwrap();
    // same stored (f32) class embeddings, live toy encoder
    let live = EnsembleSpec::single(
        Arc::new(ToyEncoder::new()),
        replayed.members()[0].head.clone(),
    )
    .unwrap();
    let masks = PrecomputedMasks::new(
        "noisy",
        MaskSource::Synthetic,
        test.iter()
            .map(|s| (s.sample.id.clone(), s.candidates.clone()))
            .collect(),
    );
    for strategy in [ScoringStrategy::ClassAided, ScoringStrategy::SingleEntropy] {
        let cfg = OccamConfig::new(mode(), strategy).with_evaluation_mode(true);
        for s in &test {
            let a = occam_classify(&s.sample, &masks, &live, &cfg).unwrap();
            let b = occam_classify(&s.sample, &masks, &replayed, &cfg).unwrap();
            assert_eq!(a, b, "sample {}", s.sample.id);
        }
    }

    // reloaded rows are the in-process embeddings (cosine distance 0)
    let table = EmbeddingTable::read(&emb_path).unwrap();
    let s = &test[0];
    let applied = apply_mask(&mode(), &s.image, &s.candidates.masks[0], Some(0)).unwrap();
    let live_emb = ToyEncoder::new().encode(&s.sample.id, &applied).unwrap();
    let row = table.get(&embedding_key(&s.sample.id, Some(0))).unwrap();
    let dot: f64 = row
        .iter()
        .zip(live_emb.values())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    assert!((1.0 - dot / (norm(row) * norm(live_emb.values()))).abs() < 1e-6);
}

#[test]
fn file_encoder_refuses_alpha_input_it_cannot_take() {
    let scene = generate(&SynthSpec::new(1, 5)).unwrap().remove(0);
    let table = export_embeddings(std::slice::from_ref(&scene));
    let enc = FileEncoder::new("rgb-only", table, false);
    let applied = apply_mask(
        &ApplicationMode::AlphaChannel,
        &scene.image,
        &scene.candidates.masks[0],
        Some(0),
    )
    .unwrap();
    assert!(matches!(
        enc.encode(&scene.sample.id, &applied),
        Err(Error::Config(_))
    ));
}

#[test]
fn missing_embedding_is_a_per_sample_error() {
    let scene = generate(&SynthSpec::new(1, 6)).unwrap().remove(0);
    let enc = FileEncoder::new("empty", EmbeddingTable::new(12), false);
    let applied = apply_mask(&mode(), &scene.image, &scene.candidates.masks[0], Some(0)).unwrap();
    assert!(matches!(
        enc.encode(&scene.sample.id, &applied),
        Err(Error::EmbeddingNotFound(_))
    ));
}
