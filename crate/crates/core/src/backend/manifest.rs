//! Dataset manifests: one JSON file per split pointing at images, candidate
//! mask directories and ground-truth instance maps.
//!
//! Relative paths resolve against the data root from [`LoadOptions`]
//! (`OCCAM_DATA_ROOT` via [`LoadOptions::from_env`]), falling back to the
//! manifest's own directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{BBox, MaskSet};
use crate::metrics::InstanceSegmentation;
use crate::sample::{ImageSource, LabeledSample};

pub const MANIFEST_VERSION: u32 = 1;
pub const DATA_ROOT_ENV: &str = "OCCAM_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: String,
    pub image: String,
    /// Directory of candidate masks named `0.png`, `1.png`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_dir: Option<String>,
    /// Expected number of candidate masks; when absent the directory is scanned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_seg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_bbox: Option<BBox>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    /// JSON array of class names; `label` indexes into it.
    pub class_names_ref: String,
    /// Instance id in `gt_seg` of the labelled foreground object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fg_instance: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub data_root: Option<PathBuf>,
    /// Abort on the first sample error instead of collecting them.
    pub fail_fast: bool,
}

impl LoadOptions {
    /// Options with the data root taken from `OCCAM_DATA_ROOT`, if set.
    pub fn from_env() -> Self {
        Self {
            data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
            fail_fast: false,
        }
    }
}

/// A loaded sample with lazily read pixels and candidate masks.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub sample: LabeledSample,
    pub dims: (usize, usize),
    pub masks_dir: Option<PathBuf>,
    pub mask_count: usize,
    pub gt_seg: Option<InstanceSegmentation>,
}

impl DatasetEntry {
    pub fn mask_path(&self, k: usize) -> Option<PathBuf> {
        self.masks_dir.as_ref().map(|d| d.join(format!("{k}.png")))
    }

    /// Read all candidate masks from disk.
    pub fn load_masks(&self, source: crate::mask::MaskSource) -> Result<MaskSet> {
        let mut masks = Vec::with_capacity(self.mask_count);
        for k in 0..self.mask_count {
            let p = self.mask_path(k).expect("mask_count > 0 implies masks_dir");
            masks.push(io::read_mask_png(&p)?);
        }
        MaskSet::new(masks, source).map_err(|e| e.for_sample(&self.sample.id))
    }
}

#[derive(Debug)]
pub struct SampleError {
    pub id: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub errors: Vec<SampleError>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.entries.iter().map(|e| &e.sample)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ids end up in file names and embedding keys, so `/` and friends are out.
pub fn validate_sample_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "sample id {id:?} must be non-empty ASCII alphanumerics, '_', '-' or '.'"
        )))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported manifest version {}", m.version),
        ));
    }
    Ok(m)
}

fn resolve(root: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn count_masks(dir: &Path) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            let k: usize = stem
                .parse()
                .map_err(|_| Error::format(dir, format!("unexpected mask file {name:?}")))?;
            indices.push(k);
        }
    }
    indices.sort_unstable();
    for (i, &k) in indices.iter().enumerate() {
        if i != k {
            return Err(Error::format(dir, format!("mask file {i}.png is missing")));
        }
    }
    Ok(indices.len())
}

fn load_entry(s: &ManifestSample, root: &Path, num_classes: usize) -> Result<DatasetEntry> {
    validate_sample_id(&s.id)?;
    let image_path = resolve(root, &s.image);
    let dims = io::png_dims(&image_path)?;
    if let Some(sum) = &s.image_sha256 {
        io::verify_sha256(&image_path, sum)?;
    }

    let (masks_dir, mask_count) = match &s.masks_dir {
        Some(d) => {
            let dir = resolve(root, d);
            let count = match s.mask_count {
                Some(n) => n,
                None => count_masks(&dir)?,
            };
            for k in 0..count {
                let p = dir.join(format!("{k}.png"));
                if !p.is_file() {
                    return Err(Error::format(&p, "mask file is missing"));
                }
                let md = io::png_dims(&p)?;
                if md != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        actual: md,
                    });
                }
            }
            (Some(dir), count)
        }
        None => (None, 0),
    };

    let mut sample = LabeledSample::new(
        s.id.clone(),
        ImageSource::File {
            path: image_path,
            sha256: s.image_sha256.clone(),
        },
        s.label,
    );
    sample.group = s.group;
    sample.gt_bbox = s.gt_bbox;

    let gt_seg = match &s.gt_seg {
        Some(p) => {
            let seg = io::read_instance_png(&resolve(root, p))?;
            if seg.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: seg.dims(),
                });
            }
            let ids = seg.instance_ids();
            if let Some(fg) = s.fg_instance {
                let idx = ids.iter().position(|&i| i == fg).ok_or_else(|| {
                    Error::InvalidInput(format!("fg_instance {fg} not present in gt_seg"))
                })?;
                sample.fg_instance = Some(idx);
            }
            sample.gt_masks = Some(seg.to_mask_set());
            Some(seg)
        }
        None => {
            if s.fg_instance.is_some() {
                return Err(Error::InvalidInput(
                    "fg_instance given without gt_seg".into(),
                ));
            }
            None
        }
    };
    sample.validate(num_classes, dims)?;
    Ok(DatasetEntry {
        sample,
        dims,
        masks_dir,
        mask_count,
        gt_seg,
    })
}

/// Load a manifest. Per-sample failures land in [`Dataset::errors`] (or abort
/// the load under `fail_fast`); manifest-level problems are returned as `Err`.
pub fn load_dataset_manifest(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let manifest = read_manifest(path)?;
    let root = match &opts.data_root {
        Some(r) => r.clone(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if manifest.samples.is_empty() {
        log::warn!("manifest {} has no samples", path.display());
        return Ok(Dataset::default());
    }

    let mut class_lists: BTreeMap<PathBuf, Vec<String>> = BTreeMap::new();
    for s in &manifest.samples {
        let p = resolve(&root, &s.class_names_ref);
        if let std::collections::btree_map::Entry::Vacant(slot) = class_lists.entry(p) {
            let names: Vec<String> = read_json(slot.key())?;
            slot.insert(names);
        }
    }
    let mut lists = class_lists.into_values();
    let class_names = lists.next().expect("non-empty manifest");
    if lists.any(|l| l != class_names) {
        return Err(Error::format(
            path,
            "samples reference different class lists",
        ));
    }
    if class_names.len() < 2 {
        return Err(Error::format(path, "class list needs at least two names"));
    }

    let loaded: Vec<Result<DatasetEntry>> = manifest
        .samples
        .par_iter()
        .map(|s| load_entry(s, &root, class_names.len()).map_err(|e| e.for_sample(&s.id)))
        .collect();

    let mut dataset = Dataset {
        class_names,
        ..Dataset::default()
    };
    let mut seen = HashSet::new();
    for (s, r) in manifest.samples.iter().zip(loaded) {
        let r = if seen.insert(s.id.clone()) {
            r
        } else {
            Err(Error::InvalidInput("duplicate sample id".into()).for_sample(&s.id))
        };
        match r {
            Ok(e) => dataset.entries.push(e),
            Err(e) if opts.fail_fast => return Err(e),
            Err(error) => {
                log::warn!("{error}");
                dataset.errors.push(SampleError {
                    id: s.id.clone(),
                    error,
                });
            }
        }
    }
    Ok(dataset)
}

/// Everything needed to write one sample to disk.
#[derive(Debug, Clone)]
pub struct SampleRecord<'a> {
    pub id: &'a str,
    pub image: &'a ImageTensor,
    pub candidates: Option<&'a MaskSet>,
    pub gt_seg: Option<&'a InstanceSegmentation>,
    pub gt_bbox: Option<BBox>,
    pub label: usize,
    pub group: Option<usize>,
    pub fg_instance: Option<u16>,
}

pub const CLASS_NAMES_FILE: &str = "classes.json";

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_record(root: &Path, r: &SampleRecord<'_>) -> Result<ManifestSample> {
    validate_sample_id(r.id)?;
    let image_rel = format!("images/{}.png", r.id);
    let image_path = root.join(&image_rel);
    io::write_rgb_png(&image_path, r.image)?;
    let sha = io::sha256_file(&image_path)?;

    let (masks_dir, mask_count) = match r.candidates {
        Some(set) => {
            set.ensure_dims(r.image.dims())?;
            let rel = format!("masks/{}", r.id);
            let dir = root.join(&rel);
            create_dir(&dir)?;
            for (k, m) in set.masks.iter().enumerate() {
                io::write_mask_png(&dir.join(format!("{k}.png")), m)?;
            }
            (Some(rel), Some(set.len()))
        }
        None => (None, None),
    };

    let gt_seg = match r.gt_seg {
        Some(seg) => {
            if seg.dims() != r.image.dims() {
                return Err(Error::DimensionMismatch {
                    expected: r.image.dims(),
                    actual: seg.dims(),
                });
            }
            let rel = format!("gt/{}.png", r.id);
            io::write_instance_png(&root.join(&rel), seg)?;
            Some(rel)
        }
        None => None,
    };

    Ok(ManifestSample {
        id: r.id.to_string(),
        image: image_rel,
        masks_dir,
        mask_count,
        gt_seg,
        gt_bbox: r.gt_bbox,
        label: r.label,
        group: r.group,
        class_names_ref: CLASS_NAMES_FILE.to_string(),
        fg_instance: r.fg_instance,
        image_sha256: Some(sha),
    })
}

/// Write a split under `root` (images/, masks/, gt/, classes.json and the
/// manifest itself) and return the manifest path. Paths inside the manifest
/// are relative to `root`.
pub fn write_dataset(
    root: &Path,
    manifest_name: &str,
    class_names: &[String],
    records: &[SampleRecord<'_>],
) -> Result<PathBuf> {
    for sub in ["images", "masks", "gt"] {
        create_dir(&root.join(sub))?;
    }
    write_json(&root.join(CLASS_NAMES_FILE), &class_names)?;
    let samples = records
        .par_iter()
        .map(|r| write_record(root, r).map_err(|e| e.for_sample(r.id)))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        samples,
    };
    let path = root.join(manifest_name);
    write_json(&path, &manifest)?;
    Ok(path)
}
