//! JSON description of an ensemble: which encoder each member uses and where
//! its class embeddings live.
//!
//! ```json
//! {"members": [{"name": "m0",
//!               "encoder": {"kind": "file", "embeddings": "emb.oce", "accepts_alpha": false},
//!               "head": {"class_embeddings": "classes.oce", "temperature": 100.0}}]}
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::files::FileEncoder;
use super::oce::EmbeddingTable;
use super::toy::ToyEncoder;
use super::{ClassifierHead, EnsembleMember, EnsembleSpec, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderConfig {
    Toy,
    File {
        embeddings: PathBuf,
        #[serde(default)]
        accepts_alpha: bool,
    },
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// `OCE1` table with one row per class, in class order.
    pub class_embeddings: PathBuf,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_map: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberConfig {
    pub name: String,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: Vec<MemberConfig>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Class embeddings of a head as stored in an `OCE1` table.
pub fn head_table(head: &ClassifierHead, class_names: &[String]) -> Result<EmbeddingTable> {
    if class_names.len() != head.num_classes() {
        return Err(Error::InvalidInput(format!(
            "{} class names for {} classes",
            class_names.len(),
            head.num_classes()
        )));
    }
    let mut t = EmbeddingTable::new(head.dim());
    for (name, row) in class_names.iter().zip(head.class_embeddings()) {
        let row: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        t.push(name.clone(), &row)?;
    }
    Ok(t)
}

impl EnsembleConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load every member's tables and assemble the ensemble.
    pub fn build(&self, base_dir: &Path) -> Result<EnsembleSpec> {
        let mut members = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let encoder: Arc<dyn super::Encoder> = match &m.encoder {
                EncoderConfig::Toy => Arc::new(ToyEncoder::new()),
                EncoderConfig::File {
                    embeddings,
                    accepts_alpha,
                } => {
                    let table = EmbeddingTable::read(&resolve(base_dir, embeddings))?;
                    Arc::new(FileEncoder::new(m.name.clone(), table, *accepts_alpha))
                }
            };
            let table = EmbeddingTable::read(&resolve(base_dir, &m.head.class_embeddings))?;
            let rows: Vec<Vec<f32>> = table.rows().map(<[f32]>::to_vec).collect();
            let head = ClassifierHead::new(&rows, m.head.temperature, m.head.group_map.clone())
                .map_err(|e| Error::Config(format!("member {}: {e}", m.name)))?;
            members.push(EnsembleMember { encoder, head });
        }
        EnsembleSpec::new(members)
    }
}
