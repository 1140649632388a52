//! File readers and writers shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use shapelinker::aligner::AlignerModel;
use shapelinker::chem::parse_molfile;
use shapelinker::nn::Checkpoint;
use shapelinker::rl::SequenceModel;
use shapelinker::surface::AtomSet;
use shapelinker::{Error, PointCloud};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn is_molfile(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("sdf" | "mol")
    )
}

/// Atoms from an XYZ file or, by extension, a V2000 molfile.
pub fn read_atoms(path: &Path) -> Result<AtomSet> {
    let text = read_text(path)?;
    let atoms = if is_molfile(path) {
        parse_molfile(&text).map(|m| m.atoms)
    } else {
        AtomSet::from_xyz(&text)
    };
    atoms.with_context(|| format!("reading atoms from {}", path.display()))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    PointCloud::from_xyz(&text).with_context(|| format!("reading point cloud from {}", path.display()))
}

pub fn read_aligner(path: &Path) -> Result<AlignerModel> {
    let text = read_text(path)?;
    Checkpoint::from_json(&text)
        .and_then(|c| AlignerModel::from_checkpoint(&c))
        .with_context(|| format!("loading aligner checkpoint {}", path.display()))
}

pub fn write_aligner(path: &Path, model: &AlignerModel) -> Result<()> {
    write_text(path, &model.to_checkpoint().to_json()?)
}

pub fn read_sequence_model(path: &Path) -> Result<SequenceModel> {
    let text = read_text(path)?;
    Checkpoint::from_json(&text)
        .and_then(|c| SequenceModel::from_checkpoint(&c))
        .with_context(|| format!("loading sequence model checkpoint {}", path.display()))
}

pub fn write_sequence_model(path: &Path, model: &SequenceModel) -> Result<()> {
    write_text(path, &model.to_checkpoint().to_json()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One manifest entry; paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub query_xyz_path: PathBuf,
    pub reference_xyz_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub type Pair = (PointCloud, PointCloud);

/// Loads every pair of a manifest, split into (train, val). Without explicit
/// splits the last `val_fraction` of the entries are held out.
pub fn read_manifest(path: &Path, val_fraction: f64) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let text = read_text(path)?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!("manifest {} lists no pairs", path.display())).into());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::with_capacity(entries.len());
    for e in &entries {
        let q = read_cloud(&base.join(&e.query_xyz_path))?;
        let r = read_cloud(&base.join(&e.reference_xyz_path))?;
        pairs.push(((q, r), e.split));
    }
    if entries.iter().any(|e| e.split.is_some()) {
        let (val, train): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(_, s)| *s == Some(Split::Val));
        return Ok((train.into_iter().map(|(p, _)| p).collect(), val.into_iter().map(|(p, _)| p).collect()));
    }
    let n_val = ((pairs.len() as f64) * val_fraction).round() as usize;
    let n_train = pairs.len() - n_val.min(pairs.len() - 1);
    let mut all: Vec<Pair> = pairs.into_iter().map(|(p, _)| p).collect();
    let val = all.split_off(n_train);
    Ok((all, val))
}

/// Exit status for an error chain: 3 for numeric or training failures, 2
/// for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_)
                | Error::SamplingFailed { .. }
                | Error::TrainingFailed { .. }
                | Error::Diverged { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}
