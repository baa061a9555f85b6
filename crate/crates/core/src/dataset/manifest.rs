use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_container, write_container};
use super::{Dataset, Modality, ModalityBlock, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub modalities: Vec<ManifestModality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModality {
    pub name: Modality,
    pub dim: usize,
    /// Container path, relative to the manifest's directory.
    pub file: String,
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let (ds, warnings) = load_dataset_with_warnings(manifest_path)?;
    for w in &warnings {
        log::warn!("{}: {w}", manifest_path.display());
    }
    Ok(ds)
}

/// Loads and validates a dataset, returning soft structural warnings
/// alongside it instead of logging them.
pub fn load_dataset_with_warnings(manifest_path: &Path) -> Result<(Dataset, Vec<String>)> {
    if !manifest_path.is_file() {
        return Err(Error::ManifestNotFound(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.to_path_buf(),
        detail: e.to_string(),
    })?;

    let mut seen = HashSet::new();
    for (index, s) in manifest.samples.iter().enumerate() {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::DuplicateSample {
                path: manifest_path.to_path_buf(),
                id: s.sample_id.clone(),
                index,
            });
        }
    }

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut blocks = BTreeMap::new();
    for entry in &manifest.modalities {
        let path = base.join(&entry.file);
        let (dim, data) = read_container(&path)?;
        let rows = data.len().checked_div(dim).unwrap_or(0);
        if dim != entry.dim {
            return Err(Error::DimMismatch {
                path,
                modality: entry.name.to_string(),
                declared: entry.dim,
                found: dim,
            });
        }
        if rows != manifest.samples.len() {
            return Err(Error::Format {
                path,
                detail: format!(
                    "container has {rows} rows, manifest lists {} samples",
                    manifest.samples.len()
                ),
            });
        }
        if blocks.contains_key(&entry.name) {
            return Err(Error::Format {
                path: manifest_path.to_path_buf(),
                detail: format!("modality {} listed twice", entry.name),
            });
        }
        blocks.insert(entry.name, ModalityBlock::new(entry.name, entry.dim, data)?);
    }

    let ds = Dataset::new(manifest.samples, blocks)?;
    let warnings = ds.structure_warnings();
    Ok((ds, warnings))
}

/// Writes `manifest.json` plus one `<modality>.mceb` container per block.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut modalities = Vec::new();
    for (m, block) in ds.blocks() {
        let file = format!("{}.mceb", m.name());
        write_container(&dir.join(&file), block.dim, &block.data)?;
        modalities.push(ManifestModality {
            name: *m,
            dim: block.dim,
            file,
        });
    }
    let manifest = Manifest {
        samples: ds.samples().to_vec(),
        modalities,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}
