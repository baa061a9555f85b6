//! Data model for picture-description samples and their precomputed
//! per-modality embeddings.

mod container;
mod csv_import;
mod manifest;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use csv_import::import_csv;
pub use manifest::{load_dataset, load_dataset_with_warnings, write_dataset, Manifest, ManifestModality, MANIFEST_FILE};
pub use synth::{generate_synthetic, generate_synthetic_pair, SynthConfig};

/// Ground-truth cognitive status. MCI is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CognitiveLabel {
    NC = 0,
    MCI = 1,
}

impl CognitiveLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            CognitiveLabel::NC
        } else {
            CognitiveLabel::MCI
        }
    }
}

impl FromStr for CognitiveLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "NC" | "nc" | "0" => Ok(CognitiveLabel::NC),
            "MCI" | "mci" | "1" => Ok(CognitiveLabel::MCI),
            other => Err(Error::InvalidDataset(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    En,
    Zh,
}

impl Language {
    /// Picture ids described by speakers of this language.
    pub fn pictures(self) -> [u8; 3] {
        match self {
            Language::En => [1, 2, 3],
            Language::Zh => [4, 5, 6],
        }
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "En" | "en" | "EN" => Ok(Language::En),
            "Zh" | "zh" | "ZH" => Ok(Language::Zh),
            other => Err(Error::InvalidDataset(format!("unknown language {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Gender::M),
            "F" | "f" => Ok(Gender::F),
            other => Err(Error::InvalidDataset(format!("unknown gender {other:?}"))),
        }
    }
}

/// Input channel. Acoustic features are handcrafted; the others come from
/// pretrained encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Acoustic,
    Text,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Speech,
        Modality::Acoustic,
        Modality::Text,
        Modality::Image,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Acoustic => "acoustic",
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "speech" => Ok(Modality::Speech),
            "acoustic" => Ok(Modality::Acoustic),
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(Error::InvalidDataset(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub participant_id: String,
    pub picture_id: u8,
    pub language: Language,
    pub gender: Gender,
    pub label: CognitiveLabel,
    pub row_index: usize,
}

/// Dense `f32` embedding matrix for one modality, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBlock {
    pub modality: Modality,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl ModalityBlock {
    pub fn new(modality: Modality, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset(format!("{modality}: dim must be positive")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidDataset(format!(
                "{modality}: {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(ModalityBlock { modality, dim, data })
    }

    pub fn row_count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Immutable collection of samples plus their modality blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    blocks: BTreeMap<Modality, ModalityBlock>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, blocks: BTreeMap<Modality, ModalityBlock>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate sample_id {:?} at sample {i}",
                    s.sample_id
                )));
            }
            if !(1..=6).contains(&s.picture_id) {
                return Err(Error::InvalidDataset(format!(
                    "sample {:?}: picture_id {} outside 1..=6",
                    s.sample_id, s.picture_id
                )));
            }
        }
        for (m, block) in &blocks {
            if block.modality != *m {
                return Err(Error::InvalidDataset(format!("block keyed {m} holds {}", block.modality)));
            }
            if block.row_count() != samples.len() {
                return Err(Error::InvalidDataset(format!(
                    "{m}: {} rows for {} samples",
                    block.row_count(),
                    samples.len()
                )));
            }
            if let Some(s) = samples.iter().find(|s| s.row_index >= block.row_count()) {
                return Err(Error::InvalidDataset(format!(
                    "sample {:?}: row_index {} out of range for {m}",
                    s.sample_id, s.row_index
                )));
            }
            if let Some(pos) = block.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "{m}: non-finite value at row {}, column {}",
                    pos / block.dim,
                    pos % block.dim
                )));
            }
        }
        Ok(Dataset { samples, blocks })
    }

    pub fn empty() -> Self {
        Dataset {
            samples: Vec::new(),
            blocks: BTreeMap::new(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn blocks(&self) -> &BTreeMap<Modality, ModalityBlock> {
        &self.blocks
    }

    pub fn block(&self, m: Modality) -> Option<&ModalityBlock> {
        self.blocks.get(&m)
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.blocks.keys().copied().collect()
    }

    pub fn dim(&self, m: Modality) -> Option<usize> {
        self.blocks.get(&m).map(|b| b.dim)
    }

    /// Upcasts the embeddings of the given samples (by position in
    /// `samples()`) to an `f64` matrix.
    pub fn features(&self, m: Modality, sample_positions: &[usize]) -> Result<Matrix> {
        let block = self
            .blocks
            .get(&m)
            .ok_or_else(|| Error::InvalidDataset(format!("modality {m} not present")))?;
        let mut data = Vec::with_capacity(sample_positions.len() * block.dim);
        for &p in sample_positions {
            let row = block.row(self.samples[p].row_index);
            data.extend(row.iter().map(|&v| f64::from(v)));
        }
        Matrix::new(sample_positions.len(), block.dim, data)
    }

    pub fn position_of(&self, sample_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.sample_id == sample_id)
    }

    /// Soft structural checks: three samples per participant, one per
    /// picture of the participant's language, consistent metadata.
    pub fn structure_warnings(&self) -> Vec<String> {
        let mut by_participant: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
        for s in &self.samples {
            by_participant.entry(&s.participant_id).or_default().push(s);
        }
        let mut warnings = Vec::new();
        for (pid, samples) in by_participant {
            if samples.len() != 3 {
                warnings.push(format!("participant {pid} has {} samples, expected 3", samples.len()));
            }
            let first = samples[0];
            if samples.iter().any(|s| {
                s.language != first.language || s.gender != first.gender || s.label != first.label
            }) {
                warnings.push(format!("participant {pid} has inconsistent language/gender/label"));
            }
            let pictures: BTreeSet<u8> = samples.iter().map(|s| s.picture_id).collect();
            if pictures.len() != samples.len() {
                warnings.push(format!("participant {pid} repeats a picture"));
            }
            for s in &samples {
                if !s.language.pictures().contains(&s.picture_id) {
                    warnings.push(format!(
                        "sample {} uses picture {} outside the {:?} triple",
                        s.sample_id, s.picture_id, s.language
                    ));
                }
            }
        }
        warnings
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let mci = self
            .samples
            .iter()
            .filter(|s| s.label == CognitiveLabel::MCI)
            .count();
        (mci, self.samples.len() - mci)
    }
}
