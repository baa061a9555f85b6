//! CSV ingestion: a samples table plus one sidecar embedding CSV per
//! modality, keyed by `sample_id`.
//!
//! Samples header: `sample_id,participant_id,picture_id,language,gender,label`.
//! Sidecar rows: `sample_id,v0,v1,...` with a header row whose first column
//! is `sample_id`. Sidecar row order does not matter.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use super::{Dataset, Modality, ModalityBlock, Sample};
use crate::error::{Error, Result};

const SAMPLE_HEADER: [&str; 6] = [
    "sample_id",
    "participant_id",
    "picture_id",
    "language",
    "gender",
    "label",
];

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn import_csv(samples_csv: &Path, sidecars: &[(Modality, PathBuf)]) -> Result<Dataset> {
    let samples = read_samples(samples_csv)?;
    let position: HashMap<&str, usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sample_id.as_str(), i))
        .collect();

    let mut blocks = BTreeMap::new();
    for (modality, path) in sidecars {
        let block = read_sidecar(*modality, path, &position)?;
        blocks.insert(*modality, block);
    }
    Dataset::new(samples, blocks)
}

fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != SAMPLE_HEADER {
        return Err(format_err(
            path,
            format!("expected header {}, found {}", SAMPLE_HEADER.join(","), header.join(",")),
        ));
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |k: usize| record.get(k).unwrap_or("").trim();
        let picture_id: u8 = field(2)
            .parse()
            .map_err(|_| format_err(path, format!("line {line}: bad picture_id {:?}", field(2))))?;
        let wrap = |e: Error| format_err(path, format!("line {line}: {e}"));
        samples.push(Sample {
            sample_id: field(0).to_string(),
            participant_id: field(1).to_string(),
            picture_id,
            language: field(3).parse().map_err(wrap)?,
            gender: field(4).parse().map_err(wrap)?,
            label: field(5).parse().map_err(wrap)?,
            row_index: i,
        });
    }
    Ok(samples)
}

fn read_sidecar(
    modality: Modality,
    path: &Path,
    position: &HashMap<&str, usize>,
) -> Result<ModalityBlock> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let header = reader.headers()?.clone();
    if header.get(0).map(str::trim) != Some("sample_id") || header.len() < 2 {
        return Err(format_err(path, "header must start with sample_id followed by value columns"));
    }
    let dim = header.len() - 1;
    let mut data = vec![0f32; position.len() * dim];
    let mut filled = vec![false; position.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let id = record.get(0).unwrap_or("").trim();
        let &row = position
            .get(id)
            .ok_or_else(|| format_err(path, format!("line {line}: unknown sample_id {id:?}")))?;
        if filled[row] {
            return Err(format_err(path, format!("line {line}: sample_id {id:?} repeated")));
        }
        if record.len() != dim + 1 {
            return Err(format_err(
                path,
                format!("line {line}: {} values, expected {dim}", record.len() - 1),
            ));
        }
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("line {line}: bad value {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row,
                    col: c,
                });
            }
            data[row * dim + c] = v;
        }
        filled[row] = true;
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        let id = position
            .iter()
            .find(|(_, &p)| p == missing)
            .map(|(id, _)| *id)
            .unwrap_or("?");
        return Err(format_err(path, format!("no embedding row for sample_id {id:?}")));
    }
    ModalityBlock::new(modality, dim, data)
}
