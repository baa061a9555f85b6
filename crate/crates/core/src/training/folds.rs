use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, StratifyBy};
use crate::dataset::{CognitiveLabel, Dataset, Language};
use crate::error::{Error, Result};
use crate::numerics::rng;

const STREAM_FOLDS: u64 = 0x_f01d;

/// Train/validation partition for one fold, as positions into
/// `Dataset::samples()`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl FoldSplit {
    pub fn validation_ids(&self, ds: &Dataset) -> Vec<String> {
        self.validation
            .iter()
            .map(|&i| ds.samples()[i].sample_id.clone())
            .collect()
    }
}

/// Deals shuffled stratum members round-robin over `k` folds. The dealing
/// position carries over from one stratum to the next, so both fold sizes
/// and per-stratum counts differ by at most one between folds.
///
/// With `group_by_participant` the dealt units are participants (stratified
/// by the label of their first sample), so no participant spans folds.
pub fn stratified_kfold(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<FoldSplit>> {
    let k = cfg.k_folds;
    if k < 2 {
        return Err(Error::InvalidConfig("k_folds must be >= 2".into()));
    }

    let units: Vec<Vec<usize>> = if cfg.group_by_participant {
        let mut order: Vec<&str> = Vec::new();
        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in ds.samples().iter().enumerate() {
            let entry = members.entry(&s.participant_id).or_default();
            if entry.is_empty() {
                order.push(&s.participant_id);
            }
            entry.push(i);
        }
        order.into_iter().map(|p| members.remove(p).unwrap()).collect()
    } else {
        (0..ds.len()).map(|i| vec![i]).collect()
    };

    let mut strata: BTreeMap<(CognitiveLabel, Option<Language>), Vec<usize>> = BTreeMap::new();
    for (u, positions) in units.iter().enumerate() {
        let s = &ds.samples()[positions[0]];
        let lang = match cfg.stratify_by {
            StratifyBy::Label => None,
            StratifyBy::LabelAndLanguage => Some(s.language),
        };
        strata.entry((s.label, lang)).or_default().push(u);
    }
    for ((label, lang), members) in &strata {
        if members.len() < k {
            let stratum = match lang {
                Some(l) => format!("{label:?}/{l:?}"),
                None => format!("{label:?}"),
            };
            return Err(Error::StratumTooSmall {
                stratum,
                count: members.len(),
                k,
            });
        }
    }

    let mut r = rng(cfg.seed, STREAM_FOLDS);
    let mut validation: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0usize;
    for members in strata.values_mut() {
        members.shuffle(&mut r);
        for &u in members.iter() {
            validation[next % k].extend_from_slice(&units[u]);
            next += 1;
        }
    }

    Ok(validation
        .into_iter()
        .enumerate()
        .map(|(fold_index, mut val)| {
            val.sort_unstable();
            let mut in_val = vec![false; ds.len()];
            val.iter().for_each(|&i| in_val[i] = true);
            let train = (0..ds.len()).filter(|&i| !in_val[i]).collect();
            FoldSplit {
                fold_index,
                train,
                validation: val,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Gender, Sample, SynthConfig};
    use std::collections::{BTreeSet, HashSet};

    fn labels_only(labels: &[CognitiveLabel]) -> Dataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Sample {
                sample_id: format!("s{i}"),
                participant_id: format!("p{i}"),
                picture_id: 1,
                language: Language::En,
                gender: Gender::F,
                label,
                row_index: i,
            })
            .collect();
        Dataset::new(samples, Default::default()).unwrap()
    }

    #[test]
    fn corpus_sized_split_counts() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        let folds = stratified_kfold(&ds, &ExperimentConfig::default()).unwrap();
        assert_eq!(folds.len(), 10);
        let mut seen = HashSet::new();
        for f in &folds {
            let n = f.validation.len();
            let mci = f
                .validation
                .iter()
                .filter(|&&i| ds.samples()[i].label == CognitiveLabel::MCI)
                .count();
            assert!((38..=39).contains(&n), "fold size {n}");
            assert!((22..=23).contains(&mci), "mci {mci}");
            assert_eq!(f.train.len() + n, 387);
            for &i in &f.validation {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), 387);
    }

    #[test]
    fn two_folds_on_four_samples() {
        use CognitiveLabel::*;
        let ds = labels_only(&[MCI, NC, MCI, NC]);
        let cfg = ExperimentConfig { k_folds: 2, ..Default::default() };
        for f in stratified_kfold(&ds, &cfg).unwrap() {
            let labels: BTreeSet<_> = f.validation.iter().map(|&i| ds.samples()[i].label).collect();
            assert_eq!(f.validation.len(), 2);
            assert_eq!(labels.len(), 2);
        }
    }

    #[test]
    fn stratum_smaller_than_k_is_rejected() {
        use CognitiveLabel::*;
        let mut labels = vec![MCI; 5];
        labels.extend(vec![NC; 20]);
        let ds = labels_only(&labels);
        let err = stratified_kfold(&ds, &ExperimentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StratumTooSmall { count: 5, k: 10, .. }));
    }

    #[test]
    fn participant_grouping_keeps_participants_together() {
        let ds = generate_synthetic(&SynthConfig { seed: 2, ..Default::default() }).unwrap();
        let cfg = ExperimentConfig { group_by_participant: true, ..Default::default() };
        let folds = stratified_kfold(&ds, &cfg).unwrap();
        let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &folds {
            for &i in &f.validation {
                let p = ds.samples()[i].participant_id.as_str();
                assert_eq!(*fold_of.entry(p).or_insert(f.fold_index), f.fold_index);
            }
        }
        assert_eq!(fold_of.len(), 129);
    }

    #[test]
    fn label_and_language_strata_are_balanced() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        let cfg = ExperimentConfig { stratify_by: StratifyBy::LabelAndLanguage, ..Default::default() };
        let folds = stratified_kfold(&ds, &cfg).unwrap();
        for lang in [Language::En, Language::Zh] {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.validation.iter().filter(|&&i| ds.samples()[i].language == lang).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 2, "{lang:?}: {counts:?}");
        }
    }

    #[test]
    fn seeded_and_deterministic() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        let a = stratified_kfold(&ds, &ExperimentConfig { seed: 4, ..Default::default() }).unwrap();
        let b = stratified_kfold(&ds, &ExperimentConfig { seed: 4, ..Default::default() }).unwrap();
        let c = stratified_kfold(&ds, &ExperimentConfig { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
