//! Synthetic corpus with planted picture clusters, a label direction and an
//! optional label-correlated shift confined to one language subgroup.
//!
//! For modality `m`, sample `i` with label sign `s` (+1 MCI, −1 NC):
//!
//! ```text
//! row = centroid[m][picture]  · picture_signal_strength
//!     + label_dir[m]          · label_signal_strength · s
//!     + shift_dir[m]          · subgroup_shift_norm · spurious_subgroup_bias · s · flip
//!                             (only for spurious_language samples and spurious_modalities)
//!     + N(0, noise_std²) per coordinate
//! ```
//!
//! All direction vectors are unit length. `flip` is +1 for the training
//! corpus and −1 for the bias-flipped twin, which shares every other draw.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CognitiveLabel, Dataset, Gender, Language, Modality, ModalityBlock, Sample};
use crate::error::{Error, Result};
use crate::numerics::{rng, standard_normal, Rng};

const STREAM_STRUCTURE: u64 = 1;
const STREAM_DIRECTIONS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_participants: usize,
    /// English-speaking participants; the rest speak Chinese.
    pub en_participants: usize,
    pub mci_participants: usize,
    pub en_mci_participants: usize,
    pub mci_male_participants: usize,
    pub nc_male_participants: usize,
    pub dims: BTreeMap<Modality, usize>,
    pub picture_signal_strength: f64,
    pub label_signal_strength: f64,
    pub spurious_subgroup_bias: f64,
    pub spurious_language: Language,
    pub spurious_modalities: Vec<Modality>,
    pub subgroup_shift_norm: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 129 participants (74 MCI / 55 NC), 62 English and 67 Chinese, giving
    /// 387 samples with 222 labelled MCI.
    fn default() -> Self {
        SynthConfig {
            n_participants: 129,
            en_participants: 62,
            mci_participants: 74,
            en_mci_participants: 41,
            mci_male_participants: 29,
            nc_male_participants: 21,
            dims: [
                (Modality::Speech, 32),
                (Modality::Acoustic, 16),
                (Modality::Text, 32),
                (Modality::Image, 32),
            ]
            .into_iter()
            .collect(),
            picture_signal_strength: 1.0,
            label_signal_strength: 0.5,
            spurious_subgroup_bias: 0.0,
            spurious_language: Language::Zh,
            spurious_modalities: vec![Modality::Speech, Modality::Acoustic],
            subgroup_shift_norm: 3.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_participants == 0 {
            return bad("n_participants must be positive".into());
        }
        if self.en_participants > self.n_participants {
            return bad("en_participants exceeds n_participants".into());
        }
        if self.mci_participants > self.n_participants {
            return bad("mci_participants exceeds n_participants".into());
        }
        let zh = self.n_participants - self.en_participants;
        let nc = self.n_participants - self.mci_participants;
        if self.en_mci_participants > self.en_participants.min(self.mci_participants) {
            return bad("en_mci_participants exceeds English or MCI participants".into());
        }
        if self.mci_participants - self.en_mci_participants > zh {
            return bad("MCI participants do not fit in the Chinese subgroup".into());
        }
        if self.en_participants - self.en_mci_participants > nc {
            return bad("NC participants do not fit in the English subgroup".into());
        }
        if self.mci_male_participants > self.mci_participants || self.nc_male_participants > nc {
            return bad("male participant counts exceed class sizes".into());
        }
        if self.dims.is_empty() || self.dims.values().any(|&d| d == 0) {
            return bad("every modality dim must be positive".into());
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be > 0, got {}", self.noise_std));
        }
        for (name, v) in [
            ("picture_signal_strength", self.picture_signal_strength),
            ("label_signal_strength", self.label_signal_strength),
            ("subgroup_shift_norm", self.subgroup_shift_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.spurious_subgroup_bias) {
            return bad(format!(
                "spurious_subgroup_bias must be in [0, 1], got {}",
                self.spurious_subgroup_bias
            ));
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    generate(cfg, false)
}

/// Training corpus plus its bias-flipped twin: identical samples and noise,
/// with the subgroup shift's label correlation reversed.
pub fn generate_synthetic_pair(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    Ok((generate(cfg, false)?, generate(cfg, true)?))
}

struct Participant {
    language: Language,
    gender: Gender,
    label: CognitiveLabel,
}

fn assign_participants(cfg: &SynthConfig, r: &mut Rng) -> Vec<Participant> {
    let n = cfg.n_participants;
    let mut participants: Vec<Participant> = (0..n)
        .map(|i| Participant {
            language: if i < cfg.en_participants { Language::En } else { Language::Zh },
            gender: Gender::F,
            label: CognitiveLabel::NC,
        })
        .collect();

    let mut en: Vec<usize> = (0..cfg.en_participants).collect();
    let mut zh: Vec<usize> = (cfg.en_participants..n).collect();
    en.shuffle(r);
    zh.shuffle(r);
    let zh_mci = cfg.mci_participants - cfg.en_mci_participants;
    for &i in en[..cfg.en_mci_participants].iter().chain(&zh[..zh_mci]) {
        participants[i].label = CognitiveLabel::MCI;
    }

    for (label, males) in [
        (CognitiveLabel::MCI, cfg.mci_male_participants),
        (CognitiveLabel::NC, cfg.nc_male_participants),
    ] {
        let mut members: Vec<usize> = (0..n).filter(|&i| participants[i].label == label).collect();
        members.shuffle(r);
        for &i in &members[..males] {
            participants[i].gender = Gender::M;
        }
    }
    participants
}

fn unit_vector(r: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct Directions {
    centroids: Vec<Vec<f64>>,
    label: Vec<f64>,
    shift: Vec<f64>,
}

fn generate(cfg: &SynthConfig, flip: bool) -> Result<Dataset> {
    cfg.validate()?;
    let mut structure = rng(cfg.seed, STREAM_STRUCTURE);
    let mut directions_rng = rng(cfg.seed, STREAM_DIRECTIONS);
    let mut noise = rng(cfg.seed, STREAM_NOISE);

    let participants = assign_participants(cfg, &mut structure);
    let mut samples = Vec::with_capacity(participants.len() * 3);
    for (p, part) in participants.iter().enumerate() {
        for picture in part.language.pictures() {
            samples.push(Sample {
                sample_id: format!("P{p:03}_{picture}"),
                participant_id: format!("P{p:03}"),
                picture_id: picture,
                language: part.language,
                gender: part.gender,
                label: part.label,
                row_index: samples.len(),
            });
        }
    }

    let directions: BTreeMap<Modality, Directions> = cfg
        .dims
        .iter()
        .map(|(&m, &dim)| {
            let centroids = (0..6).map(|_| unit_vector(&mut directions_rng, dim)).collect();
            let label = unit_vector(&mut directions_rng, dim);
            let shift = unit_vector(&mut directions_rng, dim);
            (m, Directions { centroids, label, shift })
        })
        .collect();

    let mut data: BTreeMap<Modality, Vec<f32>> = cfg
        .dims
        .iter()
        .map(|(&m, &dim)| (m, Vec::with_capacity(samples.len() * dim)))
        .collect();
    let flip_sign = if flip { -1.0 } else { 1.0 };
    for s in &samples {
        let sign = if s.label == CognitiveLabel::MCI { 1.0 } else { -1.0 };
        for (m, dirs) in &directions {
            let shifted = s.language == cfg.spurious_language && cfg.spurious_modalities.contains(m);
            let shift_coef = if shifted {
                cfg.subgroup_shift_norm * cfg.spurious_subgroup_bias * sign * flip_sign
            } else {
                0.0
            };
            let centroid = &dirs.centroids[usize::from(s.picture_id) - 1];
            let out = data.get_mut(m).unwrap();
            for j in 0..centroid.len() {
                let v = centroid[j] * cfg.picture_signal_strength
                    + dirs.label[j] * cfg.label_signal_strength * sign
                    + dirs.shift[j] * shift_coef
                    + standard_normal(&mut noise) * cfg.noise_std;
                out.push(v as f32);
            }
        }
    }

    let blocks = data
        .into_iter()
        .map(|(m, values)| Ok((m, ModalityBlock::new(m, cfg.dims[&m], values)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Dataset::new(samples, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts_match_corpus_totals() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(ds.len(), 387);
        assert_eq!(ds.label_counts(), (222, 165));
        let en = ds.samples().iter().filter(|s| s.language == Language::En).count();
        assert_eq!(en, 186);
        assert!(ds.structure_warnings().is_empty());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig { seed: 7, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..Default::default() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn every_participant_has_its_language_triple() {
        let ds = generate_synthetic(&SynthConfig { seed: 3, ..Default::default() }).unwrap();
        let mut by_p: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for s in ds.samples() {
            by_p.entry(&s.participant_id).or_default().push(s.picture_id);
            assert!(s.language.pictures().contains(&s.picture_id));
        }
        for pics in by_p.values() {
            let mut p = pics.clone();
            p.sort();
            p.dedup();
            assert_eq!(p.len(), 3);
        }
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            SynthConfig { noise_std: 0.0, ..Default::default() },
            SynthConfig { spurious_subgroup_bias: 1.5, ..Default::default() },
            SynthConfig { en_mci_participants: 70, ..Default::default() },
            SynthConfig { dims: [(Modality::Text, 0)].into_iter().collect(), ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn flipped_twin_differs_only_in_shifted_subgroup() {
        let cfg = SynthConfig { spurious_subgroup_bias: 1.0, seed: 5, ..Default::default() };
        let (a, b) = generate_synthetic_pair(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        let text_same = a.block(Modality::Text) == b.block(Modality::Text);
        assert!(text_same);
        let speech_a = a.block(Modality::Speech).unwrap();
        let speech_b = b.block(Modality::Speech).unwrap();
        for (i, s) in a.samples().iter().enumerate() {
            let same = speech_a.row(i) == speech_b.row(i);
            assert_eq!(same, s.language == Language::En, "sample {i}");
        }
    }

    fn picture_means(ds: &Dataset, m: Modality) -> BTreeMap<u8, Vec<f64>> {
        let block = ds.block(m).unwrap();
        let mut sums: BTreeMap<u8, (Vec<f64>, usize)> = BTreeMap::new();
        for s in ds.samples() {
            let e = sums.entry(s.picture_id).or_insert((vec![0.0; block.dim], 0));
            for (a, &v) in e.0.iter_mut().zip(block.row(s.row_index)) {
                *a += v as f64;
            }
            e.1 += 1;
        }
        sums.into_iter().map(|(p, (v, n))| (p, v.into_iter().map(|x| x / n as f64).collect())).collect()
    }

    /// Two-sided Welch t-test p-value.
    fn welch_p(a: &[f64], b: &[f64]) -> f64 {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let stats = |x: &[f64]| {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (n, mean, var)
        };
        let ((na, ma, va), (nb, mb, vb)) = (stats(a), stats(b));
        let (sa, sb) = (va / na, vb / nb);
        let t = (ma - mb) / (sa + sb).sqrt();
        let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
    }

    #[test]
    fn zero_signal_pictures_are_indistinguishable() {
        for seed in 0..5 {
            let cfg = SynthConfig {
                picture_signal_strength: 0.0,
                label_signal_strength: 0.0,
                noise_std: 1.0,
                seed,
                ..Default::default()
            };
            let ds = generate_synthetic(&cfg).unwrap();
            let block = ds.block(Modality::Text).unwrap();
            // per-sample row mean, grouped by picture 1 vs picture 2
            let row_means = |pic: u8| -> Vec<f64> {
                ds.samples()
                    .iter()
                    .filter(|s| s.picture_id == pic)
                    .map(|s| block.row(s.row_index).iter().map(|&v| v as f64).sum::<f64>() / block.dim as f64)
                    .collect()
            };
            let p = welch_p(&row_means(1), &row_means(2));
            assert!(p > 0.01, "seed {seed}: p = {p}");
        }
    }

    #[test]
    fn picture_strength_spreads_centroids() {
        let mean_distance = |ds: &Dataset| {
            let means: Vec<Vec<f64>> = picture_means(ds, Modality::Speech).into_values().collect();
            let mut total = 0.0;
            let mut pairs = 0;
            for i in 0..means.len() {
                for j in i + 1..means.len() {
                    total += means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    pairs += 1;
                }
            }
            total / pairs as f64
        };
        for seed in 0..5 {
            let d: Vec<f64> = [0.5, 1.0, 2.0]
                .into_iter()
                .map(|strength| {
                    let cfg = SynthConfig { picture_signal_strength: strength, seed, ..Default::default() };
                    mean_distance(&generate_synthetic(&cfg).unwrap())
                })
                .collect();
            assert!(d[0] < d[1] && d[1] < d[2], "seed {seed}: {d:?}");
        }
    }
}
