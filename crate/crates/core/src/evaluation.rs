//! Confusion counts, challenge metrics (UAR, F1), subgroup breakdowns,
//! picture-cluster separability and run reports.
//!
//! MCI is the positive class: sensitivity is the fraction of MCI samples
//! detected, specificity the fraction of NC samples recognised as NC.
//! A metric whose denominator is zero is undefined and serialises as `"n/a"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{CognitiveLabel, Dataset, Gender, Language, Sample};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A metric value that may be undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub const NA: Metric = Metric(None);

    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::NA
        } else {
            Metric(Some(num as f64 / den as f64))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.6}"),
            None => f.write_str("n/a"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric(Some(v))),
            Raw::Str(s) if s == "n/a" => Ok(Metric::NA),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"n/a\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, truth: CognitiveLabel, predicted: CognitiveLabel) {
        match (truth, predicted) {
            (CognitiveLabel::MCI, CognitiveLabel::MCI) => self.tp += 1,
            (CognitiveLabel::NC, CognitiveLabel::NC) => self.tn += 1,
            (CognitiveLabel::NC, CognitiveLabel::MCI) => self.fp += 1,
            (CognitiveLabel::MCI, CognitiveLabel::NC) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub precision: Metric,
    pub uar: Metric,
    pub f1: Metric,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> MetricSet {
    let sensitivity = Metric::ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = Metric::ratio(cm.tn, cm.tn + cm.fp);
    let precision = Metric::ratio(cm.tp, cm.tp + cm.fp);
    let uar = match (specificity.0, sensitivity.0) {
        (Some(s), Some(r)) => Metric(Some((s + r) / 2.0)),
        _ => Metric::NA,
    };
    let f1 = match (precision.0, sensitivity.0) {
        (Some(p), Some(r)) if p + r > 0.0 => Metric(Some(2.0 * p * r / (p + r))),
        _ => Metric::NA,
    };
    MetricSet {
        sensitivity,
        specificity,
        precision,
        uar,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subgroup {
    Both,
    En,
    Zh,
    M,
    F,
}

impl Subgroup {
    pub const ALL: [Subgroup; 5] = [Subgroup::Both, Subgroup::En, Subgroup::Zh, Subgroup::M, Subgroup::F];

    pub fn contains(self, s: &Sample) -> bool {
        match self {
            Subgroup::Both => true,
            Subgroup::En => s.language == Language::En,
            Subgroup::Zh => s.language == Language::Zh,
            Subgroup::M => s.gender == Gender::M,
            Subgroup::F => s.gender == Gender::F,
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Subgroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Both" | "both" => Ok(Subgroup::Both),
            "En" | "en" => Ok(Subgroup::En),
            "Zh" | "zh" => Ok(Subgroup::Zh),
            "M" | "m" => Ok(Subgroup::M),
            "F" | "f" => Ok(Subgroup::F),
            other => Err(Error::UnknownSubgroup(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Language,
    Gender,
}

impl Axis {
    pub fn pair(self) -> (Subgroup, Subgroup) {
        match self {
            Axis::Language => (Subgroup::En, Subgroup::Zh),
            Axis::Gender => (Subgroup::M, Subgroup::F),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "language" => Ok(Axis::Language),
            "gender" => Ok(Axis::Gender),
            other => Err(Error::UnknownSubgroup(other.to_string())),
        }
    }
}

/// One validation prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub fold: usize,
    pub label: CognitiveLabel,
    pub predicted: CognitiveLabel,
    pub p_mci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupResult {
    pub subgroup: Subgroup,
    pub size: u64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

/// Metrics for each requested subgroup over `predictions`, whose sample ids
/// must all exist in `ds`.
pub fn subgroup_metrics(predictions: &[Prediction], ds: &Dataset, subgroups: &[Subgroup]) -> Result<Vec<SubgroupResult>> {
    let samples: Vec<&Sample> = predictions
        .iter()
        .map(|p| {
            ds.position_of(&p.sample_id)
                .map(|i| &ds.samples()[i])
                .ok_or_else(|| Error::InvalidDataset(format!("prediction for unknown sample {:?}", p.sample_id)))
        })
        .collect::<Result<_>>()?;
    Ok(subgroups
        .iter()
        .map(|&g| {
            let mut cm = ConfusionMatrix::default();
            for (p, s) in predictions.iter().zip(&samples) {
                if g.contains(s) {
                    cm.record(p.label, p.predicted);
                }
            }
            SubgroupResult {
                subgroup: g,
                size: cm.total(),
                confusion: cm,
                metrics: compute_metrics(&cm),
            }
        })
        .collect())
}

/// Subgroup metrics keyed by name, e.g. `"En"`; unknown names are errors.
pub fn subgroup_metrics_by_name(predictions: &[Prediction], ds: &Dataset, names: &[&str]) -> Result<Vec<SubgroupResult>> {
    let groups = names.iter().map(|n| n.parse()).collect::<Result<Vec<Subgroup>>>()?;
    subgroup_metrics(predictions, ds, &groups)
}

/// Mean silhouette coefficient of the rows of `embeddings` clustered by
/// picture, using Euclidean distance.
///
/// Pictures with a single sample are excluded. A sample whose intra- and
/// nearest-other-cluster distances are both zero scores 0.
pub fn picture_separability(embeddings: &Matrix, picture_ids: &[u8]) -> Result<f64> {
    if picture_ids.len() != embeddings.rows() {
        return Err(Error::shape(
            "picture_separability",
            format!("{} ids for {} rows", picture_ids.len(), embeddings.rows()),
        ));
    }
    let mut counts = [0usize; 256];
    for &p in picture_ids {
        counts[p as usize] += 1;
    }
    let kept: Vec<usize> = (0..picture_ids.len())
        .filter(|&i| counts[picture_ids[i] as usize] >= 2)
        .collect();
    let clusters: Vec<u8> = {
        let mut c: Vec<u8> = kept.iter().map(|&i| picture_ids[i]).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if clusters.len() < 2 {
        return Err(Error::InvalidDataset(
            "silhouette needs at least 2 pictures with 2 or more samples each".into(),
        ));
    }
    let dist = |a: usize, b: usize| -> f64 {
        embeddings
            .row(a)
            .iter()
            .zip(embeddings.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for &i in &kept {
        let mut sums = vec![0.0; clusters.len()];
        let mut sizes = vec![0usize; clusters.len()];
        for &j in &kept {
            if j == i {
                continue;
            }
            let c = clusters.binary_search(&picture_ids[j]).unwrap();
            sums[c] += dist(i, j);
            sizes[c] += 1;
        }
        let own = clusters.binary_search(&picture_ids[i]).unwrap();
        let a = sums[own] / sizes[own] as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / kept.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Unweighted mean of per-fold metrics.
    #[default]
    Mean,
    /// Metrics of the confusion counts pooled over folds.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub supcon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub train_size: usize,
    pub validation_ids: Vec<String>,
    pub epoch_losses: Vec<EpochLoss>,
    pub subgroups: Vec<SubgroupResult>,
    /// Silhouette of validation projections clustered by picture.
    pub picture_silhouette: Option<f64>,
}

impl FoldReport {
    pub fn subgroup(&self, g: Subgroup) -> Option<&SubgroupResult> {
        self.subgroups.iter().find(|r| r.subgroup == g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAggregate {
    pub subgroup: Subgroup,
    pub size: u64,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<C> {
    pub name: String,
    pub config: C,
    pub aggregation: Aggregation,
    pub folds: Vec<FoldReport>,
    pub aggregate: Vec<SubgroupAggregate>,
    pub mean_picture_silhouette: Option<f64>,
    pub predictions: Vec<Prediction>,
}

fn mean_metric(values: impl Iterator<Item = Metric>) -> Metric {
    let defined: Vec<f64> = values.filter_map(|m| m.0).collect();
    if defined.is_empty() {
        Metric::NA
    } else {
        Metric(Some(defined.iter().sum::<f64>() / defined.len() as f64))
    }
}

/// Aggregates fold results per subgroup. In `Mean` mode each metric is the
/// mean over folds where it is defined; `n/a` if it is defined in none.
pub fn aggregate_folds(folds: &[FoldReport], mode: Aggregation) -> Vec<SubgroupAggregate> {
    Subgroup::ALL
        .iter()
        .map(|&g| {
            let results: Vec<&SubgroupResult> = folds.iter().filter_map(|f| f.subgroup(g)).collect();
            let size = results.iter().map(|r| r.size).sum();
            let metrics = match mode {
                Aggregation::Pooled => {
                    let mut cm = ConfusionMatrix::default();
                    results.iter().for_each(|r| cm.merge(&r.confusion));
                    compute_metrics(&cm)
                }
                Aggregation::Mean => MetricSet {
                    sensitivity: mean_metric(results.iter().map(|r| r.metrics.sensitivity)),
                    specificity: mean_metric(results.iter().map(|r| r.metrics.specificity)),
                    precision: mean_metric(results.iter().map(|r| r.metrics.precision)),
                    uar: mean_metric(results.iter().map(|r| r.metrics.uar)),
                    f1: mean_metric(results.iter().map(|r| r.metrics.f1)),
                },
            };
            SubgroupAggregate { subgroup: g, size, metrics }
        })
        .collect()
}

impl<C> RunReport<C> {
    pub fn aggregate_for(&self, g: Subgroup) -> Option<&SubgroupAggregate> {
        self.aggregate.iter().find(|a| a.subgroup == g)
    }

    pub fn uar(&self, g: Subgroup) -> Option<f64> {
        self.aggregate_for(g).and_then(|a| a.metrics.uar.0)
    }
}

impl<C: Serialize> RunReport<C> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// `|UAR_a − UAR_b|` for the two subgroups of `axis`.
pub fn disparity<C>(report: &RunReport<C>, axis: Axis) -> Result<f64> {
    let (a, b) = axis.pair();
    let ua = report
        .uar(a)
        .ok_or_else(|| Error::UndefinedMetric(format!("UAR for {a}")))?;
    let ub = report
        .uar(b)
        .ok_or_else(|| Error::UndefinedMetric(format!("UAR for {b}")))?;
    Ok(disparity_of(ua, ub))
}

pub fn disparity_of(uar_a: f64, uar_b: f64) -> f64 {
    (uar_a - uar_b).abs()
}

pub const CSV_HEADER: &str = "config,subgroup,size,uar,f1,sensitivity,specificity,precision";

/// Flat CSV rows (without header), one per subgroup.
pub fn csv_rows<C>(report: &RunReport<C>) -> Vec<String> {
    report
        .aggregate
        .iter()
        .map(|a| {
            format!(
                "{},{},{},{},{},{},{},{}",
                report.name,
                a.subgroup,
                a.size,
                a.metrics.uar,
                a.metrics.f1,
                a.metrics.sensitivity,
                a.metrics.specificity,
                a.metrics.precision
            )
        })
        .collect()
}

pub fn to_csv<C>(report: &RunReport<C>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in csv_rows(report) {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Gnuplot-friendly per-fold UAR table: `fold` then one column per subgroup.
pub fn fold_uar_tsv<C>(report: &RunReport<C>) -> String {
    let mut out = String::from("# fold");
    for g in Subgroup::ALL {
        out.push('\t');
        out.push_str(&g.to_string());
    }
    out.push('\n');
    for f in &report.folds {
        out.push_str(&f.fold_index.to_string());
        for g in Subgroup::ALL {
            out.push('\t');
            match f.subgroup(g).and_then(|r| r.metrics.uar.0) {
                Some(v) => out.push_str(&format!("{v:.6}")),
                None => out.push_str("NaN"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, Language, Sample};
    use std::collections::BTreeMap;

    #[test]
    fn metrics_fixture() {
        let m = compute_metrics(&ConfusionMatrix { tp: 3, fn_: 1, tn: 2, fp: 2 });
        assert_eq!(m.sensitivity.0, Some(0.75));
        assert_eq!(m.specificity.0, Some(0.5));
        assert!((m.precision.0.unwrap() - 0.6).abs() < 1e-15);
        assert!((m.uar.0.unwrap() - 0.625).abs() < 1e-15);
        assert!((m.f1.0.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_classifier() {
        let m = compute_metrics(&ConfusionMatrix { tp: 4, tn: 9, fp: 0, fn_: 0 });
        assert_eq!((m.uar.0, m.f1.0), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn zero_denominators_are_na() {
        let m = compute_metrics(&ConfusionMatrix { tp: 0, tn: 5, fp: 0, fn_: 0 });
        assert_eq!(m.specificity.0, Some(1.0));
        assert_eq!(m.sensitivity, Metric::NA);
        assert_eq!(m.precision, Metric::NA);
        assert_eq!(m.f1, Metric::NA);
        assert_eq!(m.uar, Metric::NA);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"n/a\""));
        assert!(!json.contains("NaN"));
        assert_eq!(serde_json::from_str::<MetricSet>(&json).unwrap(), m);
    }

    /// Exact rational check: every metric equals the hand formula evaluated
    /// on integers.
    #[test]
    fn exhaustive_small_matrices_agree_with_hand_formulas() {
        let mut checked = 0;
        for tp in 0..4u64 {
            for tn in 0..4u64 {
                for fp in 0..3u64 {
                    for fn_ in 0..3u64 {
                        let m = compute_metrics(&ConfusionMatrix { tp, tn, fp, fn_ });
                        if tp + fn_ > 0 && tn + fp > 0 {
                            // uar = (tp(tn+fp) + tn(tp+fn)) / (2 (tp+fn)(tn+fp))
                            let num = tp * (tn + fp) + tn * (tp + fn_);
                            let den = 2 * (tp + fn_) * (tn + fp);
                            assert!((m.uar.0.unwrap() - num as f64 / den as f64).abs() < 1e-15);
                        }
                        if tp > 0 {
                            // f1 = 2tp / (2tp + fp + fn)
                            let f1 = m.f1.0.unwrap();
                            assert!((f1 - (2 * tp) as f64 / (2 * tp + fp + fn_) as f64).abs() < 1e-15);
                            checked += 1;
                        }
                    }
                }
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn uar_invariant_to_duplicating_negatives() {
        let base = ConfusionMatrix { tp: 7, tn: 5, fp: 3, fn_: 2 };
        let dup = ConfusionMatrix { tn: 10, fp: 6, ..base };
        assert_eq!(compute_metrics(&base).uar, compute_metrics(&dup).uar);
    }

    fn fixture_dataset() -> (Dataset, Vec<Prediction>) {
        // 4 En (2 MCI, 2 NC), 4 Zh (2 MCI, 2 NC)
        let spec = [
            (Language::En, Gender::M, CognitiveLabel::MCI, CognitiveLabel::MCI),
            (Language::En, Gender::F, CognitiveLabel::MCI, CognitiveLabel::NC),
            (Language::En, Gender::M, CognitiveLabel::NC, CognitiveLabel::NC),
            (Language::En, Gender::F, CognitiveLabel::NC, CognitiveLabel::MCI),
            (Language::Zh, Gender::M, CognitiveLabel::MCI, CognitiveLabel::MCI),
            (Language::Zh, Gender::F, CognitiveLabel::MCI, CognitiveLabel::MCI),
            (Language::Zh, Gender::M, CognitiveLabel::NC, CognitiveLabel::NC),
            (Language::Zh, Gender::F, CognitiveLabel::NC, CognitiveLabel::MCI),
        ];
        let samples = spec
            .iter()
            .enumerate()
            .map(|(i, &(language, gender, label, _))| Sample {
                sample_id: format!("s{i}"),
                participant_id: format!("p{i}"),
                picture_id: if language == Language::En { 1 } else { 4 },
                language,
                gender,
                label,
                row_index: i,
            })
            .collect();
        let preds = spec
            .iter()
            .enumerate()
            .map(|(i, &(_, _, label, predicted))| Prediction {
                sample_id: format!("s{i}"),
                fold: 0,
                label,
                predicted,
                p_mci: 0.5,
            })
            .collect();
        (Dataset::new(samples, BTreeMap::new()).unwrap(), preds)
    }

    #[test]
    fn subgroup_fixture_by_hand() {
        let (ds, preds) = fixture_dataset();
        let r = subgroup_metrics(&preds, &ds, &Subgroup::ALL).unwrap();
        let get = |g: Subgroup| r.iter().find(|x| x.subgroup == g).unwrap();
        // En: tp=1 fn=1 tn=1 fp=1
        assert_eq!(get(Subgroup::En).confusion, ConfusionMatrix { tp: 1, fn_: 1, tn: 1, fp: 1 });
        assert_eq!(get(Subgroup::En).metrics.uar.0, Some(0.5));
        // Zh: tp=2 fn=0 tn=1 fp=1 → ρ=1, σ=0.5, π=2/3, f1=0.8
        let zh = get(Subgroup::Zh).metrics;
        assert_eq!(zh.uar.0, Some(0.75));
        assert!((zh.f1.0.unwrap() - 0.8).abs() < 1e-15);
        // M: all correct
        assert_eq!(get(Subgroup::M).metrics.uar.0, Some(1.0));
        // additivity
        let mut sum = get(Subgroup::En).confusion;
        sum.merge(&get(Subgroup::Zh).confusion);
        assert_eq!(sum, get(Subgroup::Both).confusion);
        let mut sum = get(Subgroup::M).confusion;
        sum.merge(&get(Subgroup::F).confusion);
        assert_eq!(sum, get(Subgroup::Both).confusion);
    }

    #[test]
    fn empty_subgroup_is_all_na() {
        let (ds, preds) = fixture_dataset();
        let en_only: Vec<Prediction> = preds[..4].to_vec();
        let r = subgroup_metrics(&en_only, &ds, &[Subgroup::Zh]).unwrap();
        assert_eq!(r[0].size, 0);
        assert_eq!(r[0].metrics, MetricSet::default());
    }

    #[test]
    fn unknown_subgroup_name() {
        let (ds, preds) = fixture_dataset();
        assert!(matches!(
            subgroup_metrics_by_name(&preds, &ds, &["En", "Fr"]),
            Err(Error::UnknownSubgroup(_))
        ));
    }

    /// Written from the textbook definition with explicit loops over
    /// clusters, independent of the accumulator layout above.
    fn brute_silhouette(points: &[[f64; 2]], labels: &[u8]) -> f64 {
        let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut uniq: Vec<u8> = labels.to_vec();
        uniq.sort();
        uniq.dedup();
        let mut s = 0.0;
        for i in 0..points.len() {
            let mean_to = |c: u8| {
                let members: Vec<usize> = (0..points.len()).filter(|&j| j != i && labels[j] == c).collect();
                members.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / members.len() as f64
            };
            let a = mean_to(labels[i]);
            let b = uniq.iter().filter(|&&c| c != labels[i]).map(|&c| mean_to(c)).fold(f64::INFINITY, f64::min);
            s += (b - a) / a.max(b);
        }
        s / points.len() as f64
    }

    #[test]
    fn silhouette_fixture_matches_brute_force() {
        let pts = [[0.0, 0.0], [1.0, 0.5], [0.3, 1.2], [4.0, 4.0], [5.0, 3.5], [2.0, 2.5]];
        let labels = [1u8, 1, 1, 2, 2, 2];
        let m = Matrix::from_rows(&pts);
        let got = picture_separability(&m, &labels).unwrap();
        let want = brute_silhouette(&pts, &labels);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn silhouette_extremes() {
        let tight = Matrix::from_rows(&[[0.0, 0.0], [0.01, 0.0], [10.0, 10.0], [10.0, 10.01]]);
        assert!(picture_separability(&tight, &[1, 1, 2, 2]).unwrap() > 0.9);
        let same = Matrix::from_rows(&[[1.0, 1.0]; 4]);
        assert_eq!(picture_separability(&same, &[1, 1, 2, 2]).unwrap(), 0.0);
        // a singleton picture is dropped
        let with_single = Matrix::from_rows(&[[0.0, 0.0], [0.01, 0.0], [10.0, 10.0], [10.0, 10.01], [50.0, 50.0]]);
        let s = picture_separability(&with_single, &[1, 1, 2, 2, 3]).unwrap();
        assert!(s > 0.9);
        assert!(picture_separability(&tight, &[1, 1, 1, 1]).is_err());
    }

    fn report_with(uars: [(Subgroup, f64); 4]) -> RunReport<()> {
        RunReport {
            name: "t".into(),
            config: (),
            aggregation: Aggregation::Mean,
            folds: vec![],
            aggregate: uars
                .iter()
                .map(|&(g, u)| SubgroupAggregate {
                    subgroup: g,
                    size: 1,
                    metrics: MetricSet { uar: Metric(Some(u)), ..Default::default() },
                })
                .collect(),
            mean_picture_silhouette: None,
            predictions: vec![],
        }
    }

    #[test]
    fn disparity_examples() {
        let r = report_with([(Subgroup::En, 0.58), (Subgroup::Zh, 0.834), (Subgroup::M, 0.785), (Subgroup::F, 0.732)]);
        assert!((disparity(&r, Axis::Language).unwrap() - 0.254).abs() < 1e-12);
        assert!((disparity(&r, Axis::Gender).unwrap() - 0.053).abs() < 1e-12);
        let eq = report_with([(Subgroup::En, 0.7), (Subgroup::Zh, 0.7), (Subgroup::M, 0.7), (Subgroup::F, 0.7)]);
        assert_eq!(disparity(&eq, Axis::Language).unwrap(), 0.0);
        let mut missing = eq.clone();
        missing.aggregate[1].metrics.uar = Metric::NA;
        assert!(matches!(disparity(&missing, Axis::Language), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aggregation_modes() {
        let fold = |tp, tn, fp, fn_| FoldReport {
            fold_index: 0,
            train_size: 0,
            validation_ids: vec![],
            epoch_losses: vec![],
            subgroups: vec![SubgroupResult {
                subgroup: Subgroup::Both,
                size: tp + tn + fp + fn_,
                confusion: ConfusionMatrix { tp, tn, fp, fn_ },
                metrics: compute_metrics(&ConfusionMatrix { tp, tn, fp, fn_ }),
            }],
            picture_silhouette: None,
        };
        let folds = [fold(1, 1, 0, 0), fold(1, 0, 1, 2)];
        let mean = aggregate_folds(&folds, Aggregation::Mean);
        // fold uars 1.0 and (1/3 + 0)/2
        assert!((mean[0].metrics.uar.0.unwrap() - (1.0 + 1.0 / 6.0) / 2.0).abs() < 1e-15);
        let pooled = aggregate_folds(&folds, Aggregation::Pooled);
        // tp=2 fn=2 tn=1 fp=1
        assert_eq!(pooled[0].metrics.uar.0, Some(0.5));
        assert_eq!(mean[1].metrics.uar, Metric::NA);
    }

    #[test]
    fn report_json_round_trip() {
        let r = report_with([(Subgroup::En, 0.1 + 0.2), (Subgroup::Zh, 1.0 / 3.0), (Subgroup::M, 0.0), (Subgroup::F, 1e-300)]);
        let json = r.to_json().unwrap();
        let back: RunReport<()> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(fold_uar_tsv(&r).starts_with("# fold\tBoth"));
        assert!(to_csv(&r).lines().nth(1).unwrap().starts_with("t,En,1,0.300000"));
    }
}
