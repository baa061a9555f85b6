use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngCore;

use super::{stratified_kfold, BatchInputs, ExperimentConfig, FoldSplit, Fusion, FusionModel};
use crate::dataset::{CognitiveLabel, Dataset, Modality};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_folds, picture_separability, subgroup_metrics, EpochLoss, FoldReport, Prediction, RunReport, Subgroup,
};
use crate::model::{adam_step, save_checkpoint, AdamState};
use crate::numerics::{rng, Matrix};

pub type Report = RunReport<ExperimentConfig>;

const STREAM_INIT: u64 = 100;
const STREAM_SHUFFLE: u64 = 200;

/// A trained fold: its report, validation predictions, the final model and
/// optimizer state.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub predictions: Vec<Prediction>,
    pub model: FusionModel,
    pub adam: AdamState,
}

impl FoldOutcome {
    /// Writes every parameter and the Adam moments of the trained ones.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let names = self.model.param_names();
        let tensors: Vec<(String, &Matrix)> = names.into_iter().zip(self.model.params()).collect();
        save_checkpoint(dir, &tensors, Some(&self.adam))
    }
}

fn dims_of(ds: &Dataset) -> BTreeMap<Modality, usize> {
    ds.modalities().into_iter().filter_map(|m| Some((m, ds.dim(m)?))).collect()
}

/// The evaluation set must hold the same samples, in the same order, as
/// the training set; only the features may differ.
fn check_aligned(train: &Dataset, eval: &Dataset) -> Result<()> {
    let same = train.len() == eval.len()
        && train
            .samples()
            .iter()
            .zip(eval.samples())
            .all(|(a, b)| a.sample_id == b.sample_id && a.label == b.label && a.picture_id == b.picture_id);
    if same {
        Ok(())
    } else {
        Err(Error::InvalidDataset("evaluation dataset does not list the training samples in the same order".into()))
    }
}

/// Trains one fold on `train_ds` and scores its validation positions on
/// `eval_ds`.
pub fn train_fold(train_ds: &Dataset, eval_ds: &Dataset, split: &FoldSplit, cfg: &ExperimentConfig) -> Result<FoldOutcome> {
    cfg.validate()?;
    check_aligned(train_ds, eval_ds)?;
    let fold = split.fold_index;
    let init_seed = rng(cfg.seed, STREAM_INIT + fold as u64).next_u64();
    let mut model = FusionModel::new(cfg, &dims_of(train_ds), init_seed)?;
    let modalities = model.modalities().to_vec();
    let train = BatchInputs::from_dataset(train_ds, &split.train, &modalities)?;

    let trainable = model.trainable_count();
    let names: Vec<String> = model.param_names().into_iter().take(trainable).collect();
    let mut adam = AdamState::new(model.params().into_iter().take(trainable));
    let opts = cfg.adam();
    let mut shuffle = rng(cfg.seed, STREAM_SHUFFLE + fold as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut ce, mut supcon, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let step = model.loss_and_grads(&train.select(rows))?;
            if !step.total.is_finite() {
                return Err(Error::NonFiniteLoss { fold, epoch, batch: b, ce: step.ce, supcon: step.supcon });
            }
            let grads: Vec<_> = step.grads.iter().take(trainable).collect();
            let mut params: Vec<_> = model.params_mut().into_iter().take(trainable).collect();
            adam_step(&mut params, &grads, &names, &mut adam, &opts)?;
            total += step.total;
            ce += step.ce;
            supcon += step.supcon;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        epoch_losses.push(EpochLoss { epoch, total: total / n, ce: ce / n, supcon: supcon / n });
        log::debug!("fold {fold} epoch {epoch}: loss {:.6}", total / n);
    }

    let val = BatchInputs::from_dataset(eval_ds, &split.validation, &modalities)?;
    let log_probs = model.predict_log_probs(&val)?;
    let predictions: Vec<Prediction> = split
        .validation
        .iter()
        .enumerate()
        .map(|(r, &pos)| {
            let s = &eval_ds.samples()[pos];
            let p_mci = log_probs.get(r, CognitiveLabel::MCI.index()).exp();
            let predicted = if log_probs.get(r, 1) > log_probs.get(r, 0) { CognitiveLabel::MCI } else { CognitiveLabel::NC };
            Prediction { sample_id: s.sample_id.clone(), fold, label: s.label, predicted, p_mci }
        })
        .collect();
    let picture_silhouette = model
        .embed(&val)
        .and_then(|emb| picture_separability(&emb, &val.picture_ids))
        .ok();

    let report = FoldReport {
        fold_index: fold,
        train_size: split.train.len(),
        validation_ids: split.validation_ids(eval_ds),
        epoch_losses,
        subgroups: subgroup_metrics(&predictions, eval_ds, &Subgroup::ALL)?,
        picture_silhouette,
    };
    Ok(FoldOutcome { report, predictions, model, adam })
}

/// Cross-validated run on a single dataset.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Report> {
    Ok(run_experiment_with_eval(ds, ds, cfg, 0)?.0)
}

/// Cross-validated run that trains on `train_ds` and validates on the
/// matching rows of `eval_ds`. Folds run on up to `jobs` threads (0 = one
/// per fold); results do not depend on the thread count.
pub fn run_experiment_with_eval(
    train_ds: &Dataset,
    eval_ds: &Dataset,
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<(Report, Vec<FoldOutcome>)> {
    cfg.validate()?;
    check_aligned(train_ds, eval_ds)?;
    let splits = stratified_kfold(train_ds, cfg)?;
    let outcomes = run_folds(train_ds, eval_ds, &splits, cfg, jobs)?;

    let folds: Vec<FoldReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let silhouettes: Vec<f64> = folds.iter().filter_map(|f| f.picture_silhouette).collect();
    let mut predictions: Vec<Prediction> = outcomes.iter().flat_map(|o| o.predictions.iter().cloned()).collect();
    predictions.sort_by_key(|p| eval_ds.position_of(&p.sample_id));
    let report = RunReport {
        name: cfg.cell_name(),
        config: cfg.clone(),
        aggregation: cfg.aggregation,
        aggregate: aggregate_folds(&folds, cfg.aggregation),
        mean_picture_silhouette: (!silhouettes.is_empty())
            .then(|| silhouettes.iter().sum::<f64>() / silhouettes.len() as f64),
        folds,
        predictions,
    };
    Ok((report, outcomes))
}

#[cfg(feature = "parallel")]
fn run_folds(
    train_ds: &Dataset,
    eval_ds: &Dataset,
    splits: &[FoldSplit],
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<FoldOutcome>> {
    use rayon::prelude::*;
    let threads = if jobs == 0 { splits.len() } else { jobs };
    if threads <= 1 {
        return splits.iter().map(|s| train_fold(train_ds, eval_ds, s, cfg)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| splits.par_iter().map(|s| train_fold(train_ds, eval_ds, s, cfg)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_folds(
    train_ds: &Dataset,
    eval_ds: &Dataset,
    splits: &[FoldSplit],
    cfg: &ExperimentConfig,
    _jobs: usize,
) -> Result<Vec<FoldOutcome>> {
    splits.iter().map(|s| train_fold(train_ds, eval_ds, s, cfg)).collect()
}

/// The eight fusion × contrastive × image cells, baseline first.
pub fn ablation_grid(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(8);
    for fusion in [Fusion::Concat, Fusion::Poe] {
        for use_cl in [false, true] {
            for use_image in [false, true] {
                out.push(ExperimentConfig { fusion, use_cl, use_image, ..base.clone() });
            }
        }
    }
    out
}
