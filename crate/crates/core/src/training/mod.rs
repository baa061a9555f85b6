//! Experiment configuration, stratified folds, the per-batch pipeline and
//! the cross-validated training loop.

mod folds;
mod pipeline;
mod run;

use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::error::{Error, Result};
use crate::evaluation::Aggregation;
use crate::losses::{SupConVariant, DEFAULT_TEMPERATURE};
use crate::model::AdamOptions;

pub use folds::{stratified_kfold, FoldSplit};
pub use pipeline::{BatchInputs, ClTarget, FusionModel, Smoothness, StepOutput};
pub use run::{ablation_grid, run_experiment, run_experiment_with_eval, train_fold, FoldOutcome, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// One head over the concatenated modality features.
    #[default]
    Concat,
    /// Product of per-modality experts.
    Poe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    #[default]
    Label,
    LabelAndLanguage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k_folds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Weight of the contrastive term in `CE + λ·SupCon`.
    pub lambda: f64,
    /// Contrastive temperature τ.
    pub tau: f64,
    pub fusion: Fusion,
    pub use_cl: bool,
    pub use_image: bool,
    pub modalities: Vec<Modality>,
    pub supcon_variant: SupConVariant,
    /// Adds the concatenation head as one more PoE expert.
    pub include_joint_expert: bool,
    /// Adds the mean per-expert CE to the PoE objective.
    pub aux_modality_ce: bool,
    pub stratify_by: StratifyBy,
    pub group_by_participant: bool,
    pub hidden: usize,
    pub projection_dim: usize,
    pub decoupled_l2: bool,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k_folds: 10,
            lr: 1e-5,
            batch_size: 16,
            epochs: 10,
            l2: 0.01,
            lambda: 1.0,
            tau: DEFAULT_TEMPERATURE,
            fusion: Fusion::Concat,
            use_cl: false,
            use_image: false,
            modalities: vec![Modality::Speech, Modality::Acoustic, Modality::Text, Modality::Image],
            supcon_variant: SupConVariant::StandardSupCon,
            include_joint_expert: false,
            aux_modality_ce: false,
            stratify_by: StratifyBy::Label,
            group_by_participant: false,
            hidden: 256,
            projection_dim: 128,
            decoupled_l2: false,
            aggregation: Aggregation::Mean,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Selected modalities in canonical order, with the image modality
    /// governed by `use_image`.
    pub fn effective_modalities(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| match m {
                Modality::Image => self.use_image,
                other => self.modalities.contains(other),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.k_folds < 2 {
            return bad("k_folds must be >= 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.use_cl && self.batch_size < 2 {
            return bad("batch_size must be >= 2 when use_cl is set");
        }
        if self.effective_modalities().is_empty() {
            return bad("at least one modality must be selected");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || !self.lambda.is_finite() {
            return bad("l2 must be >= 0 and lambda finite");
        }
        if self.hidden == 0 || self.projection_dim == 0 {
            return bad("hidden and projection_dim must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamOptions {
        AdamOptions {
            lr: self.lr,
            l2: self.l2,
            decoupled: self.decoupled_l2,
            ..AdamOptions::default()
        }
    }

    /// Short label such as `poe+cl+ie` used in report names and CSVs.
    pub fn cell_name(&self) -> String {
        let mut s = match self.fusion {
            Fusion::Concat => "concat".to_string(),
            Fusion::Poe => "poe".to_string(),
        };
        if self.use_cl {
            s.push_str("+cl");
        }
        if self.use_image {
            s.push_str("+ie");
        }
        s
    }
}
