use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Fusion};
use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, poe_backward, poe_fuse, supcon_loss_raw, total_loss, FusedLogits, SupConVariant};
use crate::model::{FfnCache, FfnHead, ProjectionCache, ProjectionHead};
use crate::numerics::{log_softmax, Matrix};

const CLASSES: usize = 2;
const JOINT_STREAM: u64 = 90;
const PROJECTION_STREAM_OFFSET: u64 = 500;

fn expert_stream(m: Modality) -> u64 {
    10 + Modality::ALL.iter().position(|&x| x == m).unwrap() as u64
}

/// Features, class indices and picture ids for one batch, one matrix per
/// selected modality.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub features: BTreeMap<Modality, Matrix>,
    pub labels: Vec<usize>,
    pub picture_ids: Vec<u8>,
}

impl BatchInputs {
    pub fn from_dataset(ds: &Dataset, positions: &[usize], modalities: &[Modality]) -> Result<Self> {
        let features = modalities
            .iter()
            .map(|&m| Ok((m, ds.features(m, positions)?)))
            .collect::<Result<_>>()?;
        let samples = ds.samples();
        Ok(BatchInputs {
            features,
            labels: positions.iter().map(|&i| samples[i].label.index()).collect(),
            picture_ids: positions.iter().map(|&i| samples[i].picture_id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> BatchInputs {
        BatchInputs {
            features: self.features.iter().map(|(&m, x)| (m, x.select_rows(rows))).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            picture_ids: rows.iter().map(|&r| self.picture_ids[r]).collect(),
        }
    }
}

/// Hidden layer whose activations feed a projection head for the
/// contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClTarget {
    Joint,
    Expert(Modality),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    /// Smallest |pre-activation| over every ReLU.
    pub relu_margin: f64,
    /// Smallest projection norm before normalization.
    pub min_projection_norm: f64,
}

/// Loss values and gradients for every parameter, in `param_names` order.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub ce: f64,
    pub supcon: f64,
    pub total: f64,
    pub grads: Vec<Matrix>,
}

#[derive(Debug, Clone)]
struct LossSettings {
    use_cl: bool,
    lambda: f64,
    tau: f64,
    variant: SupConVariant,
    aux_ce: bool,
}

/// Per-modality experts (PoE) and/or a head over concatenated features,
/// plus one projection head per contrastive target.
#[derive(Debug, Clone)]
pub struct FusionModel {
    fusion: Fusion,
    modalities: Vec<Modality>,
    experts: Vec<FfnHead>,
    joint: Option<FfnHead>,
    projections: Vec<(ClTarget, ProjectionHead)>,
    loss: LossSettings,
}

struct Forward {
    experts: Vec<(Matrix, FfnCache)>,
    joint: Option<(Matrix, FfnCache)>,
    fused: Option<FusedLogits>,
}

impl Forward {
    fn final_logits(&self) -> &Matrix {
        match &self.fused {
            Some(f) => &f.summed,
            None => &self.joint.as_ref().expect("concat model has a joint head").0,
        }
    }

    fn hidden_of(&self, model: &FusionModel, t: ClTarget) -> &Matrix {
        match t {
            ClTarget::Joint => &self.joint.as_ref().unwrap().1.hidden,
            ClTarget::Expert(m) => {
                let i = model.modalities.iter().position(|&x| x == m).unwrap();
                &self.experts[i].1.hidden
            }
        }
    }
}

impl FusionModel {
    /// Builds the heads for `cfg` over the feature widths in `dims`. With a
    /// single modality the concatenation head and that modality's expert get
    /// identical initial weights, so both fusion modes coincide.
    pub fn new(cfg: &ExperimentConfig, dims: &BTreeMap<Modality, usize>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let modalities = cfg.effective_modalities();
        let dim_of = |m: Modality| {
            dims.get(&m)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("dataset has no {m} embeddings")))
        };
        let joint_stream = if modalities.len() == 1 { expert_stream(modalities[0]) } else { JOINT_STREAM };
        let total_dim = modalities.iter().map(|&m| dim_of(m)).sum::<Result<usize>>()?;
        let joint_head = || FfnHead::new("joint", total_dim, cfg.hidden, CLASSES, seed, joint_stream);

        let (experts, joint) = match cfg.fusion {
            Fusion::Concat => (Vec::new(), Some(joint_head())),
            Fusion::Poe => {
                let experts = modalities
                    .iter()
                    .map(|&m| Ok(FfnHead::new(m.name(), dim_of(m)?, cfg.hidden, CLASSES, seed, expert_stream(m))))
                    .collect::<Result<Vec<_>>>()?;
                (experts, cfg.include_joint_expert.then(joint_head))
            }
        };

        let targets: Vec<ClTarget> = if joint.is_some() {
            vec![ClTarget::Joint]
        } else {
            let non_acoustic: Vec<_> = modalities
                .iter()
                .filter(|&&m| m != Modality::Acoustic)
                .map(|&m| ClTarget::Expert(m))
                .collect();
            if non_acoustic.is_empty() {
                modalities.iter().map(|&m| ClTarget::Expert(m)).collect()
            } else {
                non_acoustic
            }
        };
        let projections = targets
            .into_iter()
            .map(|t| {
                let (name, stream) = match t {
                    ClTarget::Joint => ("proj.joint".to_string(), joint_stream),
                    ClTarget::Expert(m) => (format!("proj.{}", m.name()), expert_stream(m)),
                };
                let head = ProjectionHead::new(name, cfg.hidden, cfg.projection_dim, seed, stream + PROJECTION_STREAM_OFFSET);
                (t, head)
            })
            .collect();

        Ok(FusionModel {
            fusion: cfg.fusion,
            modalities,
            experts,
            joint,
            projections,
            loss: LossSettings {
                use_cl: cfg.use_cl,
                lambda: cfg.lambda,
                tau: cfg.tau,
                variant: cfg.supcon_variant,
                aux_ce: cfg.aux_modality_ce,
            },
        })
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn cl_targets(&self) -> Vec<ClTarget> {
        self.projections.iter().map(|(t, _)| *t).collect()
    }

    fn concat_input(&self, batch: &BatchInputs) -> Result<Matrix> {
        let parts = self
            .modalities
            .iter()
            .map(|m| batch.features.get(m).ok_or_else(|| Error::shape("FusionModel", format!("batch lacks {m}"))))
            .collect::<Result<Vec<_>>>()?;
        Matrix::hstack(&parts)
    }

    fn forward(&self, batch: &BatchInputs) -> Result<Forward> {
        let joint = match &self.joint {
            Some(head) => Some(head.forward(&self.concat_input(batch)?)?),
            None => None,
        };
        let experts = self
            .experts
            .iter()
            .zip(&self.modalities)
            .map(|(head, m)| {
                let x = batch.features.get(m).ok_or_else(|| Error::shape("FusionModel", format!("batch lacks {m}")))?;
                head.forward(x)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused = match self.fusion {
            Fusion::Concat => None,
            Fusion::Poe => {
                let mut logits: Vec<&Matrix> = experts.iter().map(|(z, _)| z).collect();
                if let Some((z, _)) = &joint {
                    logits.push(z);
                }
                Some(poe_fuse(&logits)?)
            }
        };
        Ok(Forward { experts, joint, fused })
    }

    /// Class log-probabilities, one row per sample.
    pub fn predict_log_probs(&self, batch: &BatchInputs) -> Result<Matrix> {
        let f = self.forward(batch)?;
        Ok(match f.fused {
            Some(fused) => fused.fused,
            None => log_softmax(f.final_logits()),
        })
    }

    /// Unit-norm projections of the first contrastive target.
    pub fn embed(&self, batch: &BatchInputs) -> Result<Matrix> {
        let f = self.forward(batch)?;
        let (t, head) = &self.projections[0];
        Ok(head.forward(f.hidden_of(self, *t))?.0)
    }

    /// Forward and backward pass for `CE + λ·SupCon` on one batch.
    pub fn loss_and_grads(&self, batch: &BatchInputs) -> Result<StepOutput> {
        if batch.is_empty() {
            return Err(Error::shape("loss_and_grads", "empty batch"));
        }
        let f = self.forward(batch)?;
        let (mut ce, d_final) = cross_entropy(f.final_logits(), &batch.labels)?;

        let mut d_expert_logits: Vec<Matrix> = Vec::new();
        let mut d_joint_logits: Option<Matrix> = None;
        match &f.fused {
            None => d_joint_logits = Some(d_final),
            Some(fused) => {
                d_expert_logits = poe_backward(fused, &d_final)?;
                if f.joint.is_some() {
                    d_joint_logits = d_expert_logits.pop();
                }
                if self.loss.aux_ce {
                    let n_experts = (f.experts.len() + usize::from(f.joint.is_some())) as f64;
                    let mut aux = 0.0;
                    let mut add_aux = |z: &Matrix, d: &mut Matrix| -> Result<()> {
                        let (l, mut g) = cross_entropy(z, &batch.labels)?;
                        aux += l / n_experts;
                        g.scale(1.0 / n_experts);
                        d.add_assign(&g)
                    };
                    for ((z, _), d) in f.experts.iter().zip(d_expert_logits.iter_mut()) {
                        add_aux(z, d)?;
                    }
                    if let (Some((z, _)), Some(d)) = (&f.joint, d_joint_logits.as_mut()) {
                        add_aux(z, d)?;
                    }
                    ce += aux;
                }
            }
        }

        let mut supcon = 0.0;
        let mut d_hidden: BTreeMap<ClTarget, Matrix> = BTreeMap::new();
        let mut projection_grads: Vec<[Matrix; 2]> = Vec::with_capacity(self.projections.len());
        let active_cl = self.loss.use_cl && self.loss.lambda != 0.0;
        let n_targets = self.projections.len() as f64;
        for (t, head) in &self.projections {
            if !active_cl {
                projection_grads.push([
                    Matrix::zeros(head.linear.weight.rows(), head.linear.weight.cols()),
                    Matrix::zeros(1, head.linear.bias.cols()),
                ]);
                continue;
            }
            let (proj, cache): (Matrix, ProjectionCache) = head.forward(f.hidden_of(self, *t))?;
            let (l, mut d_proj) = supcon_loss_raw(&proj, &batch.picture_ids, self.loss.tau, self.loss.variant)?;
            supcon += l / n_targets;
            d_proj.scale(self.loss.lambda / n_targets);
            let g = head.backward(&cache, &d_proj)?;
            d_hidden.insert(*t, g.input);
            projection_grads.push([g.weight, g.bias]);
        }

        let mut grads = Vec::with_capacity(self.param_count());
        for (i, ((head, (_, cache)), d)) in self.experts.iter().zip(&f.experts).zip(&d_expert_logits).enumerate() {
            let g = head.backward(cache, d, d_hidden.get(&ClTarget::Expert(self.modalities[i])))?;
            grads.extend([g.w1, g.b1, g.w2, g.b2]);
        }
        if let (Some(head), Some((_, cache)), Some(d)) = (&self.joint, &f.joint, &d_joint_logits) {
            let g = head.backward(cache, d, d_hidden.get(&ClTarget::Joint))?;
            grads.extend([g.w1, g.b1, g.w2, g.b2]);
        }
        for pg in projection_grads {
            grads.extend(pg);
        }

        Ok(StepOutput {
            ce,
            supcon,
            total: total_loss(ce, supcon, if active_cl { self.loss.lambda } else { 0.0 }),
            grads,
        })
    }

    /// How far this batch sits from the objective's non-smooth and
    /// ill-conditioned points. Finite-difference checks are only meaningful
    /// when both margins are well above the probe step.
    pub fn smoothness(&self, batch: &BatchInputs) -> Result<Smoothness> {
        let f = self.forward(batch)?;
        let mut relu_margin = f64::INFINITY;
        for (_, cache) in f.experts.iter().chain(&f.joint) {
            relu_margin = cache.pre_activation.data().iter().fold(relu_margin, |m, v| m.min(v.abs()));
        }
        let mut min_projection_norm = f64::INFINITY;
        for (t, head) in &self.projections {
            let z = head.linear.forward(f.hidden_of(self, *t))?;
            for r in 0..z.rows() {
                min_projection_norm = min_projection_norm.min(z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        Ok(Smoothness { relu_margin, min_projection_norm })
    }

    /// Parameters in a stable order: experts, joint head, projections.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::new();
        for h in self.experts.iter().chain(&self.joint) {
            out.extend(h.params());
        }
        for (_, p) in &self.projections {
            out.extend(p.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for h in self.experts.iter_mut().chain(self.joint.as_mut()) {
            out.extend(h.params_mut());
        }
        for (_, p) in &mut self.projections {
            out.extend(p.params_mut());
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for h in self.experts.iter().chain(&self.joint) {
            out.extend(h.param_names());
        }
        for (_, p) in &self.projections {
            out.extend(p.param_names());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        4 * (self.experts.len() + usize::from(self.joint.is_some())) + 2 * self.projections.len()
    }

    /// Number of leading parameters the optimizer updates. Projection heads
    /// are frozen when the contrastive term is off, so weight decay leaves
    /// them untouched.
    pub fn trainable_count(&self) -> usize {
        if self.loss.use_cl {
            self.param_count()
        } else {
            self.param_count() - 2 * self.projections.len()
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params().iter().map(|p| p.data().len()).sum();
        if flat.len() != total {
            return Err(Error::shape("set_flat_params", format!("{} values for {total} parameters", flat.len())));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.data().len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};
    use crate::numerics::grad_check;

    fn small_dims(ds: &Dataset) -> BTreeMap<Modality, usize> {
        ds.modalities().into_iter().map(|m| (m, ds.dim(m).unwrap())).collect()
    }

    fn tiny_dataset() -> Dataset {
        let mut dims = BTreeMap::new();
        for m in Modality::ALL {
            dims.insert(m, 3);
        }
        generate_synthetic(&SynthConfig { dims, n_participants: 20, en_participants: 10, mci_participants: 10, en_mci_participants: 5, mci_male_participants: 5, nc_male_participants: 5, ..Default::default() }).unwrap()
    }

    fn check(cfg: ExperimentConfig, seed: u64) -> f64 {
        let ds = tiny_dataset();
        let model = FusionModel::new(&cfg, &small_dims(&ds), seed).unwrap();
        let positions: Vec<usize> = (0..8).collect();
        let batch = BatchInputs::from_dataset(&ds, &positions, &cfg.effective_modalities()).unwrap();
        let step = model.loss_and_grads(&batch).unwrap();
        let analytic: Vec<f64> = step.grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let mut probe = model.clone();
        grad_check(
            |x| {
                probe.set_flat_params(x).unwrap();
                probe.loss_and_grads(&batch).unwrap().total
            },
            &model.flat_params(),
            &analytic,
            1e-6,
        )
        .unwrap()
    }

    fn small(fusion: Fusion, use_cl: bool) -> ExperimentConfig {
        ExperimentConfig { fusion, use_cl, hidden: 5, projection_dim: 3, tau: 0.5, ..Default::default() }
    }

    #[test]
    fn concat_gradients() {
        for cl in [false, true] {
            let err = check(small(Fusion::Concat, cl), 3);
            assert!(err < 1e-5, "cl={cl}: {err}");
        }
    }

    #[test]
    fn poe_gradients_with_joint_and_aux() {
        let mut cfg = small(Fusion::Poe, true);
        let err = check(cfg.clone(), 4);
        assert!(err < 1e-5, "{err}");
        cfg.include_joint_expert = true;
        cfg.aux_modality_ce = true;
        cfg.use_image = true;
        cfg.supcon_variant = SupConVariant::PaperLiteral;
        let err = check(cfg, 5);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn parameter_layout() {
        let ds = tiny_dataset();
        let cfg = ExperimentConfig { fusion: Fusion::Poe, hidden: 4, projection_dim: 2, ..Default::default() };
        let m = FusionModel::new(&cfg, &small_dims(&ds), 0).unwrap();
        // speech, acoustic, text experts; projections on speech and text
        assert_eq!(m.param_count(), 3 * 4 + 2 * 2);
        assert_eq!(m.trainable_count(), 12);
        assert_eq!(m.cl_targets(), vec![ClTarget::Expert(Modality::Speech), ClTarget::Expert(Modality::Text)]);
        assert_eq!(m.param_names()[0], "speech.w1");
        assert_eq!(m.param_names().len(), m.params().len());
    }

    #[test]
    fn single_modality_fusions_agree() {
        let ds = tiny_dataset();
        let base = ExperimentConfig { modalities: vec![Modality::Text], hidden: 6, ..Default::default() };
        let concat = FusionModel::new(&base, &small_dims(&ds), 9).unwrap();
        let poe = FusionModel::new(&ExperimentConfig { fusion: Fusion::Poe, ..base.clone() }, &small_dims(&ds), 9).unwrap();
        let batch = BatchInputs::from_dataset(&ds, &(0..ds.len()).collect::<Vec<_>>(), &[Modality::Text]).unwrap();
        let a = concat.predict_log_probs(&batch).unwrap();
        let b = poe.predict_log_probs(&batch).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_modality_is_reported() {
        let mut dims = BTreeMap::new();
        dims.insert(Modality::Text, 3);
        let err = FusionModel::new(&ExperimentConfig::default(), &dims, 0).unwrap_err();
        assert!(err.to_string().contains("speech"), "{err}");
    }

    #[test]
    fn cl_off_ignores_lambda() {
        let ds = tiny_dataset();
        let cfg = small(Fusion::Concat, false);
        let m = FusionModel::new(&cfg, &small_dims(&ds), 0).unwrap();
        let batch = BatchInputs::from_dataset(&ds, &[0, 1, 2, 3], &cfg.effective_modalities()).unwrap();
        let s = m.loss_and_grads(&batch).unwrap();
        assert_eq!(s.supcon, 0.0);
        assert_eq!(s.total, s.ce);
    }
}
